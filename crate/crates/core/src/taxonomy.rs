//! The symptom taxonomy: 16 note-level categories mapped onto PHQ-9 questions.
//!
//! The canonical table ships as `data/taxonomy.toml` and is embedded at build
//! time. Phrasings and keyword sets are configuration; editing the data file
//! changes them without touching code.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_TOML: &str = include_str!("../data/taxonomy.toml");

/// Number of categories in a valid taxonomy.
pub const CATEGORY_COUNT: usize = 16;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown category id `{0}`")]
    UnknownCategory(String),
    #[error("invalid taxonomy file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid taxonomy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhqQuestion {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
    Q7,
    Q8,
    Q9,
}

impl PhqQuestion {
    pub const ALL: [PhqQuestion; 9] = [
        PhqQuestion::Q1,
        PhqQuestion::Q2,
        PhqQuestion::Q3,
        PhqQuestion::Q4,
        PhqQuestion::Q5,
        PhqQuestion::Q6,
        PhqQuestion::Q7,
        PhqQuestion::Q8,
        PhqQuestion::Q9,
    ];
}

impl fmt::Display for PhqQuestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Direction of change relative to the patient's norm. Metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
    Both,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Increase => "↑",
            Direction::Decrease => "↓",
            Direction::Both => "↓↑",
            Direction::NotApplicable => "-",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomCategory {
    pub category_id: String,
    pub display_name: String,
    pub phq_question: PhqQuestion,
    pub direction: Direction,
    pub bdi_items: Vec<u8>,
    /// Interrogative form used by chat backends.
    pub chat_query: String,
    /// Declarative form used by entailment backends.
    pub hypothesis: String,
    /// Baseline word sets; a note matches if all words of any one set occur.
    pub keywords: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    #[serde(rename = "category")]
    categories: Vec<SymptomCategory>,
}

/// The built-in taxonomy in canonical order.
pub fn taxonomy() -> &'static Taxonomy {
    static BUILTIN: OnceLock<Taxonomy> = OnceLock::new();
    BUILTIN.get_or_init(|| Taxonomy::from_toml(BUILTIN_TOML).expect("built-in taxonomy is valid"))
}

impl Taxonomy {
    pub fn from_toml(source: &str) -> Result<Self, TaxonomyError> {
        let taxonomy: Taxonomy = toml::from_str(source)?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn categories(&self) -> &[SymptomCategory] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, category_id: &str) -> Option<&SymptomCategory> {
        self.categories.iter().find(|c| c.category_id == category_id)
    }

    pub fn index_of(&self, category_id: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.category_id == category_id)
    }

    pub fn require(&self, category_id: &str) -> Result<&SymptomCategory, TaxonomyError> {
        self.get(category_id).ok_or_else(|| TaxonomyError::UnknownCategory(category_id.to_string()))
    }

    pub fn keywords_for(&self, category_id: &str) -> Result<&[Vec<String>], TaxonomyError> {
        Ok(&self.require(category_id)?.keywords)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.category_id.as_str())
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        let invalid = |msg: String| Err(TaxonomyError::Invalid(msg));
        if self.categories.len() != CATEGORY_COUNT {
            return invalid(format!("expected {CATEGORY_COUNT} categories, found {}", self.categories.len()));
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            let id = &c.category_id;
            if !seen.insert(id.as_str()) {
                return invalid(format!("duplicate category id `{id}`"));
            }
            let snake = !id.is_empty()
                && id.chars().all(|ch| ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == '_')
                && !id.starts_with('_')
                && !id.ends_with('_');
            if !snake {
                return invalid(format!("category id `{id}` is not snake_case"));
            }
            if c.bdi_items.iter().any(|&i| !(1..=21).contains(&i)) {
                return invalid(format!("`{id}`: BDI items must lie in 1..=21"));
            }
            if !is_single_question(&c.chat_query) {
                return invalid(format!("`{id}`: chat_query must be a single question"));
            }
            if !is_single_statement(&c.hypothesis) {
                return invalid(format!("`{id}`: hypothesis must be a single declarative sentence"));
            }
            if c.keywords.is_empty() {
                return invalid(format!("`{id}`: at least one keyword set required"));
            }
            for set in &c.keywords {
                if set.is_empty() {
                    return invalid(format!("`{id}`: empty keyword set"));
                }
                for word in set {
                    let ok =
                        !word.is_empty() && word.chars().all(crate::text::is_word_char) && word.to_lowercase() == *word;
                    if !ok {
                        return invalid(format!("`{id}`: keyword `{word}` must be one lowercase word"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sentence_terminators(s: &str) -> usize {
    crate::text::sentences(s).len()
}

fn is_single_question(s: &str) -> bool {
    s.starts_with("Does it contain evidence that ") && s.ends_with('?') && sentence_terminators(s) == 1
}

fn is_single_statement(s: &str) -> bool {
    s.ends_with('.') && !s.contains('?') && sentence_terminators(s) == 1
}
