use std::path::PathBuf;

use symscreen_core::extract::{build_chat_prompt, build_entailment_prompt, canonical_shots, SYSTEM_PROMPT};
use symscreen_core::taxonomy::taxonomy;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn fixture(name: &str) -> String {
    golden(name).trim_end_matches('\n').to_string()
}

#[test]
fn chat_prompt_matches_golden() {
    let cat = taxonomy().get("not_going_to_school").unwrap();
    let shots = canonical_shots(&cat.category_id).unwrap();
    let prompt = build_chat_prompt(cat, &fixture("note_school.txt"), &shots).unwrap();
    let rendered = serde_json::to_string_pretty(&prompt).unwrap() + "\n";
    assert_eq!(rendered, golden("chat_not_going_to_school.json"));
}

#[test]
fn entailment_prompt_matches_golden() {
    let cat = taxonomy().get("no_motivation").unwrap();
    let rendered = build_entailment_prompt(cat, &fixture("note_motivation.txt")) + "\n";
    assert_eq!(rendered, golden("entailment_no_motivation.txt"));
}

#[test]
fn golden_exemplar_turns_are_verbatim() {
    let chat = golden("chat_not_going_to_school.json");
    for phrase in [
        "You are a medical AI assistant.",
        "Chez Dias is 15 y.o. Latina woman. Chief Complaints: SoB, Overeating, Acid Reflux.",
        "Jeff has not been able to go out of house due to his fear of crashing during an episode.",
        "Yes: 'He had to be home-schooled this year.'",
        "Call the Hospital to find out the best ways of taking care of your teenager or visit our website.",
    ] {
        assert!(chat.contains(phrase), "missing {phrase:?}");
    }
    let entail = golden("entailment_no_motivation.txt");
    assert!(entail.contains("Does the premise entail the hypothesis?"));
    assert!(entail.contains("The patient is not taking proper care of themselves and their health."));
    assert_eq!(SYSTEM_PROMPT, "You are a medical AI assistant.");
}

#[test]
fn every_category_has_a_three_shot_prompt() {
    for cat in taxonomy().categories() {
        let shots = canonical_shots(&cat.category_id).unwrap();
        let prompt = build_chat_prompt(cat, "Seen for a cough.", &shots).unwrap();
        assert_eq!(prompt.messages.len(), 8);
        assert!(prompt.messages[7].content.ends_with(&cat.chat_query));
    }
}
