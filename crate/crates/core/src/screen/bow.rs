//! Hashed bag-of-words features over a patient's merged notes.

use sha2::{Digest, Sha256};

/// Number of hash bins.
pub const BOW_DIM: usize = 4096;

fn bin(token: &str) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) % BOW_DIM as u64) as usize
}

/// Lowercases, splits on non-alphanumerics and returns relative term
/// frequencies per hash bin.
pub fn bow_vector<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
    let mut v = vec![0.0; BOW_DIM];
    let mut total = 0usize;
    for text in texts {
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[bin(token)] += 1.0;
            total += 1;
        }
    }
    if total > 0 {
        for x in &mut v {
            *x /= total as f64;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_and_normalization() {
        let a = bow_vector(["Sad, SAD day."]);
        let b = bow_vector(["sad", "sad day"]);
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a[bin("sad")], 2.0 / 3.0);
        assert!(bow_vector([""]).iter().all(|&x| x == 0.0));
    }
}
