//! Mann-Whitney AUC-ROC with exact tie handling.

use super::ScreenError;

/// AUC as an exact fraction `(numerator, denominator)` where the numerator
/// counts each winning (positive, negative) pair twice and each tie once.
pub fn auc_fraction(scores: &[f64], labels: &[bool]) -> Result<(u128, u128), ScreenError> {
    if scores.len() != labels.len() {
        return Err(ScreenError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ScreenError::Shape("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ScreenError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut numerator = 0u128;
    let mut neg_below = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        numerator += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok((numerator, 2 * n_pos * n_neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, ScreenError> {
    let (num, den) = auc_fraction(scores, labels)?;
    Ok(num as f64 / den as f64)
}
