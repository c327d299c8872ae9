//! Chance-corrected inter-annotator agreement.
//!
//! [`kappa`] takes one row of labels per item (one entry per annotator) and
//! dispatches on the annotator count: two annotators use the pairwise
//! marginal correction, three or more use the multi-rater generalization
//! over per-item category counts. Both return 1.0 for perfect agreement and
//! 0.0 when observed agreement equals what label frequencies alone predict.

use super::CorpusError;
use std::collections::BTreeMap;

/// Agreement over `labels[item][annotator]`. Requires at least one item and
/// at least two annotators, with every item labeled by every annotator.
pub fn kappa(labels: &[Vec<u8>]) -> Result<f64, CorpusError> {
    if labels.is_empty() {
        return Err(CorpusError::Agreement("no items to compare".to_string()));
    }
    let m = labels[0].len();
    if m < 2 {
        return Err(CorpusError::Agreement(format!(
            "need at least 2 annotators, got {m}"
        )));
    }
    for (i, row) in labels.iter().enumerate() {
        if row.len() != m {
            return Err(CorpusError::Agreement(format!(
                "item {} has {} labels but item 1 has {m}",
                i + 1,
                row.len()
            )));
        }
    }
    if m == 2 {
        let a: Vec<u8> = labels.iter().map(|r| r[0]).collect();
        let b: Vec<u8> = labels.iter().map(|r| r[1]).collect();
        Ok(cohen(&a, &b))
    } else {
        Ok(fleiss(labels, m))
    }
}

/// Two-annotator agreement: corrects observed agreement by the product of
/// the two annotators' marginal label distributions.
fn cohen(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;

    let mut freq_a: BTreeMap<u8, f64> = BTreeMap::new();
    let mut freq_b: BTreeMap<u8, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *freq_a.entry(x).or_default() += 1.0;
        *freq_b.entry(y).or_default() += 1.0;
    }
    let expected: f64 = freq_a
        .iter()
        .map(|(cat, ca)| ca / n * freq_b.get(cat).copied().unwrap_or(0.0) / n)
        .sum();

    corrected(observed, expected)
}

/// Multi-rater agreement over per-item category counts: mean pairwise
/// within-item agreement corrected by squared global label frequencies.
fn fleiss(labels: &[Vec<u8>], m: usize) -> f64 {
    let n_items = labels.len() as f64;
    let m_f = m as f64;

    let mut category_totals: BTreeMap<u8, f64> = BTreeMap::new();
    let mut per_item_sum = 0.0;
    for row in labels {
        let mut counts: BTreeMap<u8, f64> = BTreeMap::new();
        for &label in row {
            *counts.entry(label).or_default() += 1.0;
            *category_totals.entry(label).or_default() += 1.0;
        }
        let sum_sq: f64 = counts.values().map(|c| c * c).sum();
        per_item_sum += (sum_sq - m_f) / (m_f * (m_f - 1.0));
    }
    let observed = per_item_sum / n_items;
    let total = n_items * m_f;
    let expected: f64 = category_totals
        .values()
        .map(|c| (c / total) * (c / total))
        .sum();

    corrected(observed, expected)
}

/// (observed - expected) / (1 - expected), with the degenerate all-one-label
/// case (expected = 1, which forces observed = 1) defined as perfect
/// agreement.
fn corrected(observed: f64, expected: f64) -> f64 {
    let denom = 1.0 - expected;
    if denom.abs() < 1e-12 {
        return if observed >= 1.0 - 1e-12 { 1.0 } else { 0.0 };
    }
    (observed - expected) / denom
}
