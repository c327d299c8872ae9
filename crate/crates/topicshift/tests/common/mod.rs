//! Shared helpers for the integration tests: brute-force scalar oracles for
//! every loss, written as plain nested loops over `Vec<Vec<f64>>` matrices.
//!
//! Nothing here touches the tensor graph beyond converting inputs, so the
//! production implementations are checked against genuinely independent
//! arithmetic. Keep these naive — clarity over speed.
#![allow(dead_code)] // each test binary uses a different subset
#![allow(clippy::needless_range_loop)] // index loops ARE the point here

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use topicshift::tensor::Tensor;

pub type Matrix = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable log-sum-exp over a non-empty slice.
pub fn lse(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy of `[n, 2]` logits against binary labels.
pub fn oracle_nce(logits: &Matrix, labels: &[u8]) -> f64 {
    assert_eq!(logits.len(), labels.len());
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        total += lse(row) - row[y as usize];
    }
    total / logits.len() as f64
}

/// Mean over layers of the mean squared difference across every element.
pub fn oracle_kd(teacher_layers: &[Matrix], student_layers: &[Matrix]) -> f64 {
    assert_eq!(teacher_layers.len(), student_layers.len());
    let mut total = 0.0;
    for (t, s) in teacher_layers.iter().zip(student_layers) {
        let mut sq = 0.0;
        let mut count = 0usize;
        for (tr, sr) in t.iter().zip(s) {
            for (a, b) in tr.iter().zip(sr) {
                sq += (a - b) * (a - b);
                count += 1;
            }
        }
        total += sq / count as f64;
    }
    total / teacher_layers.len() as f64
}

/// Row `i` of `source` attracts row `i` of `target` against the rest of the
/// batch: `Σ_i [ logΣ_{j≠i} exp(s_i·t_j/τ) − s_i·t_i/τ ]`.
pub fn oracle_isl(source: &Matrix, target: &Matrix, tau: f64) -> f64 {
    let n = source.len();
    assert!(n >= 2);
    let mut total = 0.0;
    for i in 0..n {
        let mut others = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j != i {
                others.push(dot(&source[i], &target[j]) / tau);
            }
        }
        total += lse(&others) - dot(&source[i], &target[i]) / tau;
    }
    total
}

/// Supervised contrastive loss over the batch doubled with a copy of itself:
/// `Σ_i [ logΣ_{a≠i} exp(u_i·u_a/τ) − (1/|P(i)|) Σ_{p∈P(i)} u_i·u_p/τ ]`
/// where `P(i)` is every other row sharing row `i`'s label.
pub fn oracle_scl(h: &Matrix, labels: &[u8], tau: f64) -> f64 {
    let rows: Matrix = h.iter().chain(h.iter()).cloned().collect();
    let tags: Vec<u8> = labels.iter().chain(labels.iter()).copied().collect();
    let m = rows.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut others = Vec::with_capacity(m - 1);
        let mut positives = Vec::new();
        for j in 0..m {
            if j == i {
                continue;
            }
            let sim = dot(&rows[i], &rows[j]) / tau;
            others.push(sim);
            if tags[j] == tags[i] {
                positives.push(sim);
            }
        }
        assert!(!positives.is_empty(), "the copy is always a positive");
        let attracted = positives.iter().sum::<f64>() / positives.len() as f64;
        total += lse(&others) - attracted;
    }
    total
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("constant stddev is valid");
    (0..rows)
        .map(|_| (0..cols).map(|_| dist.sample(rng)).collect())
        .collect()
}

pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn tensor_from(m: &Matrix) -> Tensor {
    Tensor::from_values(&[m.len(), m[0].len()], flatten(m)).expect("shape matches value count")
}

/// Asserts two scalars agree to `tol` absolutely, with a readable message.
pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: implementation {actual} vs oracle {expected} (diff {:.3e}, tol {tol:.1e})",
        (actual - expected).abs()
    );
}
