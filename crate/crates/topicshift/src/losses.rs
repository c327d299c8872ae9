//! Classification heads and the four training losses.
//!
//! The teacher classifies from `[context; response; full-dialogue]` pooled
//! vectors; the student from the context vector alone. On top of plain
//! cross-entropy the student learns from the teacher through:
//!
//! * **kd** — layer-wise mean-squared distillation of hidden states,
//! * **isl** — an in-batch contrastive loss that pulls a source
//!   representation toward its own full-dialogue representation and away
//!   from every other sample's,
//! * **scl** — a supervised contrastive loss over the batch where samples
//!   sharing a shift label attract each other.
//!
//! Both contrastive losses use raw dot products; an optional temperature
//! divides the similarities (1.0 leaves them untouched). The detached copies
//! (`stop_gradient`) receive exactly zero gradient by construction.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tensor, TensorError, TensorResult};

/// Errors raised by head construction or loss evaluation.
#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("contrastive losses need a batch of at least 2, got {n}")]
    BatchTooSmall { n: usize },
    #[error("label at index {index} is {value}; shift labels are 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },
    #[error("{context}: got {labels} labels for {rows} rows")]
    LabelCountMismatch {
        context: &'static str,
        labels: usize,
        rows: usize,
    },
    #[error("layer count mismatch: teacher has {teacher} states, student has {student}")]
    LayerCountMismatch { teacher: usize, student: usize },
    #[error("state {index} shape mismatch: teacher {teacher:?}, student {student:?}")]
    StateShapeMismatch {
        index: usize,
        teacher: Vec<usize>,
        student: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A linear classification head: `logits = x W + b`, two output classes.
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    /// Teacher head over the concatenated `[context; response; full]`
    /// vectors: input width `3 * hidden_dim`.
    pub fn init_teacher(hidden_dim: usize, rng: &mut ChaCha8Rng, trainable: bool) -> TensorResult<HeadParams> {
        HeadParams::init(3 * hidden_dim, rng, trainable)
    }

    /// Student head over the context vector alone.
    pub fn init_student(hidden_dim: usize, rng: &mut ChaCha8Rng, trainable: bool) -> TensorResult<HeadParams> {
        HeadParams::init(hidden_dim, rng, trainable)
    }

    fn init(input_dim: usize, rng: &mut ChaCha8Rng, trainable: bool) -> TensorResult<HeadParams> {
        let dist = Normal::new(0.0, 0.02).expect("constant stddev is valid");
        let values: Vec<f64> = (0..input_dim * 2).map(|_| dist.sample(rng)).collect();
        let (weight, bias) = if trainable {
            (
                Tensor::param(&[input_dim, 2], values)?,
                Tensor::param(&[2], vec![0.0, 0.0])?,
            )
        } else {
            (
                Tensor::from_values(&[input_dim, 2], values)?,
                Tensor::from_values(&[2], vec![0.0, 0.0])?,
            )
        };
        Ok(HeadParams { weight, bias })
    }

    pub fn from_arrays(weight: Vec<f64>, bias: Vec<f64>, input_dim: usize, trainable: bool) -> TensorResult<HeadParams> {
        let (weight, bias) = if trainable {
            (
                Tensor::param(&[input_dim, 2], weight)?,
                Tensor::param(&[2], bias)?,
            )
        } else {
            (
                Tensor::from_values(&[input_dim, 2], weight)?,
                Tensor::from_values(&[2], bias)?,
            )
        };
        Ok(HeadParams { weight, bias })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

/// Teacher logits from the three pooled representations (all `[n, d]`).
pub fn teacher_logits(
    context: &Tensor,
    response: &Tensor,
    full: &Tensor,
    head: &HeadParams,
) -> TensorResult<Tensor> {
    let joined = Tensor::concat_cols(&[context, response, full])?;
    joined.matmul(&head.weight)?.add_bias(&head.bias)
}

/// Student logits from the context representation alone (`[n, d]`).
pub fn student_logits(context: &Tensor, head: &HeadParams) -> TensorResult<Tensor> {
    context.matmul(&head.weight)?.add_bias(&head.bias)
}

fn check_labels(labels: &[u8], rows: usize, context: &'static str) -> Result<(), LossError> {
    if labels.len() != rows {
        return Err(LossError::LabelCountMismatch {
            context,
            labels: labels.len(),
            rows,
        });
    }
    for (index, &value) in labels.iter().enumerate() {
        if value > 1 {
            return Err(LossError::NonBinaryLabel { index, value });
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy of `[n, 2]` logits against binary labels.
pub fn nce_loss(logits: &Tensor, labels: &[u8]) -> Result<Tensor, LossError> {
    let (n, c) = logits.dims2("nce_loss")?;
    if c != 2 {
        return Err(LossError::Tensor(TensorError::Contract {
            op: "nce_loss",
            msg: format!("expected two-class logits, got {c} columns"),
        }));
    }
    check_labels(labels, n, "nce_loss")?;
    let mut onehot = vec![0.0; n * 2];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * 2 + y as usize] = 1.0;
    }
    let onehot = Tensor::from_values(&[n, 2], onehot)?;
    let picked = logits.log_softmax_rows()?.mul(&onehot)?.sum();
    Ok(picked.scale(-1.0 / n as f64))
}

/// Layer-wise distillation: mean over states of the mean squared difference
/// across every position and dimension. Teacher states are detached, so no
/// gradient ever reaches the teacher through this loss.
pub fn kd_loss(teacher_states: &[Tensor], student_states: &[Tensor]) -> Result<Tensor, LossError> {
    if teacher_states.len() != student_states.len() || teacher_states.is_empty() {
        return Err(LossError::LayerCountMismatch {
            teacher: teacher_states.len(),
            student: student_states.len(),
        });
    }
    let mut acc: Option<Tensor> = None;
    for (index, (t, s)) in teacher_states.iter().zip(student_states).enumerate() {
        if t.shape() != s.shape() {
            return Err(LossError::StateShapeMismatch {
                index,
                teacher: t.shape().to_vec(),
                student: s.shape().to_vec(),
            });
        }
        let diff = t.stop_gradient().sub(s)?;
        let layer_mse = diff.mul(&diff)?.mean();
        acc = Some(match acc {
            Some(total) => total.add(&layer_mse)?,
            None => layer_mse,
        });
    }
    Ok(acc.expect("at least one state").scale(1.0 / teacher_states.len() as f64))
}

/// In-batch contrastive alignment between two `[n, d]` representations.
///
/// Row `i` of `source` is pulled toward row `i` of `target` and pushed away
/// from every other target row:
/// `loss = Σ_i [ logΣ_{j≠i} exp(s_i·t_j / τ) − s_i·t_i / τ ]`.
/// Lower is better; with strong alignment the loss goes negative.
pub fn isl_loss(source: &Tensor, target: &Tensor, temperature: f64) -> Result<Tensor, LossError> {
    let (n, d) = source.dims2("isl_loss")?;
    let (n2, d2) = target.dims2("isl_loss")?;
    if n != n2 || d != d2 {
        return Err(LossError::Tensor(TensorError::IncompatibleShapes {
            op: "isl_loss",
            left: source.shape().to_vec(),
            right: target.shape().to_vec(),
        }));
    }
    if n < 2 {
        return Err(LossError::BatchTooSmall { n });
    }
    let sim = source.matmul(&target.transpose()?)?.scale(1.0 / temperature);

    let mut eye = vec![0.0; n * n];
    let mut off_diag = vec![true; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
        off_diag[i * n + i] = false;
    }
    let eye = Tensor::from_values(&[n, n], eye)?;
    let aligned = sim.mul(&eye)?.sum();
    let spread = sim.log_sum_exp_rows_masked(&off_diag)?.sum();
    Ok(spread.sub(&aligned)?)
}

/// Supervised contrastive loss over a batch of `[n, d]` representations with
/// binary labels.
///
/// The batch is doubled with a detached copy of itself (`2n` rows, labels
/// repeated) so every row has at least one positive; each row then attracts
/// the rows sharing its label and repels all others:
/// `loss = Σ_i (−1/|P(i)|) Σ_{p∈P(i)} log( exp(u_i·u_p/τ) / Σ_{a≠i} exp(u_i·u_a/τ) )`.
pub fn scl_loss(h: &Tensor, labels: &[u8], temperature: f64) -> Result<Tensor, LossError> {
    scl_loss_anchored(h, h, labels, temperature)
}

/// [`scl_loss`] with the detached half supplied by the caller; `anchor` is
/// gradient-stopped here regardless, so it never carries gradient.
///
/// Training passes `h` itself (via [`scl_loss`]), re-detaching fresh values
/// each step. Finite-difference verification instead passes a snapshot taken
/// at the unperturbed point: a numeric probe of the loss must not move the
/// detached half, precisely because the analytic gradient (by construction)
/// never flows through it — the gradients being compared are identical at
/// the base point either way.
pub fn scl_loss_anchored(
    h: &Tensor,
    anchor: &Tensor,
    labels: &[u8],
    temperature: f64,
) -> Result<Tensor, LossError> {
    let (n, _d) = h.dims2("scl_loss")?;
    check_labels(labels, n, "scl_loss")?;
    if n == 0 {
        return Err(LossError::BatchTooSmall { n });
    }
    if anchor.shape() != h.shape() {
        return Err(LossError::Tensor(TensorError::IncompatibleShapes {
            op: "scl_loss",
            left: h.shape().to_vec(),
            right: anchor.shape().to_vec(),
        }));
    }
    let detached = anchor.stop_gradient();
    let u = Tensor::concat_rows(&[h, &detached])?;
    let m = 2 * n;
    let sim = u.matmul(&u.transpose()?)?.scale(1.0 / temperature);

    let doubled: Vec<u8> = labels.iter().chain(labels.iter()).copied().collect();
    let mut off_diag = vec![true; m * m];
    for i in 0..m {
        off_diag[i * m + i] = false;
    }
    // Positive-pair weights: 1/|P(i)| on same-label pairs, zero elsewhere.
    let mut pos_weights = vec![0.0; m * m];
    for i in 0..m {
        let count = (0..m)
            .filter(|&j| j != i && doubled[j] == doubled[i])
            .count();
        debug_assert!(count >= 1, "the detached copy guarantees a positive");
        for j in 0..m {
            if j != i && doubled[j] == doubled[i] {
                pos_weights[i * m + j] = 1.0 / count as f64;
            }
        }
    }
    let pos_weights = Tensor::from_values(&[m, m], pos_weights)?;
    let attracted = sim.mul(&pos_weights)?.sum();
    let spread = sim.log_sum_exp_rows_masked(&off_diag)?.sum();
    Ok(spread.sub(&attracted)?)
}

/// Which optional loss terms are active. Defaults to everything on; ablation
/// runs switch individual terms off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossSwitches {
    pub kd: bool,
    pub isl_teacher: bool,
    pub isl_student: bool,
    pub scl: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches {
            kd: true,
            isl_teacher: true,
            isl_student: true,
            scl: true,
        }
    }
}

impl LossSwitches {
    /// True when any in-batch contrastive term is active for the given stage,
    /// which forces batches of at least two samples.
    pub fn teacher_needs_batch(&self) -> bool {
        self.isl_teacher
    }

    pub fn student_needs_batch(&self) -> bool {
        self.isl_student || self.scl
    }
}

/// Scalar values of one loss evaluation; absent terms stay `None` (serialized
/// as `null` in the step logs).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub nce: f64,
    pub kd: Option<f64>,
    pub isl: Option<f64>,
    pub scl: Option<f64>,
    pub total: f64,
}

/// Teacher objective: cross-entropy plus (optionally) the contrastive
/// alignment term, equally weighted.
pub fn teacher_total(nce: &Tensor, isl: Option<&Tensor>) -> TensorResult<(Tensor, LossReport)> {
    let mut total = nce.clone();
    if let Some(isl) = isl {
        total = total.add(isl)?;
    }
    let report = LossReport {
        nce: nce.item(),
        kd: None,
        isl: isl.map(Tensor::item),
        scl: None,
        total: total.item(),
    };
    Ok((total, report))
}

/// Student objective: cross-entropy plus every enabled transfer term, equally
/// weighted. Terms are added in a fixed order (nce, kd, isl, scl) so the
/// reported total is reproducible bit for bit.
pub fn student_total(
    nce: &Tensor,
    kd: Option<&Tensor>,
    isl: Option<&Tensor>,
    scl: Option<&Tensor>,
) -> TensorResult<(Tensor, LossReport)> {
    let mut total = nce.clone();
    for term in [kd, isl, scl].into_iter().flatten() {
        total = total.add(term)?;
    }
    let report = LossReport {
        nce: nce.item(),
        kd: kd.map(Tensor::item),
        isl: isl.map(Tensor::item),
        scl: scl.map(Tensor::item),
        total: total.item(),
    };
    Ok((total, report))
}
