//! Numerical verification of the training gradients.
//!
//! Two levels of finite-difference checking, both central differences:
//!
//! * [`gradcheck_objective`] — the assembled stage objectives (every loss
//!   term, wired exactly as in training, gradient-stopped paths included)
//!   over their direct tensor inputs: pooled representations, per-layer
//!   hidden states, and head parameters as independent leaves. The graph is
//!   shallow, so finite differences resolve every coordinate sharply and the
//!   check holds to a tight tolerance.
//! * [`gradcheck_stage`] — the same objectives evaluated through the full
//!   encoder (embeddings, attention, layer norms, feed-forward blocks), so
//!   every parameter a training step updates sits in the checked graph.
//!
//! The achievable tolerance differs between the two on purpose. A central
//! difference of a loss `L` carries absolute noise around
//! `ulp(|L|) / (2·eps)` from cancellation in `f(θ+eps) − f(θ−eps)`; with
//! `eps = 1e-5` and `|L| ≈ 10` that is about `1e-10`. Deep graphs generically
//! contain a few parameter coordinates whose true gradient is itself below
//! `1e-6` (incidental cancellation across positions and samples), and on
//! those coordinates the quotient's noise — not the analytic gradient —
//! dominates the relative error. The objective-level check has no such
//! coordinates and pins correctness tightly; the through-encoder check pins
//! end-to-end flow at the tolerance the arithmetic supports.

use super::{
    compute_teacher_signals, prepare_batch, student_batch_loss, teacher_batch_loss, ModelKind,
    StudentModel, TeacherModel, TrainerError,
};
use crate::corpus::Sample;
use crate::encoder::{EncoderConfig, TokenizeMode, Vocab};
use crate::losses::{
    isl_loss, kd_loss, nce_loss, scl_loss_anchored, student_logits, student_total, teacher_logits,
    teacher_total, HeadParams, LossSwitches,
};
use crate::tensor::{grad_check, GradCheckReport, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Probe step for the finite-difference quotient.
pub const GRADCHECK_EPS: f64 = 1e-5;
/// Maximum accepted relative error for the objective-level check.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Maximum accepted relative error for the through-encoder check; see the
/// module docs for why a deep graph cannot be held to [`GRADCHECK_TOL`].
pub const GRADCHECK_STAGE_TOL: f64 = 1e-2;

fn fixture_encoder() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 0,
        hidden_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 16,
        max_seq_len: 16,
        dropout_rate: 0.0,
    }
}

fn fixture_vocab() -> Result<Vocab, TrainerError> {
    Ok(Vocab::build(&["aa bb cc dd ee"], TokenizeMode::Whitespace)?)
}

fn fixture_samples() -> Vec<Sample> {
    let mk = |context: &[&str], response: &str, label: u8| Sample {
        dialogue_id: "fixture".to_string(),
        turn: context.len() + 1,
        context: context.iter().map(|s| s.to_string()).collect(),
        response: response.to_string(),
        label,
        topic_count: 2,
        prev_topic_turns: 2,
    };
    vec![
        mk(&["aa bb cc", "bb cc"], "dd ee", 1),
        mk(&["dd ee", "ee dd ee"], "dd dd", 0),
        mk(&["aa cc", "cc aa bb"], "bb aa", 0),
        mk(&["bb bb", "dd ee dd"], "aa cc", 1),
    ]
}

fn check_err<E: std::fmt::Display>(e: E) -> TensorError {
    TensorError::Contract {
        op: "stage-loss",
        msg: e.to_string(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, 0.5).expect("constant stddev is valid");
    (0..rows * cols).map(|_| dist.sample(rng)).collect()
}

fn leaf(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::param(&[rows, cols], random_matrix(rng, rows, cols))
        .expect("shape matches value count")
}

fn constant(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_values(&[rows, cols], random_matrix(rng, rows, cols))
        .expect("shape matches value count")
}

/// Checks the assembled objective of one stage over its direct tensor
/// inputs (batch 4, dimension 8, three hidden-state layers per sample),
/// with the head parameters and every representation as independent leaves.
pub fn gradcheck_objective(
    kind: ModelKind,
    seed: u64,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TrainerError> {
    const N: usize = 4;
    const D: usize = 8;
    const STATE_LAYERS: usize = 3; // embeddings + two encoder layers
    const T: usize = 3;
    let labels: [u8; N] = [1, 0, 0, 1];
    let temperature = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let report = match kind {
        ModelKind::Teacher => {
            let context = leaf(&mut rng, N, D);
            let response = leaf(&mut rng, N, D);
            let full = leaf(&mut rng, N, D);
            let head = HeadParams::init_teacher(D, &mut rng, true)?;
            let mut params = vec![
                ("context_pooled".to_string(), context.clone()),
                ("response_pooled".to_string(), response.clone()),
                ("full_pooled".to_string(), full.clone()),
            ];
            params.extend(head.named_params("head"));
            grad_check(
                || {
                    let logits =
                        teacher_logits(&context, &response, &full, &head).map_err(check_err)?;
                    let nce = nce_loss(&logits, &labels).map_err(check_err)?;
                    let isl = isl_loss(&context, &full, temperature).map_err(check_err)?;
                    let (total, _) = teacher_total(&nce, Some(&isl)).map_err(check_err)?;
                    Ok(total)
                },
                &params,
                eps,
                tolerance,
            )?
        }
        ModelKind::Student => {
            let context = leaf(&mut rng, N, D);
            let student_states: Vec<Vec<Tensor>> = (0..N)
                .map(|_| (0..STATE_LAYERS).map(|_| leaf(&mut rng, T, D)).collect())
                .collect();
            // Frozen teacher-side inputs: per-layer states for distillation
            // and the pooled full-dialogue rows the alignment term targets.
            let teacher_states: Vec<Vec<Tensor>> = (0..N)
                .map(|_| {
                    (0..STATE_LAYERS)
                        .map(|_| constant(&mut rng, T, D))
                        .collect()
                })
                .collect();
            let teacher_full = constant(&mut rng, N, D);
            let head = HeadParams::init_student(D, &mut rng, true)?;
            // The contrastive term's detached half, pinned at the unperturbed
            // values so the numeric probes leave it fixed.
            let anchor = context.stop_gradient();
            let mut params = vec![("context_pooled".to_string(), context.clone())];
            for (i, states) in student_states.iter().enumerate() {
                for (l, state) in states.iter().enumerate() {
                    params.push((format!("sample{i}.state{l}"), state.clone()));
                }
            }
            params.extend(head.named_params("head"));
            grad_check(
                || {
                    let logits = student_logits(&context, &head).map_err(check_err)?;
                    let nce = nce_loss(&logits, &labels).map_err(check_err)?;
                    let mut kd_sum: Option<Tensor> = None;
                    for (t_states, s_states) in teacher_states.iter().zip(&student_states) {
                        let per_sample = kd_loss(t_states, s_states).map_err(check_err)?;
                        kd_sum = Some(match kd_sum {
                            Some(acc) => acc.add(&per_sample)?,
                            None => per_sample,
                        });
                    }
                    let kd = kd_sum.expect("batch is nonempty").scale(1.0 / N as f64);
                    let isl = isl_loss(&context, &teacher_full, temperature).map_err(check_err)?;
                    let scl = scl_loss_anchored(&context, &anchor, &labels, temperature)
                        .map_err(check_err)?;
                    let (total, _) = student_total(&nce, Some(&kd), Some(&isl), Some(&scl))
                        .map_err(check_err)?;
                    Ok(total)
                },
                &params,
                eps,
                tolerance,
            )?
        }
    };
    Ok(report)
}

/// Checks the full objective of one stage at the given seed (all loss terms
/// enabled) with the encoder in the differentiated graph; the returned
/// report carries the worst coordinate found.
pub fn gradcheck_stage(
    kind: ModelKind,
    seed: u64,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TrainerError> {
    gradcheck_stage_with(kind, seed, eps, tolerance, LossSwitches::default())
}

/// [`gradcheck_stage`] with a custom set of loss terms, for narrowing down
/// which term a failure comes from.
pub fn gradcheck_stage_with(
    kind: ModelKind,
    seed: u64,
    eps: f64,
    tolerance: f64,
    switches: LossSwitches,
) -> Result<GradCheckReport, TrainerError> {
    let temperature = 1.0;
    let vocab = fixture_vocab()?;
    let config = fixture_encoder();
    let samples = fixture_samples();
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = prepare_batch(&refs, &vocab, TokenizeMode::Whitespace, config.max_seq_len)?;

    let report = match kind {
        ModelKind::Teacher => {
            let model =
                TeacherModel::init(vocab, TokenizeMode::Whitespace, &config, &mut rng, true)?;
            let params = model.named_params();
            grad_check(
                || {
                    teacher_batch_loss(&model, &batch, &switches, temperature, None)
                        .map(|(total, _)| total)
                        .map_err(check_err)
                },
                &params,
                eps,
                tolerance,
            )?
        }
        ModelKind::Student => {
            // The teacher is a frozen constant here, exactly as in training;
            // its signals are computed once and reused by every probe.
            let teacher =
                TeacherModel::init(vocab.clone(), TokenizeMode::Whitespace, &config, &mut rng, false)?;
            let signals = compute_teacher_signals(&teacher, &batch, &switches)?;
            let model =
                StudentModel::init(vocab, TokenizeMode::Whitespace, &config, &mut rng, true)?;
            let params = model.named_params();
            // The contrastive term detaches half of its input; a numeric
            // probe must hold that half at the unperturbed parameters, so it
            // is snapshotted here rather than recomputed inside the closure.
            let scl_anchor = if switches.scl {
                let (h0, _) = super::encode_stacked(&model.encoder, &batch.context_ids, None, false)?;
                Some(h0.stop_gradient())
            } else {
                None
            };
            grad_check(
                || {
                    student_batch_loss(
                        &model,
                        &batch,
                        &signals,
                        &switches,
                        temperature,
                        scl_anchor.as_ref(),
                        None,
                    )
                    .map(|(total, _)| total)
                    .map_err(check_err)
                },
                &params,
                eps,
                tolerance,
            )?
        }
    };
    Ok(report)
}
