//! Two-stage training: a response-aware teacher first, then a context-only
//! student that learns from the frozen teacher.
//!
//! The teacher encodes three views of every sample — context, response, and
//! the full context-plus-response sequence — and classifies from their
//! concatenation, optionally with a contrastive term pulling each context
//! representation toward its own full-sequence representation. The student
//! sees only the context; beyond plain cross-entropy it can match the frozen
//! teacher's per-layer context states (distillation), pull its context
//! representation toward the teacher's full-sequence representation
//! (instance alignment), and group same-label representations (supervised
//! contrastive). Every run is deterministic in (config, seed, data).

pub mod adam;
pub mod checkpoint;
pub mod eval;
pub mod verify;

use crate::corpus::Sample;
use crate::encoder::{Encoder, EncoderConfig, EncoderError, TokenizeMode, Vocab};
use crate::losses::{
    isl_loss, nce_loss, scl_loss, student_logits, student_total, teacher_logits, teacher_total,
    HeadParams, LossError, LossReport, LossSwitches,
};
use crate::tensor::{Tensor, TensorError};
use adam::{Adam, AdamConfig};
use eval::EvalResult;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("loss became non-finite at step {step}; aborting")]
    NonFiniteLoss { step: usize },
    #[error("no samples to evaluate")]
    EmptySampleSet,
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which of the two models a checkpoint or verification run concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
        })
    }
}

/// Training hyperparameters. Serializable so runs can be driven from a
/// config file; unknown values are rejected by [`TrainConfig::validate_for`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Token budget per encoded sequence (contexts truncate from the left).
    pub max_seq_len: usize,
    pub switches: LossSwitches,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Similarity temperature shared by the contrastive terms.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 6,
            epochs: 20,
            seed: 0,
            max_seq_len: 256,
            switches: LossSwitches::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate_for(&self, kind: ModelKind) -> Result<(), TrainerError> {
        self.adam_config().validate().map_err(TrainerError::Config)?;
        if self.epochs == 0 {
            return Err(TrainerError::Config("epochs must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::Config("batch size must be at least 1".to_string()));
        }
        if self.max_seq_len < 2 {
            return Err(TrainerError::Config(format!(
                "max_seq_len must be at least 2, got {}",
                self.max_seq_len
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(TrainerError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let needs_batch = match kind {
            ModelKind::Teacher => self.switches.teacher_needs_batch(),
            ModelKind::Student => self.switches.student_needs_batch(),
        };
        if needs_batch && self.batch_size < 2 {
            return Err(TrainerError::Config(format!(
                "batch size must be at least 2 while in-batch contrastive terms are enabled \
                 for the {kind} stage"
            )));
        }
        Ok(())
    }
}

// ── Models ──────────────────────────────────────────────────────────────────

/// Response-aware classifier: encoder plus a head over the concatenated
/// context/response/full pooled representations.
pub struct TeacherModel {
    pub tokenize_mode: TokenizeMode,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub head: HeadParams,
}

/// Context-only classifier: encoder plus a head over the context pooled
/// representation.
pub struct StudentModel {
    pub tokenize_mode: TokenizeMode,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub head: HeadParams,
}

fn with_vocab_size(config: &EncoderConfig, vocab: &Vocab) -> EncoderConfig {
    let mut config = config.clone();
    config.vocab_size = vocab.size();
    config
}

fn encoder_from_arrays(
    config: &EncoderConfig,
    arrays: &std::collections::HashMap<String, (Vec<usize>, Vec<f64>)>,
    trainable: bool,
) -> Result<Encoder, EncoderError> {
    Encoder::from_arrays(
        config,
        |name| arrays.get(&format!("encoder.{name}")).map(|(_, data)| data.clone()),
        trainable,
    )
}

fn head_from_arrays(
    arrays: &std::collections::HashMap<String, (Vec<usize>, Vec<f64>)>,
    input_dim: usize,
    trainable: bool,
    stem: &Path,
) -> Result<HeadParams, TrainerError> {
    let fetch = |name: &str| -> Result<Vec<f64>, TrainerError> {
        arrays
            .get(name)
            .map(|(_, data)| data.clone())
            .ok_or_else(|| TrainerError::Checkpoint {
                path: stem.display().to_string(),
                message: format!("missing array '{name}'"),
            })
    };
    HeadParams::from_arrays(fetch("head.weight")?, fetch("head.bias")?, input_dim, trainable)
        .map_err(TrainerError::from)
}

macro_rules! model_common {
    ($Model:ident, $kind:expr, $head_init:ident, $head_width:expr) => {
        impl $Model {
            /// Fresh model; `config.vocab_size` is overridden by the vocabulary.
            pub fn init(
                vocab: Vocab,
                tokenize_mode: TokenizeMode,
                config: &EncoderConfig,
                rng: &mut ChaCha8Rng,
                trainable: bool,
            ) -> Result<$Model, TrainerError> {
                let config = with_vocab_size(config, &vocab);
                let encoder = Encoder::init(&config, rng, trainable)?;
                let head = HeadParams::$head_init(config.hidden_dim, rng, trainable)?;
                Ok($Model {
                    tokenize_mode,
                    vocab,
                    encoder,
                    head,
                })
            }

            /// All trainable arrays, names prefixed `encoder.` / `head.`.
            pub fn named_params(&self) -> Vec<(String, Tensor)> {
                let mut params: Vec<(String, Tensor)> = self
                    .encoder
                    .named_params()
                    .into_iter()
                    .map(|(name, tensor)| (format!("encoder.{name}"), tensor))
                    .collect();
                params.extend(self.head.named_params("head"));
                params
            }

            pub fn save(&self, stem: &Path, train: &TrainConfig) -> Result<(), TrainerError> {
                checkpoint::save_checkpoint(
                    stem,
                    $kind,
                    self.encoder.config(),
                    self.tokenize_mode,
                    train,
                    &self.named_params(),
                    &self.vocab,
                )
            }

            /// Restores a checkpoint; also returns the training config it was
            /// saved with. `trainable` decides whether the restored tensors
            /// accumulate gradients.
            pub fn load(stem: &Path, trainable: bool) -> Result<($Model, TrainConfig), TrainerError> {
                let ck = checkpoint::load_checkpoint(stem)?;
                if ck.manifest.kind != $kind {
                    return Err(TrainerError::Checkpoint {
                        path: stem.display().to_string(),
                        message: format!(
                            "checkpoint holds a {} model, expected a {}",
                            ck.manifest.kind, $kind
                        ),
                    });
                }
                let d = ck.manifest.encoder.hidden_dim;
                let encoder = encoder_from_arrays(&ck.manifest.encoder, &ck.arrays, trainable)?;
                let head = head_from_arrays(&ck.arrays, $head_width(d), trainable, stem)?;
                Ok((
                    $Model {
                        tokenize_mode: ck.manifest.tokenize_mode,
                        vocab: ck.vocab,
                        encoder,
                        head,
                    },
                    ck.manifest.train,
                ))
            }

            /// A gradient-free copy sharing nothing with `self`: its tensors
            /// are plain constants, so backward passes never touch them.
            pub fn frozen_copy(&self) -> Result<$Model, TrainerError> {
                let arrays: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> = self
                    .named_params()
                    .into_iter()
                    .map(|(name, t)| (name, (t.shape().to_vec(), t.data_vec())))
                    .collect();
                let config = self.encoder.config().clone();
                let encoder = encoder_from_arrays(&config, &arrays, false)?;
                let head = head_from_arrays(
                    &arrays,
                    $head_width(config.hidden_dim),
                    false,
                    Path::new("<frozen-copy>"),
                )?;
                Ok($Model {
                    tokenize_mode: self.tokenize_mode,
                    vocab: self.vocab.clone(),
                    encoder,
                    head,
                })
            }
        }
    };
}

model_common!(TeacherModel, ModelKind::Teacher, init_teacher, |d: usize| 3 * d);
model_common!(StudentModel, ModelKind::Student, init_student, |d: usize| d);

// ── Batch preparation and loss assembly ─────────────────────────────────────

/// Token ids for one mini-batch: per sample the context, the response, and
/// the full (context followed by response) sequences, plus the labels.
pub struct Batch {
    pub labels: Vec<u8>,
    pub context_ids: Vec<Vec<usize>>,
    pub response_ids: Vec<Vec<usize>>,
    pub full_ids: Vec<Vec<usize>>,
}

pub fn prepare_batch(
    samples: &[&Sample],
    vocab: &Vocab,
    mode: TokenizeMode,
    max_len: usize,
) -> Result<Batch, TrainerError> {
    let mut batch = Batch {
        labels: Vec::with_capacity(samples.len()),
        context_ids: Vec::with_capacity(samples.len()),
        response_ids: Vec::with_capacity(samples.len()),
        full_ids: Vec::with_capacity(samples.len()),
    };
    for sample in samples {
        let full: Vec<&str> = sample
            .context
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(sample.response.as_str()))
            .collect();
        batch.labels.push(sample.label);
        batch
            .context_ids
            .push(vocab.encode_text(&sample.context, mode, max_len)?);
        batch
            .response_ids
            .push(vocab.encode_text(&[sample.response.as_str()], mode, max_len)?);
        batch.full_ids.push(vocab.encode_text(&full, mode, max_len)?);
    }
    Ok(batch)
}

/// Stacked pooled rows for a batch, with each sequence's per-layer hidden
/// states when they were requested.
type PooledBatch = (Tensor, Option<Vec<Vec<Tensor>>>);

/// Encodes each id sequence and stacks the pooled vectors into `[n, d]`;
/// optionally also returns every sequence's per-layer hidden states.
fn encode_stacked(
    encoder: &Encoder,
    ids_list: &[Vec<usize>],
    mut rng: Option<&mut ChaCha8Rng>,
    want_states: bool,
) -> Result<PooledBatch, TrainerError> {
    let mut pooled = Vec::with_capacity(ids_list.len());
    let mut states = want_states.then(Vec::new);
    for ids in ids_list {
        let output = encoder.encode(ids, rng.as_deref_mut())?;
        pooled.push(output.pooled);
        if let Some(states) = states.as_mut() {
            states.push(output.hidden_states);
        }
    }
    let refs: Vec<&Tensor> = pooled.iter().collect();
    Ok((Tensor::stack_rows(&refs)?, states))
}

/// Teacher objective on one batch: cross-entropy over the three-view logits,
/// plus (when enabled) the contrastive term pulling each context
/// representation toward its own full-sequence representation.
pub fn teacher_batch_loss(
    model: &TeacherModel,
    batch: &Batch,
    switches: &LossSwitches,
    temperature: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, LossReport), TrainerError> {
    let (h_context, _) = encode_stacked(&model.encoder, &batch.context_ids, rng.as_deref_mut(), false)?;
    let (h_response, _) = encode_stacked(&model.encoder, &batch.response_ids, rng.as_deref_mut(), false)?;
    let (h_full, _) = encode_stacked(&model.encoder, &batch.full_ids, rng, false)?;
    let logits = teacher_logits(&h_context, &h_response, &h_full, &model.head)?;
    let nce = nce_loss(&logits, &batch.labels)?;
    let isl = if switches.isl_teacher {
        Some(isl_loss(&h_context, &h_full, temperature)?)
    } else {
        None
    };
    Ok(teacher_total(&nce, isl.as_ref())?)
}

/// What the frozen teacher contributes to a student step: per-layer context
/// states for distillation and gradient-stopped full-sequence rows for the
/// alignment term. Only the parts required by the switches are computed.
pub struct TeacherSignals {
    pub context_states: Option<Vec<Vec<Tensor>>>,
    pub full_pooled: Option<Tensor>,
}

pub fn compute_teacher_signals(
    teacher: &TeacherModel,
    batch: &Batch,
    switches: &LossSwitches,
) -> Result<TeacherSignals, TrainerError> {
    let context_states = if switches.kd {
        let (_, states) = encode_stacked(&teacher.encoder, &batch.context_ids, None, true)?;
        states
    } else {
        None
    };
    let full_pooled = if switches.isl_student {
        let (h_full, _) = encode_stacked(&teacher.encoder, &batch.full_ids, None, false)?;
        Some(h_full.stop_gradient())
    } else {
        None
    };
    Ok(TeacherSignals {
        context_states,
        full_pooled,
    })
}

fn missing_signal(name: &str) -> TrainerError {
    TrainerError::Config(format!(
        "loss switches require teacher {name}, but the signals were computed without them"
    ))
}

/// Student objective on one batch: cross-entropy from the context alone,
/// plus the enabled transfer terms (distillation, alignment, supervised
/// contrastive).
///
/// `scl_anchor` pins the detached half of the contrastive term to a fixed
/// snapshot instead of re-detaching the live representations; training
/// passes `None`, numeric gradient verification passes the representations
/// captured at the unperturbed parameters (see
/// [`scl_loss_anchored`](crate::losses::scl_loss_anchored)).
pub fn student_batch_loss(
    model: &StudentModel,
    batch: &Batch,
    signals: &TeacherSignals,
    switches: &LossSwitches,
    temperature: f64,
    scl_anchor: Option<&Tensor>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, LossReport), TrainerError> {
    let (h_context, student_states) =
        encode_stacked(&model.encoder, &batch.context_ids, rng, switches.kd)?;
    let logits = student_logits(&h_context, &model.head)?;
    let nce = nce_loss(&logits, &batch.labels)?;

    let kd = if switches.kd {
        let teacher_states = signals
            .context_states
            .as_ref()
            .ok_or_else(|| missing_signal("context states"))?;
        let student_states = student_states.expect("requested alongside kd");
        let mut sum: Option<Tensor> = None;
        for (t_states, s_states) in teacher_states.iter().zip(&student_states) {
            let per_sample = crate::losses::kd_loss(t_states, s_states)?;
            sum = Some(match sum {
                Some(acc) => acc.add(&per_sample)?,
                None => per_sample,
            });
        }
        let sum = sum.ok_or_else(|| missing_signal("context states"))?;
        Some(sum.scale(1.0 / teacher_states.len() as f64))
    } else {
        None
    };

    let isl = if switches.isl_student {
        let target = signals
            .full_pooled
            .as_ref()
            .ok_or_else(|| missing_signal("full-sequence representations"))?;
        Some(isl_loss(&h_context, target, temperature)?)
    } else {
        None
    };

    let scl = if switches.scl {
        Some(match scl_anchor {
            Some(anchor) => {
                crate::losses::scl_loss_anchored(&h_context, anchor, &batch.labels, temperature)?
            }
            None => scl_loss(&h_context, &batch.labels, temperature)?,
        })
    } else {
        None
    };

    Ok(student_total(&nce, kd.as_ref(), isl.as_ref(), scl.as_ref())?)
}

// ── Training loop ───────────────────────────────────────────────────────────

/// Step log plus the best validation F1 and the epoch it came from.
type TrainingOutcome = (Vec<StepRecord>, Option<f64>, Option<usize>);

/// One line of the training log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
}

pub struct TrainedTeacher {
    pub model: TeacherModel,
    pub log: Vec<StepRecord>,
    pub best_val_f1: Option<f64>,
    pub best_epoch: Option<usize>,
}

pub struct TrainedStudent {
    pub model: StudentModel,
    pub log: Vec<StepRecord>,
    pub best_val_f1: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Shared epoch/step scaffolding: shuffles, batches, steps the optimizer,
/// logs every step, and keeps the parameter snapshot with the best
/// validation F1 (restored at the end). Mini-batches that shrink below two
/// samples are dropped when in-batch contrastive terms are active.
#[allow(clippy::too_many_arguments)] // private orchestrator; a params struct would only rename the coupling
fn run_training<L, E>(
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    needs_batch: bool,
    params: &[(String, Tensor)],
    rng: &mut ChaCha8Rng,
    mut batch_loss: L,
    mut eval_val: E,
) -> Result<TrainingOutcome, TrainerError>
where
    L: FnMut(&[&Sample], Option<&mut ChaCha8Rng>) -> Result<(Tensor, LossReport), TrainerError>,
    E: FnMut() -> Result<f64, TrainerError>,
{
    if train.is_empty() {
        return Err(TrainerError::EmptyTrainingSet);
    }
    let mut optimizer = Adam::new(params, config.adam_config());
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            if needs_batch && chunk.len() < 2 {
                continue;
            }
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            for (_, p) in params {
                p.zero_grad();
            }
            let (total, report) = batch_loss(&samples, Some(rng))?;
            if !report.total.is_finite() {
                return Err(TrainerError::NonFiniteLoss { step });
            }
            total.backward()?;
            optimizer.step(params);
            log.push(StepRecord {
                step,
                losses: report,
            });
            step += 1;
        }
        if !val.is_empty() {
            let f1 = eval_val()?;
            log::debug!(
                "epoch {epoch}: last step total {:.4}, val f1 {f1:.4}",
                log.last().map_or(f64::NAN, |r| r.losses.total)
            );
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                let snapshot = params.iter().map(|(_, p)| p.data_vec()).collect();
                best = Some((f1, epoch, snapshot));
            }
        }
    }

    // Hand the model back clean: the last step's gradients are stale.
    for (_, p) in params {
        p.zero_grad();
    }

    match best {
        Some((f1, epoch, snapshot)) => {
            for ((_, p), data) in params.iter().zip(&snapshot) {
                p.set_data(data);
            }
            Ok((log, Some(f1), Some(epoch)))
        }
        None => Ok((log, None, None)),
    }
}

/// Trains a fresh teacher. Model selection keeps the epoch snapshot with the
/// best validation F1 (skipped when `val` is empty).
pub fn train_teacher(
    train: &[Sample],
    val: &[Sample],
    vocab: Vocab,
    tokenize_mode: TokenizeMode,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainedTeacher, TrainerError> {
    config.validate_for(ModelKind::Teacher)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = TeacherModel::init(vocab, tokenize_mode, encoder_config, &mut rng, true)?;
    let params = model.named_params();
    let switches = config.switches;
    let (log, best_val_f1, best_epoch) = run_training(
        train,
        val,
        config,
        switches.teacher_needs_batch(),
        &params,
        &mut rng,
        |samples, rng| {
            let batch = prepare_batch(samples, &model.vocab, model.tokenize_mode, config.max_seq_len)?;
            teacher_batch_loss(&model, &batch, &switches, config.temperature, rng)
        },
        || evaluate_model(ModelRef::Teacher(&model), val, config.max_seq_len).map(|r| r.f1),
    )?;
    Ok(TrainedTeacher {
        model,
        log,
        best_val_f1,
        best_epoch,
    })
}

/// Trains a fresh student against a trained teacher. The teacher is frozen
/// for the whole stage: the student works against a gradient-free copy, so
/// no step can move (or even touch) teacher parameters. The student reuses
/// the teacher's vocabulary, tokenize mode, and encoder geometry, which the
/// per-layer distillation term requires.
pub fn train_student(
    train: &[Sample],
    val: &[Sample],
    teacher: &TeacherModel,
    config: &TrainConfig,
) -> Result<TrainedStudent, TrainerError> {
    config.validate_for(ModelKind::Student)?;
    let frozen = teacher.frozen_copy()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = StudentModel::init(
        teacher.vocab.clone(),
        teacher.tokenize_mode,
        teacher.encoder.config(),
        &mut rng,
        true,
    )?;
    let params = model.named_params();
    let switches = config.switches;
    let (log, best_val_f1, best_epoch) = run_training(
        train,
        val,
        config,
        switches.student_needs_batch(),
        &params,
        &mut rng,
        |samples, rng| {
            let batch = prepare_batch(samples, &model.vocab, model.tokenize_mode, config.max_seq_len)?;
            let signals = compute_teacher_signals(&frozen, &batch, &switches)?;
            student_batch_loss(
                &model,
                &batch,
                &signals,
                &switches,
                config.temperature,
                None,
                rng,
            )
        },
        || evaluate_model(ModelRef::Student(&model), val, config.max_seq_len).map(|r| r.f1),
    )?;
    Ok(TrainedStudent {
        model,
        log,
        best_val_f1,
        best_epoch,
    })
}

// ── Inference and evaluation ────────────────────────────────────────────────

#[derive(Clone, Copy)]
pub enum ModelRef<'a> {
    Teacher(&'a TeacherModel),
    Student(&'a StudentModel),
}

/// Binary decision from a `[1, 2]` logit row; ties resolve to 0 (no shift).
fn argmax_binary(row: &[f64]) -> u8 {
    u8::from(row[1] > row[0])
}

/// Predicts one sample with dropout off.
pub fn predict_one(
    model: ModelRef<'_>,
    sample: &Sample,
    max_seq_len: usize,
) -> Result<u8, TrainerError> {
    match model {
        ModelRef::Teacher(teacher) => {
            let batch = prepare_batch(
                &[sample],
                &teacher.vocab,
                teacher.tokenize_mode,
                max_seq_len,
            )?;
            let (h_context, _) = encode_stacked(&teacher.encoder, &batch.context_ids, None, false)?;
            let (h_response, _) =
                encode_stacked(&teacher.encoder, &batch.response_ids, None, false)?;
            let (h_full, _) = encode_stacked(&teacher.encoder, &batch.full_ids, None, false)?;
            let logits = teacher_logits(&h_context, &h_response, &h_full, &teacher.head)?;
            Ok(argmax_binary(&logits.data_vec()))
        }
        ModelRef::Student(student) => {
            let batch = prepare_batch(
                &[sample],
                &student.vocab,
                student.tokenize_mode,
                max_seq_len,
            )?;
            let (h_context, _) = encode_stacked(&student.encoder, &batch.context_ids, None, false)?;
            let logits = student_logits(&h_context, &student.head)?;
            Ok(argmax_binary(&logits.data_vec()))
        }
    }
}

/// Scores every sample with argmax predictions (dropout off) and assembles
/// the full metric report.
pub fn evaluate_model(
    model: ModelRef<'_>,
    samples: &[Sample],
    max_seq_len: usize,
) -> Result<EvalResult, TrainerError> {
    eval::evaluate(samples, |sample| predict_one(model, sample, max_seq_len))
}
