//! Topic shift detection for two-party dialogues.
//!
//! A dialogue is a sequence of alternating utterances; after each turn we ask
//! whether the *next* turn starts a new topic. Two models answer that
//! question:
//!
//! * a **teacher** that sees the context, the response, and their
//!   concatenation (so it looks at the answer before judging), and
//! * a **student** that sees only the context and must predict the shift
//!   before the response arrives.
//!
//! The student is trained against the teacher with layer-wise knowledge
//! distillation plus two contrastive objectives (utterance-level and
//! sample-level), all built on the small reverse-mode autodiff engine in
//! [`tensor`].
//!
//! Module map:
//! * [`tensor`] — dense f64 tensors, reverse-mode autodiff, gradient checking
//! * [`encoder`] — vocabulary, tokenization, and a pre-norm transformer encoder
//! * [`losses`] — classification heads and the four training losses
//! * [`corpus`] — JSON-lines corpus IO, validation, pair extraction, stats,
//!   agreement coefficients, and a synthetic corpus generator
//! * [`trainer`] — Adam, the two-stage training loops, evaluation, checkpoints

pub mod corpus;
pub mod encoder;
pub mod losses;
pub mod tensor;
pub mod trainer;
