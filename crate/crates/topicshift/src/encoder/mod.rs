//! Pre-norm transformer encoder over token ids.
//!
//! The encoder returns every intermediate hidden state (embedding output plus
//! one per layer) so a student model can be distilled against a teacher layer
//! by layer, and a pooled `[CLS]` vector used by the classification heads and
//! the contrastive losses.
//!
//! Layout per layer: `x + Attn(LN(x))` then `x + FFN(LN(x))` (normalization
//! *before* each sublayer). A final layer norm is applied to the last hidden
//! state, so the pooled vector is always read from a normalized stream.

mod vocab;

pub use vocab::{tokenize, TokenizeMode, Vocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::tensor::{Tensor, TensorError, TensorResult};

const LN_EPS: f64 = 1e-5;
/// Additive score for masked attention keys; large enough that the softmax
/// weight underflows to exactly zero.
const MASK_SCORE: f64 = -1e30;

/// Errors raised while building vocabularies or encoding sequences.
#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("vocabulary build needs a non-empty corpus")]
    EmptyCorpus,
    #[error("max_len {max_len} cannot hold [CLS] plus any content")]
    MaxLenTooSmall { max_len: usize },
    #[error("input of {len} tokens exceeds max_seq_len {max}; truncate before encoding")]
    InputTooLong { len: usize, max: usize },
    #[error("cannot encode an empty id sequence")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },
    #[error("bad encoder config: {0}")]
    Config(String),
    #[error("vocabulary file {path}: {message}")]
    VocabIo { path: String, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architectural hyperparameters. `vocab_size` is normally filled in from the
/// built [`Vocab`] right before the encoder is constructed, so config files
/// may leave it (or any other field) out.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_seq_len: 256,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_size < 4 {
            return Err(EncoderError::Config(format!(
                "vocab_size {} cannot hold the four special tokens",
                self.vocab_size
            )));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.ffn_dim == 0 {
            return Err(EncoderError::Config(
                "hidden_dim, num_layers and ffn_dim must be positive".to_string(),
            ));
        }
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(EncoderError::Config(format!(
                "num_heads {} must divide hidden_dim {}",
                self.num_heads, self.hidden_dim
            )));
        }
        if self.max_seq_len < 2 {
            return Err(EncoderError::Config(format!(
                "max_seq_len {} cannot hold [CLS] plus content",
                self.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::Config(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

struct Layer {
    attn_norm_gain: Tensor,
    attn_norm_bias: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ffn_norm_gain: Tensor,
    ffn_norm_bias: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Everything `encode` produces for one sequence.
pub struct EncoderOutput {
    /// `num_layers + 1` states of shape `[seq_len, hidden_dim]`: the embedding
    /// output followed by each layer's output (the last one layer-normed).
    pub hidden_states: Vec<Tensor>,
    /// The `[CLS]` row of the final hidden state, shape `[hidden_dim]`.
    pub pooled: Tensor,
}

/// The transformer encoder. One instance can encode any number of sequences;
/// `encode` never mutates the model, so the same weights serve the context,
/// the response, and their concatenation.
pub struct Encoder {
    config: EncoderConfig,
    token_embedding: Tensor,
    position_embedding: Tensor,
    layers: Vec<Layer>,
    output_norm_gain: Tensor,
    output_norm_bias: Tensor,
}

fn make_tensor(shape: &[usize], values: Vec<f64>, trainable: bool) -> TensorResult<Tensor> {
    if trainable {
        Tensor::param(shape, values)
    } else {
        Tensor::from_values(shape, values)
    }
}

impl Encoder {
    /// Fresh random initialization: weights from N(0, 0.02), biases zero,
    /// norm gains one. `trainable` decides whether gradients will accumulate.
    pub fn init(
        config: &EncoderConfig,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Result<Encoder, EncoderError> {
        config.validate()?;
        let dist = Normal::new(0.0, 0.02).expect("constant stddev is valid");
        let mut normal = |shape: &[usize]| -> TensorResult<Tensor> {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            make_tensor(shape, values, trainable)
        };
        let d = config.hidden_dim;
        let token_embedding = normal(&[config.vocab_size, d])?;
        let position_embedding = normal(&[config.max_seq_len, d])?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(Layer {
                attn_norm_gain: make_tensor(&[d], vec![1.0; d], trainable)?,
                attn_norm_bias: make_tensor(&[d], vec![0.0; d], trainable)?,
                wq: normal(&[d, d])?,
                bq: make_tensor(&[d], vec![0.0; d], trainable)?,
                wk: normal(&[d, d])?,
                bk: make_tensor(&[d], vec![0.0; d], trainable)?,
                wv: normal(&[d, d])?,
                bv: make_tensor(&[d], vec![0.0; d], trainable)?,
                wo: normal(&[d, d])?,
                bo: make_tensor(&[d], vec![0.0; d], trainable)?,
                ffn_norm_gain: make_tensor(&[d], vec![1.0; d], trainable)?,
                ffn_norm_bias: make_tensor(&[d], vec![0.0; d], trainable)?,
                w1: normal(&[d, config.ffn_dim])?,
                b1: make_tensor(&[config.ffn_dim], vec![0.0; config.ffn_dim], trainable)?,
                w2: normal(&[config.ffn_dim, d])?,
                b2: make_tensor(&[d], vec![0.0; d], trainable)?,
            });
        }
        Ok(Encoder {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            output_norm_gain: make_tensor(&[d], vec![1.0; d], trainable)?,
            output_norm_bias: make_tensor(&[d], vec![0.0; d], trainable)?,
        })
    }

    /// Rebuilds an encoder from named arrays (checkpoint restore). Arrays are
    /// matched by the names produced by [`Encoder::named_params`].
    pub fn from_arrays(
        config: &EncoderConfig,
        mut lookup: impl FnMut(&str) -> Option<Vec<f64>>,
        trainable: bool,
    ) -> Result<Encoder, EncoderError> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor, EncoderError> {
            let values = lookup(&name).ok_or_else(|| {
                EncoderError::Config(format!("checkpoint is missing array '{name}'"))
            })?;
            make_tensor(shape, values, trainable).map_err(EncoderError::from)
        };
        let token_embedding = take("token_embedding".into(), &[config.vocab_size, d])?;
        let position_embedding = take("position_embedding".into(), &[config.max_seq_len, d])?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let p = |suffix: &str| format!("layer{i}.{suffix}");
            layers.push(Layer {
                attn_norm_gain: take(p("attn_norm.gain"), &[d])?,
                attn_norm_bias: take(p("attn_norm.bias"), &[d])?,
                wq: take(p("attn.wq"), &[d, d])?,
                bq: take(p("attn.bq"), &[d])?,
                wk: take(p("attn.wk"), &[d, d])?,
                bk: take(p("attn.bk"), &[d])?,
                wv: take(p("attn.wv"), &[d, d])?,
                bv: take(p("attn.bv"), &[d])?,
                wo: take(p("attn.wo"), &[d, d])?,
                bo: take(p("attn.bo"), &[d])?,
                ffn_norm_gain: take(p("ffn_norm.gain"), &[d])?,
                ffn_norm_bias: take(p("ffn_norm.bias"), &[d])?,
                w1: take(p("ffn.w1"), &[d, config.ffn_dim])?,
                b1: take(p("ffn.b1"), &[config.ffn_dim])?,
                w2: take(p("ffn.w2"), &[config.ffn_dim, d])?,
                b2: take(p("ffn.b2"), &[d])?,
            });
        }
        Ok(Encoder {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            output_norm_gain: take("output_norm.gain".into(), &[d])?,
            output_norm_bias: take("output_norm.bias".into(), &[d])?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Stable, ordered view of every parameter; the order defines the
    /// checkpoint array layout.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), self.token_embedding.clone()),
            (
                "position_embedding".to_string(),
                self.position_embedding.clone(),
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let mut push = |suffix: &str, t: &Tensor| {
                out.push((format!("layer{i}.{suffix}"), t.clone()));
            };
            push("attn_norm.gain", &l.attn_norm_gain);
            push("attn_norm.bias", &l.attn_norm_bias);
            push("attn.wq", &l.wq);
            push("attn.bq", &l.bq);
            push("attn.wk", &l.wk);
            push("attn.bk", &l.bk);
            push("attn.wv", &l.wv);
            push("attn.bv", &l.bv);
            push("attn.wo", &l.wo);
            push("attn.bo", &l.bo);
            push("ffn_norm.gain", &l.ffn_norm_gain);
            push("ffn_norm.bias", &l.ffn_norm_bias);
            push("ffn.w1", &l.w1);
            push("ffn.b1", &l.b1);
            push("ffn.w2", &l.w2);
            push("ffn.b2", &l.b2);
        }
        out.push(("output_norm.gain".to_string(), self.output_norm_gain.clone()));
        out.push(("output_norm.bias".to_string(), self.output_norm_bias.clone()));
        out
    }

    /// Encodes one id sequence. Pass an RNG to enable dropout (training);
    /// `None` gives the deterministic evaluation path.
    ///
    /// `[PAD]` positions are excluded from attention everywhere, so appending
    /// padding never changes the representation of real tokens.
    pub fn encode(
        &self,
        ids: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOutput, EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(EncoderError::InputTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        for &id in ids {
            if id >= self.config.vocab_size {
                return Err(EncoderError::TokenIdOutOfRange {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
        }

        let t = ids.len();
        let positions: Vec<usize> = (0..t).collect();
        let tok = self.token_embedding.lookup_rows(ids)?;
        let pos = self.position_embedding.lookup_rows(&positions)?;
        let mut x = tok.add(&pos)?;
        x = self.dropout(x, rng.as_deref_mut())?;

        // Keys at padded positions are pushed to -inf before the softmax.
        let attn_bias = if ids.contains(&PAD_ID) {
            let mut scores = vec![0.0; t * t];
            for (j, &id) in ids.iter().enumerate() {
                if id == PAD_ID {
                    for i in 0..t {
                        scores[i * t + j] = MASK_SCORE;
                    }
                }
            }
            Some(Tensor::from_values(&[t, t], scores)?)
        } else {
            None
        };

        let mut hidden_states = Vec::with_capacity(self.config.num_layers + 1);
        hidden_states.push(x.clone());
        let last = self.config.num_layers - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = self.block(layer, &x, attn_bias.as_ref(), rng.as_deref_mut())?;
            if i < last {
                hidden_states.push(x.clone());
            }
        }
        let final_state =
            x.layer_norm_rows(&self.output_norm_gain, &self.output_norm_bias, LN_EPS)?;
        hidden_states.push(final_state);
        let pooled = hidden_states.last().expect("at least one state").row(0)?;
        Ok(EncoderOutput {
            hidden_states,
            pooled,
        })
    }

    fn block(
        &self,
        layer: &Layer,
        x: &Tensor,
        attn_bias: Option<&Tensor>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor, EncoderError> {
        let d = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // Attention sublayer.
        let normed = x.layer_norm_rows(&layer.attn_norm_gain, &layer.attn_norm_bias, LN_EPS)?;
        let q = normed.matmul(&layer.wq)?.add_bias(&layer.bq)?;
        let k = normed.matmul(&layer.wk)?.add_bias(&layer.bk)?;
        let v = normed.matmul(&layer.wv)?.add_bias(&layer.bv)?;
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            if let Some(bias) = attn_bias {
                scores = scores.add(bias)?;
            }
            let probs = scores.softmax_rows()?;
            head_outputs.push(probs.matmul(&vh)?);
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        let merged = Tensor::concat_cols(&refs)?;
        let attn_out = merged.matmul(&layer.wo)?.add_bias(&layer.bo)?;
        let attn_out = self.dropout(attn_out, rng.as_deref_mut())?;
        let x = x.add(&attn_out)?;

        // Feed-forward sublayer.
        let normed = x.layer_norm_rows(&layer.ffn_norm_gain, &layer.ffn_norm_bias, LN_EPS)?;
        let inner = normed.matmul(&layer.w1)?.add_bias(&layer.b1)?.gelu();
        let ffn_out = inner.matmul(&layer.w2)?.add_bias(&layer.b2)?;
        let ffn_out = self.dropout(ffn_out, rng)?;
        Ok(x.add(&ffn_out)?)
    }

    /// Inverted dropout: active only when an RNG is supplied and the rate is
    /// positive; kept activations are rescaled so expectations match eval.
    fn dropout(
        &self,
        x: Tensor,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor, EncoderError> {
        let p = self.config.dropout_rate;
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = 1.0 - p;
        let bern = Bernoulli::new(keep).expect("validated rate");
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if bern.sample(rng) { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_values(x.shape(), mask)?;
        Ok(x.mul(&mask)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 12,
            dropout_rate: 0.1,
        }
    }

    #[test]
    fn config_validation_catches_bad_combinations() {
        let mut cfg = tiny_config(10);
        cfg.num_heads = 3; // does not divide 16
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(10);
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = tiny_config(2); // too small for the specials
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn encode_produces_one_state_per_layer_plus_embeddings() {
        let cfg = tiny_config(10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = Encoder::init(&cfg, &mut rng, true).unwrap();
        let out = enc.encode(&[CLS_ID, 4, 5, SEP_ID], None).unwrap();
        assert_eq!(out.hidden_states.len(), cfg.num_layers + 1);
        for s in &out.hidden_states {
            assert_eq!(s.shape(), &[4, cfg.hidden_dim]);
        }
        assert_eq!(out.pooled.shape(), &[cfg.hidden_dim]);
        // The pooled vector is exactly row 0 of the last state.
        let last = out.hidden_states.last().unwrap().data_vec();
        assert_eq!(out.pooled.data_vec(), last[..cfg.hidden_dim].to_vec());
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let cfg = tiny_config(10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = Encoder::init(&cfg, &mut rng, false).unwrap();
        assert!(matches!(
            enc.encode(&[], None),
            Err(EncoderError::EmptyInput)
        ));
        assert!(matches!(
            enc.encode(&[CLS_ID; 13], None),
            Err(EncoderError::InputTooLong { .. })
        ));
        assert!(matches!(
            enc.encode(&[CLS_ID, 10], None),
            Err(EncoderError::TokenIdOutOfRange { .. })
        ));
    }

    #[test]
    fn encoding_is_deterministic_and_stateless_in_eval() {
        let cfg = tiny_config(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::init(&cfg, &mut rng, true).unwrap();
        let ids = [CLS_ID, 5, 6, 7, SEP_ID];
        let a = enc.encode(&ids, None).unwrap().pooled.data_vec();
        // Encoding other sequences in between must not disturb anything.
        let _ = enc.encode(&[CLS_ID, 4, SEP_ID], None).unwrap();
        let b = enc.encode(&ids, None).unwrap().pooled.data_vec();
        assert_eq!(a, b); // bitwise
    }

    #[test]
    fn padding_is_invisible_to_real_positions() {
        let cfg = tiny_config(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::init(&cfg, &mut rng, false).unwrap();
        let ids = [CLS_ID, 4, 5, SEP_ID];
        let mut padded = ids.to_vec();
        padded.extend([PAD_ID; 4]);
        let clean = enc.encode(&ids, None).unwrap().pooled.data_vec();
        let masked = enc.encode(&padded, None).unwrap().pooled.data_vec();
        for (a, b) in clean.iter().zip(&masked) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
            assert!(rel <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dropout_only_fires_in_training_mode() {
        let mut cfg = tiny_config(10);
        cfg.dropout_rate = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::init(&cfg, &mut rng, false).unwrap();
        let ids = [CLS_ID, 4, 5, SEP_ID];
        let eval_a = enc.encode(&ids, None).unwrap().pooled.data_vec();
        let eval_b = enc.encode(&ids, None).unwrap().pooled.data_vec();
        assert_eq!(eval_a, eval_b);
        let mut train_rng = ChaCha8Rng::seed_from_u64(1);
        let train = enc
            .encode(&ids, Some(&mut train_rng))
            .unwrap()
            .pooled
            .data_vec();
        assert_ne!(eval_a, train);
    }

    #[test]
    fn checkpoint_arrays_rebuild_the_same_encoder() {
        let cfg = tiny_config(10);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let enc = Encoder::init(&cfg, &mut rng, true).unwrap();
        let arrays: std::collections::HashMap<String, Vec<f64>> = enc
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.data_vec()))
            .collect();
        let rebuilt =
            Encoder::from_arrays(&cfg, |name| arrays.get(name).cloned(), false).unwrap();
        let ids = [CLS_ID, 6, 7, SEP_ID];
        assert_eq!(
            enc.encode(&ids, None).unwrap().pooled.data_vec(),
            rebuilt.encode(&ids, None).unwrap().pooled.data_vec()
        );
    }
}
