//! Versioned model checkpoints.
//!
//! A checkpoint is three sibling files sharing one stem:
//! - `{stem}.bin` — magic, format version, and every parameter as a named
//!   f64 array (little-endian, self-describing shapes);
//! - `{stem}.json` — a manifest: model kind, encoder and training
//!   configuration, a SHA-256 hash of that configuration, and the array
//!   directory (names and shapes) for inspection without parsing the blob;
//! - `{stem}.vocab.txt` — the vocabulary, one token per line.
//!
//! Loading verifies the magic, version, array directory, and config hash,
//! and restores every f64 bit-exactly.

use super::{ModelKind, TrainConfig, TrainerError};
use crate::encoder::{EncoderConfig, TokenizeMode, Vocab};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"TSCP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The human-readable half of a checkpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub tokenize_mode: TokenizeMode,
    pub train: TrainConfig,
    pub config_hash: String,
    pub arrays: Vec<ArrayInfo>,
}

/// A loaded checkpoint: manifest, arrays by name, and the vocabulary.
#[derive(Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: HashMap<String, (Vec<usize>, Vec<f64>)>,
    pub vocab: Vocab,
}

/// `{stem}.{suffix}` without disturbing dots already in the stem.
pub fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", stem.display()))
}

fn hash_config(
    kind: ModelKind,
    encoder: &EncoderConfig,
    tokenize_mode: TokenizeMode,
    train: &TrainConfig,
) -> Result<String, TrainerError> {
    #[derive(serde::Serialize)]
    struct Hashed<'a> {
        kind: ModelKind,
        encoder: &'a EncoderConfig,
        tokenize_mode: TokenizeMode,
        train: &'a TrainConfig,
    }
    let canonical = serde_json::to_string(&Hashed {
        kind,
        encoder,
        tokenize_mode,
        train,
    })
    .map_err(|e| TrainerError::Checkpoint {
        path: "<config>".to_string(),
        message: e.to_string(),
    })?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

fn ck_err(path: &Path, message: impl Into<String>) -> TrainerError {
    TrainerError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn save_checkpoint(
    stem: &Path,
    kind: ModelKind,
    encoder_config: &EncoderConfig,
    tokenize_mode: TokenizeMode,
    train: &TrainConfig,
    params: &[(String, Tensor)],
    vocab: &Vocab,
) -> Result<(), TrainerError> {
    let bin_path = sibling(stem, "bin");
    let json_path = sibling(stem, "json");
    let vocab_path = sibling(stem, "vocab.txt");

    let mut blob: Vec<u8> = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    blob.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut arrays = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        blob.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        blob.extend_from_slice(bytes);
        blob.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            blob.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for value in tensor.data_vec() {
            blob.extend_from_slice(&value.to_le_bytes());
        }
        arrays.push(ArrayInfo {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
        });
    }
    std::fs::write(&bin_path, &blob).map_err(|e| ck_err(&bin_path, e.to_string()))?;

    let manifest = Manifest {
        version: FORMAT_VERSION,
        kind,
        encoder: encoder_config.clone(),
        tokenize_mode,
        train: train.clone(),
        config_hash: hash_config(kind, encoder_config, tokenize_mode, train)?,
        arrays,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ck_err(&json_path, e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| ck_err(&json_path, e.to_string()))?;

    vocab.save(&vocab_path).map_err(TrainerError::from)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainerError> {
        if self.pos + n > self.bytes.len() {
            return Err(ck_err(
                self.path,
                format!(
                    "truncated blob: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, TrainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint, TrainerError> {
    let bin_path = sibling(stem, "bin");
    let json_path = sibling(stem, "json");
    let vocab_path = sibling(stem, "vocab.txt");

    let json = std::fs::read_to_string(&json_path)
        .map_err(|e| ck_err(&json_path, e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| ck_err(&json_path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(ck_err(
            &json_path,
            format!(
                "unsupported checkpoint version {} (this build reads {FORMAT_VERSION})",
                manifest.version
            ),
        ));
    }
    let expected_hash = hash_config(
        manifest.kind,
        &manifest.encoder,
        manifest.tokenize_mode,
        &manifest.train,
    )?;
    if expected_hash != manifest.config_hash {
        return Err(ck_err(
            &json_path,
            "config hash mismatch: manifest was edited after saving".to_string(),
        ));
    }

    let blob = std::fs::read(&bin_path).map_err(|e| ck_err(&bin_path, e.to_string()))?;
    let mut cursor = Cursor {
        bytes: &blob,
        pos: 0,
        path: &bin_path,
    };
    if cursor.take(4)? != MAGIC {
        return Err(ck_err(&bin_path, "bad magic: not a checkpoint blob"));
    }
    let version = cursor.u32()?;
    if version != FORMAT_VERSION {
        return Err(ck_err(&bin_path, format!("unsupported blob version {version}")));
    }
    let count = cursor.u32()? as usize;
    if count != manifest.arrays.len() {
        return Err(ck_err(
            &bin_path,
            format!(
                "blob holds {count} arrays but the manifest lists {}",
                manifest.arrays.len()
            ),
        ));
    }
    let mut arrays = HashMap::with_capacity(count);
    for info in &manifest.arrays {
        let name_len = cursor.u32()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|e| ck_err(&bin_path, e.to_string()))?
            .to_string();
        if name != info.name {
            return Err(ck_err(
                &bin_path,
                format!("array order mismatch: blob has '{name}', manifest expects '{}'", info.name),
            ));
        }
        let ndim = cursor.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cursor.u64()? as usize);
        }
        if shape != info.shape {
            return Err(ck_err(
                &bin_path,
                format!("shape mismatch for '{name}': blob {shape:?}, manifest {:?}", info.shape),
            ));
        }
        let numel: usize = shape.iter().product();
        let raw = cursor.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.insert(name, (shape, data));
    }
    if cursor.pos != blob.len() {
        return Err(ck_err(
            &bin_path,
            format!("{} trailing bytes after the last array", blob.len() - cursor.pos),
        ));
    }

    let vocab = Vocab::load(&vocab_path).map_err(TrainerError::from)?;
    Ok(Checkpoint {
        manifest,
        arrays,
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TokenizeMode;

    fn fixture() -> (EncoderConfig, TrainConfig, Vocab, Vec<(String, Tensor)>) {
        let encoder = EncoderConfig {
            vocab_size: 6,
            hidden_dim: 2,
            num_layers: 1,
            num_heads: 1,
            ffn_dim: 2,
            max_seq_len: 4,
            dropout_rate: 0.0,
        };
        let train = TrainConfig::default();
        let vocab = Vocab::build(&["aa bb"], TokenizeMode::Whitespace).unwrap();
        let params = vec![
            (
                "w".to_string(),
                Tensor::from_values(&[2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25]).unwrap(),
            ),
            ("b".to_string(), Tensor::from_values(&[2], vec![0.1, -9.75]).unwrap()),
        ];
        (encoder, train, vocab, params)
    }

    #[test]
    fn round_trip_restores_arrays_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let (encoder, train, vocab, params) = fixture();
        save_checkpoint(
            &stem,
            ModelKind::Teacher,
            &encoder,
            TokenizeMode::Whitespace,
            &train,
            &params,
            &vocab,
        )
        .unwrap();

        let loaded = load_checkpoint(&stem).unwrap();
        assert_eq!(loaded.manifest.kind, ModelKind::Teacher);
        assert_eq!(loaded.manifest.encoder, encoder);
        assert_eq!(loaded.vocab.size(), vocab.size());
        for (name, tensor) in &params {
            let (shape, data) = &loaded.arrays[name];
            assert_eq!(shape, &tensor.shape().to_vec());
            let original = tensor.data_vec();
            assert_eq!(data.len(), original.len());
            for (a, b) in data.iter().zip(&original) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn tampered_blob_and_manifest_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let (encoder, train, vocab, params) = fixture();
        save_checkpoint(
            &stem,
            ModelKind::Student,
            &encoder,
            TokenizeMode::Char,
            &train,
            &params,
            &vocab,
        )
        .unwrap();

        // Break the magic.
        let bin = sibling(&stem, "bin");
        let mut blob = std::fs::read(&bin).unwrap();
        blob[0] = b'X';
        std::fs::write(&bin, &blob).unwrap();
        let err = load_checkpoint(&stem).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        // Restore, then truncate.
        blob[0] = b'T';
        std::fs::write(&bin, &blob[..blob.len() - 3]).unwrap();
        let err = load_checkpoint(&stem).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        // Restore the blob, edit the manifest config.
        std::fs::write(&bin, &blob).unwrap();
        let json_path = sibling(&stem, "json");
        let edited = std::fs::read_to_string(&json_path)
            .unwrap()
            .replace("\"hidden_dim\": 2", "\"hidden_dim\": 4");
        std::fs::write(&json_path, edited).unwrap();
        let err = load_checkpoint(&stem).unwrap_err().to_string();
        assert!(err.contains("hash mismatch"), "{err}");
    }
}
