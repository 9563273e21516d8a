//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TDTLSTM\0"
//! version  u32
//! header   u64 length + UTF-8 JSON (config, fingerprint, dimensions, tensor list, vocabulary)
//! tensors  f64 values, row-major, in header order
//! table    f64 embedding rows, one per vocabulary word
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a load returns exactly what was
//! saved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EmbeddingTable, Encoder, Vocabulary};
use crate::model::ModelParameters;
use crate::training::TrainingConfig;

pub const MAGIC: &[u8; 8] = b"TDTLSTM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("vocabulary fingerprint {stored} does not match {expected}")]
    FingerprintMismatch { stored: String, expected: String },
    #[error("checkpoint {what} is {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub fingerprint: String,
    pub params: ModelParameters,
    pub encoder: Encoder,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainingConfig,
    fingerprint: String,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    tensors: Vec<TensorInfo>,
    vocabulary: Vocabulary,
    embedding_dim: usize,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

impl Checkpoint {
    pub fn new(config: TrainingConfig, params: ModelParameters, encoder: Encoder) -> Self {
        Checkpoint {
            config,
            fingerprint: encoder.vocab().fingerprint(),
            params,
            encoder,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            fingerprint: self.fingerprint.clone(),
            input_dim: self.params.input_dim(),
            hidden_dim: self.params.hidden_dim(),
            output_dim: self.params.output_dim(),
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|(name, _, m)| TensorInfo {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
            vocabulary: self.encoder.vocab().clone(),
            embedding_dim: self.encoder.embedding_dim(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.params.tensors() {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for row in self.encoder.table().rows() {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::CorruptFile("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| CheckpointError::CorruptFile("header length".into()))?;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| CheckpointError::CorruptFile(format!("header: {e}")))?;

        let mut params = ModelParameters::zeros(header.input_dim, header.hidden_dim, header.output_dim);
        {
            let expected: Vec<TensorInfo> = params
                .tensors()
                .iter()
                .map(|(name, _, m)| TensorInfo {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect();
            if expected != header.tensors {
                return Err(CheckpointError::CorruptFile("tensor list does not match dimensions".into()));
            }
        }
        for (_, _, m) in params.tensors_mut() {
            for v in m.as_mut_slice() {
                *v = r.f64()?;
            }
        }
        let words = header.vocabulary.words().len();
        let dim = header.embedding_dim;
        let rows = (0..words)
            .map(|_| (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::CorruptFile(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let table = EmbeddingTable::new(dim, rows)
            .map_err(|e| CheckpointError::CorruptFile(format!("embeddings: {e}")))?;
        if header.vocabulary.fingerprint() != header.fingerprint {
            return Err(CheckpointError::CorruptFile("stored vocabulary does not match its fingerprint".into()));
        }
        let encoder = Encoder::new(header.vocabulary, table);
        if encoder.input_dim() != header.input_dim {
            return Err(CheckpointError::CorruptFile("input width disagrees with vocabulary".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            fingerprint: header.fingerprint,
            params,
            encoder,
        })
    }

    /// Fails when the stored parameters do not have the shape `config` and
    /// `encoder` would produce.
    pub fn check_dimensions(&self, config: &TrainingConfig) -> Result<(), CheckpointError> {
        if self.params.hidden_dim() != config.hidden_size {
            return Err(CheckpointError::DimensionMismatch {
                what: "hidden size",
                expected: config.hidden_size,
                found: self.params.hidden_dim(),
            });
        }
        Ok(())
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.fingerprint != expected {
            return Err(CheckpointError::FingerprintMismatch {
                stored: self.fingerprint.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::CorruptFile("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::random_embeddings;
    use crate::ptb::parse_bracketed;
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        let t = parse_bracketed("(S (NP (PRP you)) (VP (VB go)))").unwrap();
        let vocab = Vocabulary::build([&t]).unwrap();
        let table = random_embeddings(&vocab, 3, 9).unwrap();
        let encoder = Encoder::new(vocab, table);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let params = ModelParameters::init(encoder.input_dim(), 8, 1, 1.0, &mut rng);
        let config = TrainingConfig {
            hidden_size: 8,
            ..TrainingConfig::default()
        };
        Checkpoint::new(config, params, encoder)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        for ((_, _, a), (_, _, b)) in c.params.tensors().iter().zip(back.params.tensors()) {
            let abits: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
    }

    #[test]
    fn truncation_and_version() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 13, 40, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(CheckpointError::CorruptFile(_))
            ));
        }
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bumped),
            Err(CheckpointError::VersionMismatch { found: 9, .. })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::CorruptFile(_))));
    }

    #[test]
    fn dimension_and_fingerprint_checks() {
        let c = sample();
        let wrong = TrainingConfig {
            hidden_size: 16,
            ..TrainingConfig::default()
        };
        assert!(matches!(
            c.check_dimensions(&wrong),
            Err(CheckpointError::DimensionMismatch { expected: 16, found: 8, .. })
        ));
        assert!(c.check_dimensions(&c.config).is_ok());
        assert!(c.check_fingerprint(&c.encoder.vocab().fingerprint()).is_ok());
        assert!(matches!(
            c.check_fingerprint("beef"),
            Err(CheckpointError::FingerprintMismatch { .. })
        ));
    }
}
