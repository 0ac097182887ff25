//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "THCCKPT\0"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON (configs, split, parameter names and shapes)
//! weights    f64 values of every parameter, in header order, row-major
//! ```
//!
//! The encoding has no timestamps or map iteration order, so identical
//! models produce identical bytes. Files are written to a sibling temporary
//! path and renamed into place.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::model::{ModelConfig, ModelError, ThcModel};
use crate::tensor::Tensor;
use crate::train::{Splits, TrainConfig};

pub const MAGIC: &[u8; 8] = b"THCCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub splits: Splits,
    /// Completed training epochs when the file was written.
    pub epochs_completed: usize,
    /// Epoch whose weights are stored, if they come from a selected snapshot.
    pub selected_epoch: Option<usize>,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(
        model: &ThcModel,
        train: &TrainConfig,
        splits: &Splits,
        epochs_completed: usize,
        selected_epoch: Option<usize>,
    ) -> Self {
        let store = model.params();
        Self {
            header: Header {
                model: model.config().clone(),
                train: train.clone(),
                splits: splits.clone(),
                epochs_completed,
                selected_epoch,
                names: store.names().to_vec(),
                shapes: store.tensors().iter().map(Tensor::shape).collect(),
            },
            params: store.tensors().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let scalars: usize = self.params.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| CheckpointError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(fail("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.names.len() != header.shapes.len() {
            return Err(fail("parameter names and shapes disagree"));
        }
        let mut weights = body[header_len..].chunks_exact(8);
        if !weights.remainder().is_empty() {
            return Err(fail("weight section is not a whole number of f64 values"));
        }
        let expected: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
        if weights.len() != expected {
            return Err(CheckpointError::Format(format!(
                "expected {expected} weights, found {}",
                weights.len()
            )));
        }
        let params = header
            .shapes
            .iter()
            .map(|&(r, c)| {
                let data = weights
                    .by_ref()
                    .take(r * c)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                Tensor::new(r, c, data).expect("length checked")
            })
            .collect();
        Ok(Self { header, params })
    }

    /// Rebuilds the model, checking names and shapes against the
    /// configuration's own parameter layout.
    pub fn model(&self) -> Result<ThcModel> {
        let mut model = ThcModel::new(self.header.model.clone(), 0)?;
        if model.params().names() != self.header.names.as_slice() {
            return Err(CheckpointError::Format(
                "parameter names do not match the model configuration".into(),
            ));
        }
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`, so readers only ever see a complete file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            input_size: 6,
            schedule: vec![3, 2],
            heads: 2,
            key_dim: 3,
            value_dim: 3,
            readout_hidden: 4,
            ..Default::default()
        };
        let model = ThcModel::new(cfg, 9).unwrap();
        let splits = Splits {
            train: vec![0, 2],
            val: vec![1],
            test: vec![3],
        };
        Checkpoint::new(&model, &TrainConfig::default(), &splits, 4, Some(2))
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.model().unwrap().params().tensors(), c.params.as_slice());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn save_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
