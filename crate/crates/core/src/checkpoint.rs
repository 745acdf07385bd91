//! Binary checkpoint format.
//!
//! ```text
//! b"RWKVTSCK"  version: u8  header_len: u64 LE  header: JSON  payload
//! ```
//!
//! The JSON header holds the run configuration, the payload precision, a
//! tensor directory (name, shape, byte offset), the payload length, and the
//! SHA-256 of the payload. The payload is every tensor in directory order as
//! little-endian `f32` or `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numeric::{Matrix, Precision, Real};

pub const MAGIC: &[u8; 8] = b"RWKVTSCK";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config: RunConfig,
    pub precision: Precision,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
    pub sha256: String,
}

/// A configuration with its trained weights, held at 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Precision of the stored payload.
    pub precision: Precision,
    pub params: ModelParams<Matrix<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(config: &RunConfig, model: &Model<T>) -> Self {
        Checkpoint {
            config: config.clone(),
            precision: T::PRECISION,
            params: model.params.cast(),
        }
    }

    pub fn model<T: Real>(&self) -> Model<T> {
        let mut config = self.config.model();
        config.precision = T::PRECISION;
        Model {
            config,
            params: self.params.cast(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.precision.byte_width();
        let mut payload = Vec::with_capacity(self.params.count() * width);
        let mut tensors = Vec::new();
        self.params.visit(&mut |name, m| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
                offset: payload.len() as u64,
            });
            for &v in m.as_slice() {
                match self.precision {
                    Precision::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                }
            }
        });
        let header = Header {
            config: self.config.clone(),
            precision: self.precision,
            tensors,
            payload_bytes: payload.len() as u64,
            sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec_pretty(&header).expect("header is always serializable");
        let mut out = Vec::with_capacity(17 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 17 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        if bytes[8] != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", bytes[8])));
        }
        let header_len = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes")) as usize;
        let body = &bytes[17..];
        if header_len > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("unreadable header: {e}")))?;
        let payload = &body[header_len..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(bad(format!(
                "payload is {} bytes, header says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.sha256 {
            return Err(bad("payload checksum mismatch".into()));
        }
        header.config.validate()?;
        let model_cfg = header.config.model();
        let expected = ModelParams::<Matrix<f64>>::expected_shapes(&model_cfg);
        if expected.len() != header.tensors.len() {
            return Err(bad(format!(
                "checkpoint has {} tensors, the configuration needs {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        let width = header.precision.byte_width();
        let mut flat = Vec::new();
        for (entry, (name, (rows, cols))) in header.tensors.iter().zip(&expected) {
            if &entry.name != name || entry.shape != [*rows, *cols] {
                return Err(bad(format!(
                    "tensor {} has shape {:?}, the configuration needs {name} with shape [{rows}, {cols}]",
                    entry.name, entry.shape
                )));
            }
            let start = entry.offset as usize;
            let end = start + rows * cols * width;
            if end > payload.len() {
                return Err(bad(format!("tensor {name} runs past the payload")));
            }
            for chunk in payload[start..end].chunks_exact(width) {
                flat.push(match header.precision {
                    Precision::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
                    Precision::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
                });
            }
        }
        let template = Model::<f64> {
            config: model_cfg.clone(),
            params: ModelParams::<Matrix<f64>>::zeros(&model_cfg),
        };
        let params = template.params.unflatten_like(&flat)?;
        Ok(Checkpoint {
            config: header.config,
            precision: header.precision,
            params,
        })
    }

    /// Writes through a temporary file and a rename, so a failed save
    /// never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
