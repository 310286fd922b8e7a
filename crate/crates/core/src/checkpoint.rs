//! Binary model checkpoints.
//!
//! Layout: `b"DFCK"`, `u32` version, `u64` header length, a JSON header with
//! the model config and the name and shape of every array, then each array's
//! values as little-endian `f64`. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionClassifier, ModelConfig};
use crate::nn::Parameters;

const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    arrays: Vec<ArrayEntry>,
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        what: "checkpoint",
        reason: reason.into(),
    }
}

pub fn encode(model: &DiffusionClassifier) -> Result<Vec<u8>> {
    let params = model.params();
    let header = Header {
        config: model.config.clone(),
        arrays: params
            .iter()
            .map(|p| ArrayEntry {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| malformed(e.to_string()))?;
    let values: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuilds a model from [`encode`] output. Any inconsistency is an error;
/// no allocation is sized from unchecked input.
pub fn decode(bytes: &[u8]) -> Result<DiffusionClassifier> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(malformed("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER || header_len > (bytes.len() - 16) as u64 {
        return Err(malformed("header length out of range"));
    }
    let body_start = 16 + header_len as usize;
    let header: Header =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| malformed(e.to_string()))?;
    header.config.validate()?;
    let data = &bytes[body_start..];

    // check the index against the architecture before building anything big
    let mut expected: u64 = 0;
    for a in &header.arrays {
        let n = a
            .shape
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d as u64))
            .ok_or_else(|| malformed(format!("array `{}` is too large", a.name)))?;
        expected = expected
            .checked_add(n)
            .ok_or_else(|| malformed("arrays are too large"))?;
    }
    if expected.checked_mul(8) != Some(data.len() as u64) {
        return Err(malformed(format!(
            "index describes {expected} values but {} bytes follow",
            data.len()
        )));
    }
    if header.config.parameter_count() != Some(expected) {
        return Err(malformed(format!(
            "config implies {:?} values but the index lists {expected}",
            header.config.parameter_count()
        )));
    }
    let mut model = DiffusionClassifier::new(header.config, 0)?;
    let mut params = model.params_mut();
    if params.len() != header.arrays.len() {
        return Err(malformed(format!(
            "architecture has {} arrays, checkpoint {}",
            params.len(),
            header.arrays.len()
        )));
    }
    let mut offset = 0;
    for (p, entry) in params.iter_mut().zip(&header.arrays) {
        if p.name() != entry.name || p.shape() != entry.shape.as_slice() {
            return Err(malformed(format!(
                "array `{}` {:?} does not match `{}` {:?}",
                entry.name,
                entry.shape,
                p.name(),
                p.shape()
            )));
        }
        for (v, chunk) in p.data_mut().iter_mut().zip(data[offset..].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset += 8 * p.len();
    }
    drop(params);
    Ok(model)
}

pub fn save(model: &DiffusionClassifier, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DiffusionClassifier> {
    let bytes = fs::read(path).map_err(|e| {
        Error::InvalidState(format!("cannot read weights from {}: {e}", path.display()))
    })?;
    decode(&bytes).map_err(|e| match e {
        Error::Malformed { reason, .. } => Error::InvalidState(format!(
            "cannot load weights from {}: {reason}",
            path.display()
        )),
        other => other,
    })
}
