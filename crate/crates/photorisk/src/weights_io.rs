//! Weight files: an 8-byte little-endian header length, a JSON header, then
//! every tensor as little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use photorisk_core::model::FORMAT_VERSION;
use photorisk_core::{ModelConfig, ModelWeights, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub format_version: String,
    pub config: ModelConfig,
    pub canonical_seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: String,
}

pub fn encode_weights(w: &ModelWeights) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in w.named_tensors() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = WeightHeader {
        format_version: w.format_version.clone(),
        config: w.config.clone(),
        canonical_seed: w.canonical_seed,
        tensors,
        payload_bytes: payload.len() as u64,
        payload_sha256: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&header).expect("weight header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(w)).map_err(Error::io(path))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_weights(&bytes, path)
}

/// Parses weight-file bytes; `path` only labels errors.
pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<ModelWeights> {
    let truncated = |needed: u64| Error::Truncated {
        path: path.to_path_buf(),
        needed,
        found: bytes.len() as u64,
    };
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let Some(len_bytes) = bytes.get(..8) else {
        return Err(truncated(8));
    };
    let header_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
    let header_end = 8u64.saturating_add(header_len);
    if header_end > bytes.len() as u64 {
        return Err(truncated(header_end));
    }
    let header_bytes = &bytes[8..header_end as usize];

    let probe: VersionProbe =
        serde_json::from_slice(header_bytes).map_err(|e| malformed(e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: probe.format_version,
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let header: WeightHeader =
        serde_json::from_slice(header_bytes).map_err(|e| malformed(e.to_string()))?;

    let payload = &bytes[header_end as usize..];
    let needed = header_end.saturating_add(header.payload_bytes);
    if (payload.len() as u64) < header.payload_bytes {
        return Err(truncated(needed));
    }
    if payload.len() as u64 > header.payload_bytes {
        return Err(malformed(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - header.payload_bytes
        )));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }

    let mut w = ModelWeights::build(&header.config)?;
    w.canonical_seed = header.canonical_seed;
    let expected: Vec<(String, Vec<usize>)> = w
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if header.tensors.len() != expected.len() {
        return Err(malformed(format!(
            "{} tensors listed, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (name, shape) in expected {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| malformed(format!("tensor {name} missing")))?;
        if entry.shape != shape {
            return Err(Error::ShapeMismatch {
                name,
                expected: shape,
                found: entry.shape.clone(),
            });
        }
        let len = shape.iter().product::<usize>() as u64 * 8;
        let end = entry
            .offset
            .checked_add(len)
            .filter(|&e| e <= header.payload_bytes);
        let Some(end) = end else {
            return Err(malformed(format!("tensor {name} extends past the payload")));
        };
        let data = payload[entry.offset as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        w.set_tensor(&name, Tensor::from_vec(&shape, data)?)?;
    }
    Ok(w)
}
