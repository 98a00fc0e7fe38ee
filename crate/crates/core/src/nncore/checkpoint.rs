//! Checkpoint container.
//!
//! Layout: the magic `PCGNET01`, a little-endian u32 header length, a JSON
//! header describing the backbone config, the frozen paths, and one
//! (path, shape) entry per tensor, followed by each tensor's values as raw
//! little-endian f64 in entry order. Loading validates entry shapes
//! against the payload.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::BackboneConfig;
use super::tensor::{ParameterSet, Tensor};
use super::NnError;

const MAGIC: &[u8; 8] = b"PCGNET01";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    frozen: Vec<String>,
    entries: Vec<Entry>,
}

/// Serialize parameters plus the backbone config. Writes to a temp file
/// and renames, so an interrupted save never leaves a torn checkpoint.
pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet,
    cfg: &BackboneConfig,
) -> Result<(), NnError> {
    let header = Header {
        backbone: cfg.clone(),
        frozen: params.frozen_paths().cloned().collect(),
        entries: params
            .iter()
            .map(|(p, t)| Entry {
                path: p.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| NnError::Checkpoint(format!("header encode: {e}")))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, tensor) in params.iter() {
        for v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, BackboneConfig), NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(NnError::Checkpoint(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(NnError::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| NnError::Checkpoint(format!("header decode: {e}")))?;

    let mut params = ParameterSet::new();
    let mut at = body;
    for entry in &header.entries {
        if entry.dtype != "f64" {
            return Err(NnError::Checkpoint(format!(
                "{}: unsupported dtype {}",
                entry.path, entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let end = at + numel * 8;
        if end > bytes.len() {
            return Err(NnError::Checkpoint(format!(
                "{}: payload truncated (needs {numel} values)",
                entry.path
            )));
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let chunk: [u8; 8] = bytes[at + i * 8..at + i * 8 + 8].try_into().unwrap();
            data.push(f64::from_le_bytes(chunk));
        }
        params.insert(entry.path.clone(), Tensor::new(entry.shape.clone(), data)?);
        at = end;
    }
    if at != bytes.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - at
        )));
    }
    params.set_frozen(header.frozen.into_iter().collect::<BTreeSet<_>>());
    Ok((params, header.backbone))
}
