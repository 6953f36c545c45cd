//! Checkpoint persistence: `<stem>.json` manifest + `<stem>.weights.bin`
//! little-endian f32 blob. Save -> load -> forward is bitwise identical.

use super::model::ModelParams;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    #[serde(flatten)]
    params: ModelParams,
    num_weights: u64,
    weights_sha256: String,
}

fn stems(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".json")
        .or_else(|| s.strip_suffix(".weights.bin"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.json")),
        PathBuf::from(format!("{stem}.weights.bin")),
    )
}

fn weights_digest(weights: &[f32]) -> String {
    let mut h = Sha256::new();
    for w in weights {
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable fingerprint of a checkpoint's weights.
pub fn checkpoint_hash(params: &ModelParams) -> String {
    weights_digest(&params.weights)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.validate()?;
    let (json_path, bin_path) = stems(path);
    let manifest = CheckpointManifest {
        params: params.clone(),
        num_weights: params.weights.len() as u64,
        weights_sha256: weights_digest(&params.weights),
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&bin_path)?);
    for v in &params.weights {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let (json_path, bin_path) = stems(path);
    let text = std::fs::read_to_string(&json_path)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: json_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let mut r = std::io::BufReader::new(std::fs::File::open(&bin_path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 || (bytes.len() / 4) as u64 != manifest.num_weights {
        return Err(Error::MalformedFile {
            path: bin_path.display().to_string(),
            reason: format!(
                "blob has {} bytes, manifest promises {} weights",
                bytes.len(),
                manifest.num_weights
            ),
        });
    }
    let mut params = manifest.params;
    params.weights = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if weights_digest(&params.weights) != manifest.weights_sha256 {
        return Err(Error::MalformedFile {
            path: bin_path.display().to_string(),
            reason: "weight blob hash mismatch".into(),
        });
    }
    params.validate()?;
    Ok(params)
}
