//! Checkpoint file: `KRLM` magic, u32 version, u32 metadata length, JSON
//! metadata, then every parameter as a little-endian f64.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::dsl::Token;
use crate::error::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KRLM";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    /// Token spellings in index order.
    pub vocab: Vec<String>,
    pub n_params: usize,
    /// Hash of the training configuration that produced the weights.
    pub cfg_hash: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint(model: &Model, cfg_hash: &str, extra: serde_json::Value) -> Result<Vec<u8>, ModelError> {
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.cfg,
        vocab: Token::vocabulary(),
        n_params: model.params.len(),
        cfg_hash: cfg_hash.to_string(),
        extra,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(Model, CheckpointMeta), ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let json = buf.get(12..12 + n).ok_or_else(|| bad("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(json)?;
    if meta.vocab != Token::vocabulary() {
        return Err(bad("vocabulary does not match this build's DSL"));
    }
    let body = &buf[12 + n..];
    if body.len() != 8 * meta.n_params {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * meta.n_params,
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = Model::from_params(meta.model, params)?;
    Ok((model, meta))
}

pub fn save_checkpoint(path: &Path, model: &Model, cfg_hash: &str, extra: serde_json::Value) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(model, cfg_hash, extra)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::new(ModelConfig { embed: 4, hidden: 3, latent: 2, ..ModelConfig::desk() }, 3).unwrap();
        let bytes = encode_checkpoint(&m, "abc", serde_json::json!({"round": 2})).unwrap();
        let (back, meta) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.cfg_hash, "abc");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
    }
}
