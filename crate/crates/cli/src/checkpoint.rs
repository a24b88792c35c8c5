//! Model checkpoints.
//!
//! Layout: the magic `ADMLCK\x01`, a little-endian `u32` byte length, that
//! many bytes of UTF-8 JSON metadata, then float64 little-endian arrays in
//! this order: weights by layer (row-major), biases by layer, first ADAM
//! moment (weights then biases), second ADAM moment (weights then biases).

use std::path::Path;

use adml_core::model::{AdamState, MlpParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"ADMLCK\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layer_dims: Vec<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: MlpParams,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn new(params: MlpParams, optimizer: AdamState, seed: u64, config_hash: String) -> Self {
        let meta = CheckpointMeta {
            layer_dims: params.layer_dims().to_vec(),
            lr: optimizer.lr,
            beta1: optimizer.beta1,
            beta2: optimizer.beta2,
            eps_hat: optimizer.eps_hat,
            weight_decay: optimizer.weight_decay,
            step: optimizer.step,
            seed,
            config_hash,
        };
        Self { meta, params, optimizer }
    }

    /// Fails unless the stored architecture is `expected`.
    pub fn check_layer_dims(&self, expected: &[usize]) -> Result<()> {
        if self.meta.layer_dims != expected {
            return Err(CliError::Checkpoint(format!(
                "layer_dims {:?} do not match the configured {:?}",
                self.meta.layer_dims, expected
            )));
        }
        Ok(())
    }
}

fn put(out: &mut Vec<u8>, p: &MlpParams) {
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&ck.meta).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| CliError::Checkpoint("metadata too large".into()))?;
    let mut out = Vec::with_capacity(11 + json.len() + 24 * ck.params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    put(&mut out, &ck.params);
    put(&mut out, &ck.optimizer.first_moment);
    put(&mut out, &ck.optimizer.second_moment);
    Ok(out)
}

fn truncated() -> CliError {
    CliError::Checkpoint("unexpected end of checkpoint".into())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(truncated)?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_params(bytes: &[u8], pos: &mut usize, dims: &[usize]) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(dims)?;
    for t in p.tensors_mut() {
        let raw = take(bytes, pos, 8 * t.len())?;
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(p)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    if take(bytes, &mut pos, CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(CliError::Checkpoint("bad magic or unsupported version".into()));
    }
    let len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(take(bytes, &mut pos, len)?).map_err(|e| CliError::Checkpoint(format!("metadata: {e}")))?;
    let dims = &meta.layer_dims;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(CliError::Checkpoint(format!("invalid layer_dims {dims:?}")));
    }
    let params = read_params(bytes, &mut pos, dims)?;
    let first_moment = read_params(bytes, &mut pos, dims)?;
    let second_moment = read_params(bytes, &mut pos, dims)?;
    if pos != bytes.len() {
        return Err(CliError::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    let optimizer = AdamState {
        step: meta.step,
        first_moment,
        second_moment,
        lr: meta.lr,
        beta1: meta.beta1,
        beta2: meta.beta2,
        eps_hat: meta.eps_hat,
        weight_decay: meta.weight_decay,
    };
    Ok(Checkpoint { meta, params, optimizer })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
}
