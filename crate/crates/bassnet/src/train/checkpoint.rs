//! Checkpoint serialization.
//!
//! Layout: the magic `BASSCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` metadata length, that many bytes of JSON metadata
//! (network configuration, epoch counters, optimizer scalars, an FNV-1a
//! hash of the configuration), then the tensor payload: all parameters,
//! the first moments, and the second moments as little-endian `f64` in
//! canonical path order. Identical state serializes to identical bytes.

use super::adam::AdamState;
use crate::arch::{param_paths, zero_network, NetworkConfig, ParamStore};
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"BASSCKPT";
const VERSION: u32 = 1;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn config_hash(cfg: &NetworkConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)
        .map_err(|e| Error::data(format!("cannot serialize configuration: {}", e)))?;
    Ok(format!("{:016x}", fnv1a64(json.as_bytes())))
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: NetworkConfig,
    config_hash: String,
    epoch: usize,
    best_epoch: usize,
    best_val_acc: f64,
    param_count: usize,
    adam: AdamMeta,
}

/// Everything needed to resume or evaluate a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub params: ParamStore,
    pub adam: AdamState,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let expected = param_paths(&ckpt.config)?;
    if ckpt.params.paths() != expected
        || ckpt.adam.m.paths() != expected
        || ckpt.adam.v.paths() != expected
    {
        return Err(Error::config(
            "checkpoint stores do not match the configuration layout",
        ));
    }

    let meta = CheckpointMeta {
        config: ckpt.config.clone(),
        config_hash: config_hash(&ckpt.config)?,
        epoch: ckpt.epoch,
        best_epoch: ckpt.best_epoch,
        best_val_acc: ckpt.best_val_acc,
        param_count: ckpt.params.param_count(),
        adam: AdamMeta {
            t: ckpt.adam.t,
            learning_rate: ckpt.adam.learning_rate,
            beta1: ckpt.adam.beta1,
            beta2: ckpt.adam.beta2,
            epsilon: ckpt.adam.epsilon,
        },
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::data(format!("cannot serialize checkpoint metadata: {}", e)))?;

    let n = ckpt.params.param_count();
    let mut bytes = Vec::with_capacity(8 + 4 + 8 + meta_json.len() + 3 * n * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_json);
    push_f64s(&mut bytes, &ckpt.params.to_flat());
    push_f64s(&mut bytes, &ckpt.adam.m.to_flat());
    push_f64s(&mut bytes, &ckpt.adam.v.to_flat());
    atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::data(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_start = 20 + meta_len;
    if bytes.len() < payload_start {
        return Err(Error::data("checkpoint metadata is truncated"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| Error::data(format!("malformed checkpoint metadata: {}", e)))?;

    meta.config.shape_trace()?;
    if config_hash(&meta.config)? != meta.config_hash {
        return Err(Error::data("checkpoint configuration hash mismatch"));
    }
    let skeleton = zero_network(&meta.config)?;
    let n = skeleton.param_count();
    if meta.param_count != n {
        return Err(Error::data(format!(
            "checkpoint claims {} parameters, configuration has {}",
            meta.param_count, n
        )));
    }
    if bytes.len() != payload_start + 3 * n * 8 {
        return Err(Error::data(format!(
            "checkpoint payload is {} bytes, expected {}",
            bytes.len() - payload_start,
            3 * n * 8
        )));
    }

    let take = |idx: usize| {
        let start = payload_start + idx * n * 8;
        read_f64s(&bytes[start..start + n * 8])
    };
    let mut params = skeleton.clone();
    params.assign_flat(&take(0))?;
    let mut m = skeleton.clone();
    m.assign_flat(&take(1))?;
    let mut v = skeleton;
    v.assign_flat(&take(2))?;

    Ok(Checkpoint {
        config: meta.config,
        epoch: meta.epoch,
        best_epoch: meta.best_epoch,
        best_val_acc: meta.best_val_acc,
        params,
        adam: AdamState {
            t: meta.adam.t,
            learning_rate: meta.adam.learning_rate,
            beta1: meta.adam.beta1,
            beta2: meta.adam.beta2,
            epsilon: meta.adam.epsilon,
            m,
            v,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_network;
    use crate::gradcheck::reduced_config;
    use crate::rng::Rng;

    fn sample_checkpoint() -> Checkpoint {
        let config = reduced_config(3, true).unwrap();
        let mut rng = Rng::new(11);
        let params = build_network(&config, &mut rng).unwrap();
        let mut adam = AdamState::new(&params, 5e-4).unwrap();
        adam.t = 42;
        // nonzero moments so the payload exercises all three sections
        let flat: Vec<f64> = (0..params.param_count()).map(|i| i as f64 * 0.01).collect();
        adam.m.assign_flat(&flat).unwrap();
        Checkpoint {
            config,
            epoch: 7,
            best_epoch: 5,
            best_val_acc: 0.875,
            params,
            adam,
        }
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.ckpt");
        let second = dir.path().join("b.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&first, &ckpt).unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        save_checkpoint(&second, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("payload"), "{}", err);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = load_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn fnv_matches_reference_values() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
