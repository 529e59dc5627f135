//! On-disk checkpoints: `manifest.json` plus `weights.bin` holding
//! little-endian f32 parameters followed by the two Adam moment vectors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Network, NetworkArch, ParamSpec};
use super::train::AdamState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const WEIGHTS_NAME: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Curriculum stage of the last step (0 before training).
    pub stage: u8,
    pub adam: AdamState,
}

impl TrainerState {
    pub fn fresh(param_count: usize) -> Self {
        Self {
            step: 0,
            stage: 0,
            adam: AdamState::new(param_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub trainer: TrainerState,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerLayout {
    /// Element offsets (in f32 units) of the two moment vectors in `weights.bin`.
    pub m_offset: usize,
    pub v_offset: usize,
    pub adam_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch: NetworkArch,
    pub param_count: usize,
    pub tensors: Vec<ParamSpec>,
    pub optimizer: OptimizerLayout,
    pub step: u64,
    pub stage: u8,
    pub config_hash: String,
    pub seed: u64,
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    sha256_hex(&bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn manifest(&self) -> CheckpointManifest {
        let n = self.network.param_count();
        CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            arch: self.network.arch.clone(),
            param_count: n,
            tensors: self.network.param_specs().to_vec(),
            optimizer: OptimizerLayout {
                m_offset: n,
                v_offset: 2 * n,
                adam_step: self.trainer.adam.t,
            },
            step: self.trainer.step,
            stage: self.trainer.stage,
            config_hash: self.provenance.config_hash.clone(),
            seed: self.provenance.seed,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        let mpath = dir.join(MANIFEST_NAME);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        let a = &self.trainer.adam;
        let mut blob = Vec::with_capacity(12 * self.network.param_count());
        for v in self.network.params.iter().chain(&a.m).chain(&a.v) {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let wpath = dir.join(WEIGHTS_NAME);
        fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", mpath.display())))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "format version {} is not supported (expected {})",
                manifest.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let probe = Network::from_params(&manifest.arch, vec![0.0; manifest.param_count])
            .map_err(|e| Error::CorruptCheckpoint(format!("manifest disagrees with its architecture: {e}")))?;
        if probe.param_specs() != manifest.tensors.as_slice() {
            return Err(Error::CorruptCheckpoint(
                "tensor list does not match the architecture's canonical layout".into(),
            ));
        }
        let n = manifest.param_count;
        if manifest.optimizer.m_offset != n || manifest.optimizer.v_offset != 2 * n {
            return Err(Error::CorruptCheckpoint("unexpected optimizer offsets".into()));
        }
        let wpath = dir.join(WEIGHTS_NAME);
        let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        if blob.len() != 12 * n {
            return Err(Error::CorruptCheckpoint(format!(
                "{} holds {} bytes, expected {}",
                wpath.display(),
                blob.len(),
                12 * n
            )));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite value in weights".into()));
        }
        let network = Network::from_params(&manifest.arch, values[..n].to_vec())?;
        let adam = AdamState {
            m: values[n..2 * n].to_vec(),
            v: values[2 * n..].to_vec(),
            t: manifest.optimizer.adam_step,
        };
        Ok(Checkpoint {
            network,
            trainer: TrainerState {
                step: manifest.step,
                stage: manifest.stage,
                adam,
            },
            provenance: Provenance {
                config_hash: manifest.config_hash,
                seed: manifest.seed,
            },
        })
    }
}
