//! Top-level TOML configuration. Every section is optional and falls back to
//! its defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{config_hash, TrainConfig};
use crate::detect::DetectConfig;
use crate::error::{Error, Result};
use crate::harness::{EvalConfig, SuiteConfig};
use crate::photometric::PhotometricConfig;
use crate::quality::SsimConfig;
use crate::rainsim::{CurriculumConfig, RainConfig, StageConfig};
use crate::track::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub photometric: PhotometricConfig,
    pub rain: RainConfig,
    pub curriculum: CurriculumConfig,
    pub train: TrainConfig,
    pub ssim: SsimConfig,
    pub detect: DetectConfig,
    pub track: TrackerConfig,
    pub eval: EvalConfig,
    pub script: SuiteConfig,
}

impl Config {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// Defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Config> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.photometric.validate()?;
        for k in self.curriculum.stage_list() {
            self.rain.stage(k, self.curriculum.severities[k as usize - 1])?;
        }
        self.train.validate()?;
        self.ssim.validate()?;
        self.detect.validate()?;
        self.track.validate()?;
        self.eval.validate()?;
        self.script.validate()?;
        Ok(())
    }

    /// Rain recipes of the configured curriculum stages, in order.
    pub fn curriculum_stages(&self) -> Result<Vec<StageConfig>> {
        self.curriculum
            .stage_list()
            .into_iter()
            .map(|k| self.rain.stage(k, self.curriculum.severities[k as usize - 1]))
            .collect()
    }

    /// SHA-256 of the canonical JSON form of the whole configuration.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}
