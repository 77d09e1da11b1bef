//! Experiment configuration: one TOML file covering training, the D-PNC
//! baseline, the evaluation sweep and file locations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dpnc::DpncTrainConfig;
use crate::error::{Error, Result};
use crate::eval::{CheckpointSet, Scheme, SweepSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding the uncompressed MNIST IDX files.
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data/mnist".into(),
            checkpoints: "artifacts".into(),
            output: "out".into(),
        }
    }
}

/// Settings of the `demo` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub snr_db: f64,
    pub offset_deg: f64,
    pub image_index: usize,
    /// Run Conv-PNC without channel noise.
    pub noiseless: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            snr_db: 6.0,
            offset_deg: 90.0,
            image_index: 0,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; copied into every section at resolution time.
    pub seed: u64,
    /// Forces single-threaded, fully seeded execution.
    pub reproducible: bool,
    pub schemes: Vec<Scheme>,
    pub paths: Paths,
    pub train: TrainConfig,
    pub dpnc: DpncTrainConfig,
    pub sweep: SweepSpec,
    pub demo: DemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            reproducible: true,
            schemes: Scheme::ALL.to_vec(),
            paths: Paths::default(),
            train: TrainConfig::default(),
            dpnc: DpncTrainConfig::default(),
            sweep: SweepSpec::default(),
            demo: DemoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Propagates the global seed and scheme list into the sections.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self.dpnc.seed = self.seed;
        self.sweep.seed = self.seed;
        self.sweep.schemes = self.schemes.clone();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes: must not be empty".into()));
        }
        self.train.validate()?;
        self.dpnc.validate()?;
        self.sweep.validate()?;
        if !self.demo.snr_db.is_finite() || !self.demo.offset_deg.is_finite() {
            return Err(Error::Config("demo: snr_db and offset_deg must be finite".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical (JSON) serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn checkpoint_path(&self, scheme: Scheme) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.safetensors", scheme.name()))
    }

    pub fn checkpoints(&self) -> CheckpointSet {
        CheckpointSet {
            sc_pnc: Some(self.checkpoint_path(Scheme::ScPnc)),
            d_pnc: Some(self.checkpoint_path(Scheme::DPnc)),
        }
    }
}
