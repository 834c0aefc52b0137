use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::fisher::FisherConfig;
use crate::network::ActivationKind;
use crate::training::OptimizerKind;

/// Environment variable consulted when the config has no `data_dir`.
pub const DATA_DIR_ENV: &str = "FISHERFLOW_DATA_DIR";

/// Seed of the train/validation split. Independent of the run seed so that
/// every run sees the same validation set.
pub const SPLIT_SEED: u64 = 0x5eed_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub n_per_class: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            dim: 2,
            classes: 2,
            separation: 10.0,
        }
    }
}

/// Experiment description. Every key is optional; the defaults describe the
/// MNIST 784-80-80-80-10 setup.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub arch: Vec<usize>,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub fisher: FisherConfig,
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
    /// Samples carved from the training file for validation.
    pub val_size: usize,
    /// Keep only the first `n` training samples (0 keeps all).
    pub train_subset: usize,
    /// Record elapsed seconds in the metrics log (breaks byte-identical
    /// reruns).
    pub wall_time: bool,
    pub blobs: BlobsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: None,
            arch: vec![784, 80, 80, 80, 10],
            activation: ActivationKind::Relu,
            epochs: 100,
            batch_size: 50,
            lr: 0.1,
            momentum: 0.0,
            l2: 1e-3,
            optimizer: OptimizerKind::Sngd,
            fisher: FisherConfig::default(),
            seed: 0,
            precision: Precision::F64,
            out: PathBuf::from("metrics.csv"),
            val_size: 10_000,
            train_subset: 0,
            wall_time: false,
            blobs: BlobsConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Key { key: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.into(),
        reason: reason.into(),
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.arch.len() < 2 {
            return Err(bad("arch", "needs at least an input and an output width"));
        }
        if self.arch.contains(&0) {
            return Err(bad("arch", "widths must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad("momentum", "must lie in [0, 1)"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(bad("l2", "must be finite and >= 0"));
        }
        if self.activation == ActivationKind::Identity {
            return Err(bad("activation", "hidden layers need sigmoid or relu"));
        }
        self.fisher
            .validate()
            .map_err(|(key, reason)| bad(&format!("fisher.{key}"), reason))?;
        let b = &self.blobs;
        if b.n_per_class == 0 || b.dim == 0 || b.classes == 0 {
            return Err(bad("blobs", "counts must be >= 1"));
        }
        if !b.separation.is_finite() {
            return Err(bad("blobs.separation", "must be finite"));
        }
        if self.dataset == DatasetKind::Blobs {
            if self.arch[0] != b.dim {
                return Err(bad("arch", format!("input width must equal blobs.dim = {}", b.dim)));
            }
            if self.arch[self.arch.len() - 1] != b.classes {
                return Err(bad("arch", format!("output width must equal blobs.classes = {}", b.classes)));
            }
        }
        Ok(())
    }

    /// `data_dir` from the config, else from [`DATA_DIR_ENV`].
    pub fn resolve_data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}
