use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arhead::{HeadConfig, SystemVariant};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lasas::LasasConfig;
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            adam: AdamConfig::default(),
            epochs: 15,
            batch_size: 8,
        }
    }
}

/// Text corruption rates applied to training and evaluation transcripts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Corruption {
    pub train: f64,
    pub eval: f64,
}

impl Corruption {
    pub const fn new(train: f64, eval: f64) -> Self {
        Corruption { train, eval }
    }
}

/// One training run, as read from a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus manifest written by `gen-data`.
    pub manifest: PathBuf,
    pub variant: SystemVariant,
    pub encoder: EncoderConfig,
    pub lasas: LasasConfig,
    pub head: HeadConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub corruption: Corruption,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("data/manifest.json"),
            variant: SystemVariant::Lasas,
            encoder: EncoderConfig::default(),
            lasas: LasasConfig::default(),
            head: HeadConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 1,
            corruption: Corruption::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            encoder: self.encoder.clone(),
            lasas: self.lasas.clone(),
            head: self.head.clone(),
        }
    }

    /// Checks everything except the existence of the manifest.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lasas.validate()?;
        self.head.validate()?;
        let opt = &self.optimizer;
        if opt.epochs == 0 || opt.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let a = &opt.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        for p in [self.corruption.train, self.corruption.eval] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("corruption rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate), plus the manifest must exist.
    pub fn validate_files(&self) -> Result<()> {
        self.validate()?;
        if !self.manifest.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", self.manifest.display())));
        }
        Ok(())
    }
}
