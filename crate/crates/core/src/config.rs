//! Run configuration loaded from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{AnchorConfig, AuditMode};
use crate::binarizer::BinningConfig;
use crate::error::{Error, Result};
use crate::eval::{CartConfig, CvConfig};
use crate::grafting::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    /// Rows subsampled before cross-validation; `None` keeps all rows.
    pub sample: Option<usize>,
    pub threshold: f64,
    pub cart: CartConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            sample: None,
            threshold: 0.5,
            cart: CartConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub tau: f64,
    pub budget: usize,
    pub samples: usize,
    pub seed: u64,
    pub against: AuditMode,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let a = AnchorConfig::default();
        Self {
            tau: a.tau,
            budget: a.budget,
            samples: a.samples,
            seed: a.seed,
            against: AuditMode::default(),
        }
    }
}

impl AuditConfig {
    pub fn anchor(&self) -> AnchorConfig {
        AnchorConfig {
            tau: self.tau,
            budget: self.budget,
            samples: self.samples,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub binning: BinningConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
}

pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";

impl RunConfig {
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config { path: p, message } if p.starts_with('<') => Error::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.data, &mut cfg.paths.schema, &mut cfg.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::Config {
            path: "<config>".into(),
            message,
        };
        self.train.validate()?;
        self.audit.anchor().validate().map_err(|e| bad(e.to_string()))?;
        if self.binning.max_depth == 0 {
            return Err(bad("binning.max_depth must be at least 1".into()));
        }
        if self.eval.k < 2 {
            return Err(bad(format!("eval.k must be at least 2, got {}", self.eval.k)));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(bad(format!("eval.threshold must lie in [0, 1], got {}", self.eval.threshold)));
        }
        Ok(())
    }

    /// Overrides every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.eval.seed = seed;
        self.audit.seed = seed;
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            k: self.eval.k,
            seed: self.eval.seed,
            threshold: self.eval.threshold,
            binning: self.binning.clone(),
            train: self.train.clone(),
            cart: self.eval.cart.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Writes the effective configuration next to a run's outputs.
    pub fn write_snapshot(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
