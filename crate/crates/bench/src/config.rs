//! Experiment description, read from and written to TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use reservoir_core::dp::DpConfig;
use reservoir_core::gmcsdp::GmcsdpConfig;
use reservoir_core::gsdp::GsdpConfig;
use reservoir_core::gv::GvConfig;
use reservoir_core::price_models::ForwardModel;
use reservoir_core::storage::{Impact, StorageSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// The sizes of the published runs.
    Paper,
    /// Shrunk horizon, iterations and paths for a workstation.
    Desk,
}

impl FromStr for Scale {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(BenchError::Invalid(format!("unknown scale {s:?} (paper or desk)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

/// Regression DP run as an experiment of its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpExperiment {
    pub model: ForwardModel,
    pub horizon: usize,
    pub storage: StorageSpec,
    pub dp: DpConfig,
    pub eval_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Gv(GvConfig),
    Gsdp(GsdpConfig),
    Gmcsdp(GmcsdpConfig),
    Dp(DpExperiment),
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Gv(_) => "gv",
            Method::Gsdp(_) => "gsdp",
            Method::Gmcsdp(_) => "gmcsdp",
            Method::Dp(_) => "dp",
        }
    }

    pub fn model(&self) -> &ForwardModel {
        match self {
            Method::Gv(c) => &c.model,
            Method::Gsdp(c) => &c.model,
            Method::Gmcsdp(c) => &c.model,
            Method::Dp(c) => &c.model,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Method::Gv(c) => c.horizon,
            Method::Gsdp(c) => c.horizon,
            Method::Gmcsdp(c) => c.horizon,
            Method::Dp(c) => c.horizon,
        }
    }

    pub fn storage(&self) -> StorageSpec {
        match self {
            Method::Gv(c) => c.storage,
            Method::Gsdp(c) => c.storage,
            Method::Gmcsdp(c) => c.storage,
            Method::Dp(c) => c.storage,
        }
    }

    /// Impact coefficient `P` of the objective, zero when linear.
    pub fn impact(&self) -> f64 {
        match self {
            Method::Gv(c) => c.impact,
            Method::Gsdp(c) => c.impact,
            Method::Gmcsdp(_) => 0.0,
            Method::Dp(c) => c.dp.impact.map_or(0.0, |i| i.coefficient),
        }
    }

    /// Same experiment driven by another seed. Evaluation paths follow the
    /// training seed so that every run is an independent replication.
    pub fn with_seed(&self, seed: u64) -> Method {
        let mut m = self.clone();
        match &mut m {
            Method::Gv(c) => {
                c.seed = seed;
                c.eval_seed = seed;
            }
            Method::Gsdp(c) => {
                c.seed = seed;
                c.eval_seed = seed;
            }
            Method::Gmcsdp(c) => c.seed = seed,
            Method::Dp(c) => c.dp.seed = seed,
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Gv(c) => c.validate()?,
            Method::Gsdp(c) => c.validate()?,
            Method::Gmcsdp(c) => c.validate()?,
            Method::Dp(c) => {
                c.model.validate(c.horizon)?;
                c.storage.validate()?;
                if c.dp.n_paths == 0 || c.eval_paths == 0 || c.dp.grid_points < 2 {
                    return Err(BenchError::Invalid("dp needs paths and at least two grid points".into()));
                }
            }
        }
        Ok(())
    }
}

/// Where the comparison value of a report comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reference {
    /// A published number.
    Published { value: f64, source: String },
    /// Computed before the runs by regression DP on a single storage. With
    /// price impact the symmetric per-storage problem is solved, which has
    /// the impact coefficient of one storage.
    Dp { dp: DpConfig, eval_paths: usize },
    None,
}

impl Reference {
    pub fn dp_setup(&self, method: &Method) -> Option<DpExperiment> {
        match self {
            Reference::Dp { dp, eval_paths } => {
                let p = method.impact();
                Some(DpExperiment {
                    model: method.model().clone(),
                    horizon: method.horizon(),
                    storage: method.storage(),
                    dp: DpConfig {
                        impact: (p > 0.0).then_some(Impact {
                            coefficient: p,
                            storages: 1,
                        }),
                        ..dp.clone()
                    },
                    eval_paths: *eval_paths,
                })
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub scale: Scale,
    pub runs: usize,
    /// Run `r` uses seed `seed + r`.
    pub seed: u64,
    pub reference: Reference,
    pub method: Method,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(BenchError::Invalid("experiment needs a name".into()));
        }
        if self.runs == 0 {
            return Err(BenchError::Invalid("runs must be positive".into()));
        }
        if self.seed.checked_add(self.runs as u64).is_none() {
            return Err(BenchError::Invalid("seed range overflows".into()));
        }
        self.method.validate()?;
        if let Some(dp) = self.reference.dp_setup(&self.method) {
            Method::Dp(dp).validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}
