//! Named experiment presets, multi-seed runs and report emission for the
//! storage valuation methods in `reservoir-core`.

pub mod config;
pub mod experiment;
pub mod presets;
pub mod report;

pub use config::{ExperimentConfig, Method, Reference, Scale};
pub use experiment::{dp_reference, run_experiment, run_method, RunOptions, RunOutcome};
pub use presets::{catalog, preset, PresetInfo};
pub use report::{RunReport, RunRow, Summary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] reservoir_core::Error),
    #[error("unknown preset {0:?}; run `list-presets` for the catalog")]
    UnknownPreset(String),
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config write: {0}")]
    Write(#[from] toml::ser::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
