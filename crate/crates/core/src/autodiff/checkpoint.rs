//! Versioned JSON checkpoints: a named-slice manifest, the flat parameter
//! vector and the architecture descriptor of the network that owns it.
//!
//! ```text
//! { "format": "reservoir-params", "version": 1,
//!   "architecture": { ... },
//!   "slices": [ { "name": "l0.w", "offset": 0, "rows": 11, "cols": 2 }, ... ],
//!   "values": [ ... ] }
//! ```
//! Floats are written in shortest round-trip form, so a reload is bitwise
//! identical.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::params::{ParamSlice, ParamStore};
use crate::error::{Error, Result};

pub const FORMAT: &str = "reservoir-params";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: serde_json::Value,
    pub slices: Vec<ParamSlice>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new<A: Serialize>(store: &ParamStore, architecture: &A) -> Result<Self> {
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            architecture: serde_json::to_value(architecture)?,
            slices: store.slices().to_vec(),
            values: store.values().to_vec(),
        })
    }

    pub fn architecture<A: DeserializeOwned>(&self) -> Result<A> {
        Ok(serde_json::from_value(self.architecture.clone())?)
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut expected = 0;
        for s in &self.slices {
            if s.offset != expected {
                return Err(Error::Checkpoint(format!("slice {} is not contiguous", s.name)));
            }
            expected += s.len();
        }
        if expected != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "manifest covers {expected} values, file has {}",
                self.values.len()
            )));
        }
        Ok(ParamStore::from_parts(self.slices.clone(), self.values.clone()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
