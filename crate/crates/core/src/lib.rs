//! Storage valuation under stochastic commodity prices with neural-network
//! policies and Bellman-value approximators, together with the dynamic
//! programming and linear programming oracles used to validate them.

pub mod autodiff;
pub mod dp;
pub mod error;
pub mod gmcsdp;
pub mod gsdp;
pub mod gv;
pub mod lp;
pub mod nets;
pub mod price_models;
pub mod rng;
pub mod storage;
pub mod value;

pub use error::{Error, Result};
