//! Heralded single-photon source: exact statistics, Monte Carlo event logs,
//! correlation estimators and noise-model fitting.

pub mod cli;
pub mod error;
pub mod fit;
pub mod model;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use params::ExperimentParams;
