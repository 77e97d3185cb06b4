//! Signed Granger-causal discovery for multi-agent trajectories.

pub mod abm;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod series;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
