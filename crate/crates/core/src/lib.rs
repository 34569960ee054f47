//! Simulation and verification toolkit for Brownian motion subordinated by an
//! exponential-kernel Hawkes process, `B(N_t)`.

pub mod error;
pub mod generator;
pub mod hawkes;
pub mod ito_verify;
pub mod market_data;
pub mod moments;
pub mod rng;
pub mod stats;
pub mod variance_hawkes;

pub use error::{Error, Result};
pub use hawkes::{HawkesParams, IntensityPath, JumpPath, Sampler};
pub use ito_verify::{ItoComparison, ItoExperimentConfig};
pub use market_data::{PriceSeries, ReturnsSeries, VolumeSeries};
pub use moments::MomentSet;
pub use variance_hawkes::VarianceHawkesPath;
