//! Denoising of noisy neural-network weight vectors with the compensated
//! Bayesian MMSE_pb estimator, analytic case studies with Monte Carlo
//! checks, and a desk-scale over-the-air federated learning simulator.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod feel;
pub mod error;
pub mod inference;
pub mod io;
pub mod mc;
pub mod mlp;
pub mod quadratic;
pub mod search;
pub mod stats;
pub mod strategy;
pub mod tanh;

pub use denoiser::{
    denoise_factors, lambda_bound, lambda_prime_bound, ml_estimate, mmse_estimate, mmse_pb_denoise,
    mmse_pb_denoise_normalized, normalized_factors, LinearDenoiser, NormalizedTemperature, TemperatureParams,
};
pub use error::{Error, Result};
pub use mc::McEstimate;
pub use mlp::{Examples, MlpModel, MlpSpec, SyntheticDataset};
pub use search::{grid_search, grid_search_parallel, AxisSpec, GridSpec, SearchResult};
pub use stats::{PriorStats, SeedSpec, WeightVector};
