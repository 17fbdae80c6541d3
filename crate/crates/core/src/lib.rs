//! Linear-generator Wasserstein GANs on Gaussian data, checked against the
//! closed-form r-PCA solution.
//!
//! The crate bundles
//! - dense linear algebra ([`linalg`]) and Gaussian data generation ([`gaussian`]),
//! - PCA baselines ([`pca`]) and the R1-PCA fixed-point solver ([`r1pca`]),
//! - divergence and optimal-transport oracles ([`divergence`]),
//! - a small reverse-mode autodiff tape with second-order support ([`autodiff`]),
//! - the critic/generator models, optimizers and WGAN-WC / WGAN-GP training
//!   loops ([`nn`], [`optim`], [`train`]),
//! - experiment orchestration, CSV/JSON/SVG output ([`experiment`]).

pub mod assignment;
pub mod autodiff;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod pca;
pub mod r1pca;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use gaussian::{CovarianceModel, SampleSet};
pub use linalg::{EigenDecomposition, Matrix};
pub use nn::{CriticNet, LinearGenerator};
pub use pca::PcaSolution;
pub use r1pca::{KeyConditionReport, SubspaceBasis};
pub use rng::RngStream;
pub use train::{Algorithm, RunLog, TrainConfig};

/// Formats a real with 17 significant digits, enough for a bitwise
/// round-trip through `str::parse::<f64>`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
