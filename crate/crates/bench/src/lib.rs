//! Benchmark fixtures.

use wganpca::experiment::experiment_covariance;
use wganpca::nn::glorot_init;
use wganpca::optim::OptimizerState;
use wganpca::r1pca::SubspaceBasis;
use wganpca::{CovarianceModel, CriticNet, Matrix, RngStream};

/// Random symmetric `d x d` matrix.
pub fn symmetric(d: usize, seed: u64) -> Matrix {
    let mut a = Matrix::zeros(d, d);
    RngStream::new(seed, 1).open().fill_normal(a.as_mut_slice());
    a.symmetrized()
}

/// Covariance of dimension `d` with its principal `r`-subspace.
pub fn covariance_with_basis(d: usize, r: usize) -> (CovarianceModel, SubspaceBasis) {
    let cov = experiment_covariance(0, d, 0).expect("d >= 2");
    let basis = SubspaceBasis::orthonormalized(&cov.principal_basis(r)).expect("orthonormal");
    (cov, basis)
}

/// Critic of widths `[d, hidden…, 1]` with a matching Adam state.
pub fn critic_with_adam(d: usize, hidden: &[usize]) -> (CriticNet, OptimizerState) {
    let mut sizes = vec![d];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let net = glorot_init(&sizes, &RngStream::new(0, 2)).expect("valid sizes");
    let shapes: Vec<_> = net.params().iter().map(|m| m.shape()).collect();
    let opt = OptimizerState::adam(0.5, 0.9, &shapes).expect("valid betas");
    (net, opt)
}

/// `rows x cols` standard-normal batch.
pub fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    RngStream::new(seed, 3).open().fill_normal(m.as_mut_slice());
    m
}
