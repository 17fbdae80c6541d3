//! Closed-form rank-r PCA generators: population and empirical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{empirical_covariance, CovarianceModel, SampleSet};
use crate::linalg::{frobenius_distance, Matrix};

/// Gap below which `σ_r²` and `σ_{r+1}²` are reported as tied.
pub const TIE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSolution {
    pub r: usize,
    /// `G* G*ᵀ = V diag(σ₁², …, σ_r², 0, …) Vᵀ`.
    pub generator_gram: Matrix,
    /// `d x r`, column `i` is `σ_i v_i`.
    pub basis: Matrix,
    /// `‖K − G* G*ᵀ‖_F`.
    pub residual: f64,
    /// `|σ_r² − σ_{r+1}²| < TIE_TOL`, so the optimal subspace is not unique.
    pub spectral_tie: bool,
}

pub fn population_pca(cov: &CovarianceModel, r: usize) -> Result<PcaSolution> {
    let d = cov.d;
    if r == 0 || r > d {
        return Err(Error::Domain(format!("rank r={r} outside 1..={d}")));
    }
    let spectrum = cov.spectrum();
    let kept: Vec<f64> = spectrum
        .iter()
        .enumerate()
        .map(|(i, &s)| if i < r { s } else { 0.0 })
        .collect();
    let generator_gram = cov.eig.reconstruct_with(&kept).symmetrized();
    let mut basis = cov.principal_basis(r);
    for j in 0..r {
        let s = spectrum[j].max(0.0).sqrt();
        for i in 0..d {
            basis[(i, j)] *= s;
        }
    }
    let residual = frobenius_distance(&cov.k_y, &generator_gram)?;
    let spectral_tie = r < d && (spectrum[r - 1] - spectrum[r]).abs() < TIE_TOL;
    Ok(PcaSolution { r, generator_gram, basis, residual, spectral_tie })
}

/// Population PCA of the (uncentered, unnormalized) empirical covariance.
pub fn empirical_pca(samples: &SampleSet, r: usize) -> Result<PcaSolution> {
    if r == 0 || r > samples.dim {
        return Err(Error::Domain(format!("rank r={r} outside 1..={}", samples.dim)));
    }
    let cov = CovarianceModel::from_matrix(empirical_covariance(samples))?;
    population_pca(&cov, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{generate_covariance, sample_gaussian};
    use crate::linalg::{orthonormalize_columns, sym_eig};
    use crate::rng::RngStream;

    #[test]
    fn diagonal_rank_one() {
        let c = CovarianceModel::from_matrix(Matrix::from_diag(&[0.8, 0.6])).unwrap();
        let p = population_pca(&c, 1).unwrap();
        assert!(frobenius_distance(&p.generator_gram, &Matrix::from_diag(&[0.8, 0.0])).unwrap() < 1e-15);
        assert!((p.residual - 0.6).abs() < 1e-15);
        assert!(!p.spectral_tie);
    }

    #[test]
    fn full_rank_reproduces_covariance() {
        let c = generate_covariance(6, &RngStream::new(3, 0)).unwrap();
        let p = population_pca(&c, 6).unwrap();
        assert!(frobenius_distance(&p.generator_gram, &c.k_y).unwrap() < 1e-9);
        assert!(p.residual < 1e-9);
    }

    #[test]
    fn residual_matches_tail_spectrum() {
        let c = generate_covariance(8, &RngStream::new(4, 0)).unwrap();
        let p = population_pca(&c, 4).unwrap();
        // Independent route: spectrum from a fresh eigendecomposition.
        let e = sym_eig(&c.k_y).unwrap();
        let tail: f64 = e.eigenvalues[4..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((p.residual - tail).abs() < 1e-9);
        let gram = p.basis.matmul_t(&p.basis).unwrap();
        assert!(frobenius_distance(&gram, &p.generator_gram).unwrap() < 1e-9);
    }

    #[test]
    fn rank_out_of_range() {
        let c = CovarianceModel::from_matrix(Matrix::identity(3)).unwrap();
        assert!(population_pca(&c, 0).is_err());
        assert!(population_pca(&c, 4).is_err());
    }

    #[test]
    fn ties_are_flagged() {
        let c = CovarianceModel::from_matrix(Matrix::identity(3)).unwrap();
        assert!(population_pca(&c, 1).unwrap().spectral_tie);
        assert!(!population_pca(&c, 3).unwrap().spectral_tie);
    }

    #[test]
    fn empirical_two_points() {
        let s = SampleSet::new(Matrix::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap(), 0).unwrap();
        let p = empirical_pca(&s, 1).unwrap();
        assert!(frobenius_distance(&p.generator_gram, &Matrix::from_diag(&[1.0, 0.0])).unwrap() < 1e-15);
    }

    #[test]
    fn empirical_full_rank_is_empirical_covariance() {
        let c = generate_covariance(4, &RngStream::new(9, 0)).unwrap();
        let s = sample_gaussian(&c, 50, &RngStream::new(9, 1)).unwrap();
        let p = empirical_pca(&s, 4).unwrap();
        assert!(frobenius_distance(&p.generator_gram, &empirical_covariance(&s)).unwrap() < 1e-12);
    }

    #[test]
    fn empirical_approaches_population() {
        let c = generate_covariance(32, &RngStream::new(12, 0)).unwrap();
        let s = sample_gaussian(&c, 100_000, &RngStream::new(12, 1)).unwrap();
        let emp = empirical_pca(&s, 8).unwrap();
        let pop = population_pca(&c, 8).unwrap();
        assert!(frobenius_distance(&emp.generator_gram, &pop.generator_gram).unwrap() <= 0.05);
    }

    #[test]
    fn residual_nonincreasing_in_rank() {
        let c = generate_covariance(7, &RngStream::new(2, 0)).unwrap();
        let res: Vec<f64> = (1..=7).map(|r| population_pca(&c, r).unwrap().residual).collect();
        assert!(res.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(res[6] < 1e-9);
        for r in 1..=7 {
            let g = population_pca(&c, r).unwrap().generator_gram;
            assert!(*sym_eig(&g).unwrap().eigenvalues.last().unwrap() > -1e-12);
        }
    }

    #[test]
    fn brute_force_never_beats_pca_in_three_dims() {
        // Random orthonormal bases with random nonnegative spectra: none may
        // get closer to K than the PCA gram.
        let c = generate_covariance(3, &RngStream::new(31, 0)).unwrap();
        for r in 1..=2 {
            let best = population_pca(&c, r).unwrap().residual;
            let mut g = RngStream::new(31, r as u64).open();
            let scale = c.spectrum()[0] * 1.5;
            for _ in 0..100_000 {
                let mut raw = Matrix::zeros(3, r);
                g.fill_normal(raw.as_mut_slice());
                let Ok(u) = orthonormalize_columns(&raw) else { continue };
                let mut b = u.clone();
                for j in 0..r {
                    let s = g.uniform_range(0.0, scale);
                    for i in 0..3 {
                        b[(i, j)] *= s.sqrt();
                    }
                }
                let cand = b.matmul_t(&b).unwrap();
                let dist = frobenius_distance(&c.k_y, &cand).unwrap();
                assert!(dist >= best - 1e-9, "candidate {dist} beat pca {best}");
            }
        }
    }
}
