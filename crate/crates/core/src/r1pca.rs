//! The R1-PCA reformulation of linear-generator WGAN:
//! `min_{UᵀU = I} E‖Y − UUᵀY‖`, its key-condition matrix
//! `M = E[YYᵀ / ‖Y − UUᵀY‖]`, and a fixed-point solver for
//! `U = top-r eigenvectors of M(U)`.
//!
//! All expectations are Monte-Carlo estimates over `Y ~ N(0, K_Y)`. Draws
//! are split in shards of [`MC_SHARD`] samples, shard `i` using
//! `rng.derive(i)`; shard results are reduced in index order so parallel
//! and sequential evaluation agree bit-for-bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::CovarianceModel;
use crate::linalg::{dot, frobenius_distance, orthonormalize_columns, sym_eig, EigenDecomposition, Matrix};
use crate::pca::TIE_TOL;
use crate::rng::{GaussianSource, RngStream};

pub const MC_SHARD: usize = 1 << 16;
const ORTHONORMAL_TOL: f64 = 1e-8;
/// Rotation applied to `V_r` to initialize the fixed-point iteration.
pub const INIT_ROTATION: f64 = 0.2;

/// A `d x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    u: Matrix,
}

impl SubspaceBasis {
    pub fn new(u: Matrix) -> Result<Self> {
        let err = frobenius_distance(&u.t_matmul(&u)?, &Matrix::identity(u.cols()))?;
        if err > ORTHONORMAL_TOL {
            return Err(Error::Domain(format!("basis is not orthonormal (‖UᵀU − I‖ = {err:.3e})")));
        }
        Ok(Self { u })
    }

    /// Orthonormalizes arbitrary full-column-rank input.
    pub fn orthonormalized(a: &Matrix) -> Result<Self> {
        Self::new(orthonormalize_columns(a)?)
    }

    /// Span of the standard basis vectors `e_i` for `i in indices`.
    pub fn coordinate(d: usize, indices: &[usize]) -> Result<Self> {
        let mut u = Matrix::zeros(d, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            if i >= d {
                return Err(Error::Dimension(format!("coordinate {i} out of range for d={d}")));
            }
            u[(i, j)] = 1.0;
        }
        Self::new(u)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.u
    }

    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn projector(&self) -> Matrix {
        self.u.projector()
    }

    /// `‖UUᵀ − U'U'ᵀ‖_F`.
    pub fn projector_distance(&self, other: &SubspaceBasis) -> Result<f64> {
        frobenius_distance(&self.projector(), &other.projector())
    }

    /// Residual `y − UUᵀy` written into `out`.
    fn residual_into(&self, y: &[f64], coef: &mut [f64], out: &mut [f64]) {
        let (d, r) = self.u.shape();
        coef.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..d {
            let row = self.u.row(i);
            for k in 0..r {
                coef[k] += row[k] * y[i];
            }
        }
        for i in 0..d {
            out[i] = y[i] - dot(self.u.row(i), coef);
        }
    }
}

/// `y = y_s + y_sperp` with `y_s = UUᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionDecomposition {
    pub y_s: Vec<f64>,
    pub y_sperp: Vec<f64>,
}

pub fn project_decompose(y: &[f64], basis: &SubspaceBasis) -> Result<ProjectionDecomposition> {
    if y.len() != basis.dim() {
        return Err(Error::Dimension(format!(
            "vector of length {} against basis in R^{}",
            y.len(),
            basis.dim()
        )));
    }
    let mut coef = vec![0.0; basis.rank()];
    let mut y_sperp = vec![0.0; y.len()];
    basis.residual_into(y, &mut coef, &mut y_sperp);
    let y_s = y.iter().zip(&y_sperp).map(|(a, b)| a - b).collect();
    Ok(ProjectionDecomposition { y_s, y_sperp })
}

pub(crate) fn shard_sizes(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(MC_SHARD))
        .map(|i| (i as u64, MC_SHARD.min(n - i * MC_SHARD)))
        .collect()
}

fn draw(cov: &CovarianceModel, g: &mut GaussianSource, z: &mut [f64], y: &mut [f64]) {
    g.fill_normal(z);
    let l = cov.factor();
    for (a, ya) in y.iter_mut().enumerate() {
        *ya = dot(&l.row(a)[..=a], &z[..=a]);
    }
}

/// Monte-Carlo estimate of `E‖Y − UUᵀY‖` and its standard error.
pub fn residual_objective(
    cov: &CovarianceModel,
    basis: &SubspaceBasis,
    n_mc: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if basis.dim() != cov.d {
        return Err(Error::Dimension(format!("basis in R^{} for d={}", basis.dim(), cov.d)));
    }
    if n_mc < 100 {
        return Err(Error::Domain(format!("n_mc must be >= 100, got {n_mc}")));
    }
    if basis.rank() == cov.d {
        return Ok((0.0, 0.0));
    }
    let d = cov.d;
    let parts: Vec<(f64, f64)> = shard_sizes(n_mc)
        .into_par_iter()
        .map(|(shard, count)| {
            let mut g = rng.derive(shard).open();
            let (mut z, mut y, mut res) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut coef = vec![0.0; basis.rank()];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                draw(cov, &mut g, &mut z, &mut y);
                basis.residual_into(&y, &mut coef, &mut res);
                let v = dot(&res, &res).sqrt();
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = n_mc as f64;
    let mean = s1 / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte-Carlo estimate of the key-condition matrix and diagnostics in the
/// true eigenbasis of `K_Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyConditionReport {
    pub m_hat: Matrix,
    pub m_eigs: EigenDecomposition,
    /// Largest `|(VᵀM̂V)_jk|`, `j ≠ k`.
    pub cross_term_max: f64,
    /// `min_{j<r} (VᵀM̂V)_jj > max_{k≥r} (VᵀM̂V)_kk`.
    pub ordering_ok: bool,
    /// Largest entrywise standard error of `M̂`.
    pub std_err: f64,
}

impl KeyConditionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Norm of the projection of each of the top-`r` eigenvectors of `M̂`
    /// onto `span(V_r)`; 1 means perfectly inside the principal subspace.
    pub fn principal_alignment(&self, cov: &CovarianceModel, r: usize) -> Vec<f64> {
        let vr = cov.principal_basis(r);
        (0..r)
            .map(|k| {
                let m = self.m_eigs.eigenvectors.column(k);
                vr.t_matmul(&Matrix::column_vector(&m))
                    .expect("shapes agree")
                    .frobenius_norm()
            })
            .collect()
    }
}

pub fn estimate_m_matrix(
    cov: &CovarianceModel,
    basis: &SubspaceBasis,
    n_mc: usize,
    rng: &RngStream,
) -> Result<KeyConditionReport> {
    let d = cov.d;
    let r = basis.rank();
    if basis.dim() != d {
        return Err(Error::Dimension(format!("basis in R^{} for d={d}", basis.dim())));
    }
    if r + 2 > d {
        return Err(Error::Unsupported(format!(
            "key-condition matrix needs d − r >= 2 (d={d}, r={r}); \
             E[1/‖Y − UUᵀY‖] is infinite for a one-dimensional residual"
        )));
    }
    if n_mc < 1000 {
        return Err(Error::Domain(format!("n_mc must be >= 1000, got {n_mc}")));
    }
    let tri = d * (d + 1) / 2;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = shard_sizes(n_mc)
        .into_par_iter()
        .map(|(shard, count)| {
            let mut g = rng.derive(shard).open();
            let (mut z, mut y, mut res) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut coef = vec![0.0; r];
            let mut s1 = vec![0.0; tri];
            let mut s2 = vec![0.0; tri];
            for _ in 0..count {
                draw(cov, &mut g, &mut z, &mut y);
                basis.residual_into(&y, &mut coef, &mut res);
                let w = 1.0 / dot(&res, &res).sqrt();
                let mut idx = 0;
                for i in 0..d {
                    let wyi = w * y[i];
                    for j in i..d {
                        let f = wyi * y[j];
                        s1[idx] += f;
                        s2[idx] += f * f;
                        idx += 1;
                    }
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; tri];
    let mut s2 = vec![0.0; tri];
    for (a, b) in &parts {
        s1.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        s2.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    let n = n_mc as f64;
    let mut m_hat = Matrix::zeros(d, d);
    let mut std_err: f64 = 0.0;
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            let mean = s1[idx] / n;
            let var = ((s2[idx] / n - mean * mean) * n / (n - 1.0)).max(0.0);
            std_err = std_err.max((var / n).sqrt());
            m_hat[(i, j)] = mean;
            m_hat[(j, i)] = mean;
            idx += 1;
        }
    }
    let m_eigs = sym_eig(&m_hat)?;

    let v = &cov.eig.eigenvectors;
    let rotated = v.t_matmul(&m_hat)?.matmul(v)?;
    let mut cross_term_max: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                cross_term_max = cross_term_max.max(rotated[(i, j)].abs());
            }
        }
    }
    let diag = rotated.diag();
    let top_min = diag[..r].iter().copied().fold(f64::INFINITY, f64::min);
    let rest_max = diag[r..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(KeyConditionReport { m_hat, m_eigs, cross_term_max, ordering_ok: top_min > rest_max, std_err })
}

/// Outcome of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyConditionSolution {
    pub basis: SubspaceBasis,
    pub iterations: usize,
    /// Projector change of the final iteration.
    pub last_step: f64,
    /// `σ_r² ≈ σ_{r+1}²`: the optimal subspace is not unique.
    pub spectral_tie: bool,
    /// Key-condition estimate at the second-to-last iterate.
    pub report: KeyConditionReport,
}

/// Orthogonal rotation by `angle` in a uniformly random plane of `R^d`.
pub fn random_plane_rotation(d: usize, angle: f64, rng: &RngStream) -> Result<Matrix> {
    let mut g = rng.open();
    let mut raw = Matrix::zeros(d, 2);
    g.fill_normal(raw.as_mut_slice());
    let pq = orthonormalize_columns(&raw)?;
    let (p, q) = (pq.column(0), pq.column(1));
    let (c, s) = (angle.cos(), angle.sin());
    let mut rot = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            rot[(i, j)] += (c - 1.0) * (p[i] * p[j] + q[i] * q[j]) + s * (q[i] * p[j] - p[i] * q[j]);
        }
    }
    Ok(rot)
}

/// Fixed-point iteration `U ← top-r eigenvectors of M̂(U)`.
///
/// Every iteration reuses the same Monte-Carlo draws (`rng.derive(1)`), so
/// the iteration is the reweighted least-squares scheme for the sample
/// objective `(1/n) Σ ‖y_i − UUᵀy_i‖`, which it decreases monotonically.
/// The start is `V_r` rotated by [`INIT_ROTATION`] radians in a random plane
/// drawn from `rng.derive(0)`.
pub fn solve_key_condition(
    cov: &CovarianceModel,
    r: usize,
    n_mc: usize,
    max_iter: usize,
    tol: f64,
    rng: &RngStream,
) -> Result<KeyConditionSolution> {
    let d = cov.d;
    if r == 0 || r + 2 > d {
        return Err(Error::Unsupported(format!(
            "fixed-point solver needs 1 <= r <= d − 2 (d={d}, r={r})"
        )));
    }
    if tol <= 0.0 || tol.is_nan() {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let rot = random_plane_rotation(d, INIT_ROTATION, &rng.derive(0))?;
    let mut basis = SubspaceBasis::orthonormalized(&rot.matmul(&cov.principal_basis(r))?)?;
    let mc = rng.derive(1);
    let spectrum = cov.spectrum();
    let spectral_tie = (spectrum[r - 1] - spectrum[r]).abs() < TIE_TOL;
    let mut last_step = f64::INFINITY;
    for it in 1..=max_iter {
        let report = estimate_m_matrix(cov, &basis, n_mc, &mc)?;
        let next = SubspaceBasis::orthonormalized(&report.m_eigs.top_vectors(r))?;
        last_step = next.projector_distance(&basis)?;
        basis = next;
        if last_step < tol {
            return Ok(KeyConditionSolution { basis, iterations: it, last_step, spectral_tie, report });
        }
    }
    Err(Error::Convergence { iterations: max_iter, last_step })
}

/// `G* G*ᵀ = UUᵀ K_Y UUᵀ`.
pub fn generator_from_subspace(cov: &CovarianceModel, basis: &SubspaceBasis) -> Result<Matrix> {
    if basis.dim() != cov.d {
        return Err(Error::Dimension(format!("basis in R^{} for d={}", basis.dim(), cov.d)));
    }
    let p = basis.projector();
    Ok(p.matmul(&cov.k_y)?.matmul(&p)?.symmetrized())
}
