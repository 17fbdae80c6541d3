//! Divergences between zero-mean Gaussians and Wasserstein-1 oracles.
//!
//! KL and JSD treat degenerate covariances through their column spans: two
//! Gaussians with different spans are mutually singular, so the JSD is
//! exactly `ln 2` and the KL is infinite. With equal spans both are computed
//! in coordinates of the common span.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceModel, SampleSet};
use crate::linalg::{dot, sym_eig, EigenDecomposition, Matrix};
use crate::r1pca::{residual_objective, shard_sizes, SubspaceBasis};
use crate::rng::RngStream;

/// Eigenvalues above this count toward the rank.
pub const RANK_TOL: f64 = 1e-10;
/// Largest principal angle at which two spans are considered equal.
pub const SPAN_ANGLE_TOL: f64 = 1e-8;
/// Size cap for the exact assignment oracle.
pub const MAX_EXACT_N: usize = 1024;

/// Zero-mean Gaussian `N(0, cov)`, possibly degenerate.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    pub dim: usize,
    pub cov: Matrix,
    pub rank: usize,
    eig: EigenDecomposition,
}

impl GaussianDist {
    pub fn new(cov: Matrix) -> Result<Self> {
        let cov = cov.symmetrized();
        let eig = sym_eig(&cov)?;
        let floor = -1e-10 * eig.eigenvalues[0].abs().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < floor) {
            return Err(Error::Domain("covariance is not positive semidefinite".into()));
        }
        let rank = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOL).count();
        Ok(Self { dim: cov.rows(), cov, rank, eig })
    }

    pub fn from_model(model: &CovarianceModel) -> Result<Self> {
        Self::new(model.k_y.clone())
    }

    /// Law of `G x` with `x ~ N(0, I)`: covariance `G Gᵀ`.
    pub fn from_generator(g: &Matrix) -> Result<Self> {
        Self::new(g.matmul_t(g)?)
    }

    /// Orthonormal basis of the column span (`dim x rank`).
    pub fn span_basis(&self) -> Matrix {
        self.eig.top_vectors(self.rank)
    }
}

/// Sine of the largest principal angle between two column spans of equal
/// dimension: `‖(I − B_q B_qᵀ) B_p‖₂`.
pub fn max_principal_sine(bp: &Matrix, bq: &Matrix) -> Result<f64> {
    if bp.shape() != bq.shape() {
        return Err(Error::Dimension(format!("span bases {:?} vs {:?}", bp.shape(), bq.shape())));
    }
    if bp.cols() == 0 {
        return Ok(0.0);
    }
    let resid = bp.sub(&bq.matmul(&bq.t_matmul(bp)?)?);
    let gram = resid.t_matmul(&resid)?.symmetrized();
    Ok(sym_eig(&gram)?.eigenvalues[0].max(0.0).sqrt().min(1.0))
}

fn same_support(p: &GaussianDist, q: &GaussianDist) -> Result<bool> {
    if p.rank != q.rank {
        return Ok(false);
    }
    Ok(max_principal_sine(&p.span_basis(), &q.span_basis())?.asin() <= SPAN_ANGLE_TOL)
}

fn check_dims(p: &GaussianDist, q: &GaussianDist) -> Result<()> {
    if p.dim != q.dim {
        return Err(Error::Dimension(format!("dimensions {} vs {}", p.dim, q.dim)));
    }
    Ok(())
}

/// Covariances restricted to a basis `b`: `bᵀ K b`, eigendecomposed.
fn restricted(k: &Matrix, b: &Matrix) -> Result<EigenDecomposition> {
    sym_eig(&b.t_matmul(&k.matmul(b)?)?.symmetrized())
}

/// `KL(p ‖ q)`; `+∞` unless both have the same support.
pub fn gaussian_kl(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    check_dims(p, q)?;
    if !same_support(p, q)? {
        return Ok(f64::INFINITY);
    }
    if p.rank == 0 {
        return Ok(0.0);
    }
    let b = q.span_basis();
    let ep = restricted(&p.cov, &b)?;
    let eq = restricted(&q.cov, &b)?;
    let kp = ep.reconstruct();
    let k = p.rank as f64;
    let mut trace = 0.0;
    for (i, &l) in eq.eigenvalues.iter().enumerate() {
        let v = eq.eigenvectors.column(i);
        trace += dot(&v, &kp.matvec(&v)?) / l;
    }
    let logdet = |e: &EigenDecomposition| e.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
    Ok((0.5 * (trace - k + logdet(&eq) - logdet(&ep))).max(0.0))
}

/// Monte-Carlo or analytic Jensen–Shannon divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsdEstimate {
    /// Clipped to `[0, ln 2]`.
    pub value: f64,
    pub std_err: f64,
    /// Unclipped Monte-Carlo mean.
    pub raw: f64,
    /// True when the supports differ and `ln 2` is returned exactly.
    pub analytic: bool,
}

/// Log-density of `N(0, K)` in span coordinates, with `K = V diag(λ) Vᵀ`.
struct LogDensity {
    eig: EigenDecomposition,
    norm: f64,
}

impl LogDensity {
    fn new(eig: EigenDecomposition) -> Self {
        let k = eig.eigenvalues.len() as f64;
        let logdet: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        Self { norm: -0.5 * (logdet + k * (2.0 * std::f64::consts::PI).ln()), eig }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for (i, &l) in self.eig.eigenvalues.iter().enumerate() {
            let c: f64 = (0..x.len()).map(|a| self.eig.eigenvectors[(a, i)] * x[a]).sum();
            quad += c * c / l;
        }
        self.norm - 0.5 * quad
    }

    fn sample(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &l) in self.eig.eigenvalues.iter().enumerate() {
            let s = l.sqrt() * z[i];
            for (a, o) in out.iter_mut().enumerate() {
                *o += self.eig.eigenvectors[(a, i)] * s;
            }
        }
    }
}

/// `ln(2a / (a + b))` for log-densities `la`, `lb`.
fn log_ratio_to_mixture(la: f64, lb: f64) -> f64 {
    let m = la.max(lb);
    std::f64::consts::LN_2 + la - (m + ((la - m).exp() + (lb - m).exp()).ln())
}

pub fn jsd_gaussian(p: &GaussianDist, q: &GaussianDist, n_mc: usize, rng: &RngStream) -> Result<JsdEstimate> {
    check_dims(p, q)?;
    if n_mc < 2 {
        return Err(Error::Domain(format!("n_mc must be >= 2, got {n_mc}")));
    }
    if !same_support(p, q)? {
        let ln2 = std::f64::consts::LN_2;
        return Ok(JsdEstimate { value: ln2, std_err: 0.0, raw: ln2, analytic: true });
    }
    let k = p.rank;
    if k == 0 {
        return Ok(JsdEstimate { value: 0.0, std_err: 0.0, raw: 0.0, analytic: false });
    }
    let b = q.span_basis();
    let dp = LogDensity::new(restricted(&p.cov, &b)?);
    let dq = LogDensity::new(restricted(&q.cov, &b)?);
    let parts: Vec<(f64, f64)> = shard_sizes(n_mc)
        .into_par_iter()
        .map(|(shard, count)| {
            let mut g = rng.derive(shard).open();
            let (mut z, mut x) = (vec![0.0; k], vec![0.0; k]);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                g.fill_normal(&mut z);
                dp.sample(&z, &mut x);
                let tp = log_ratio_to_mixture(dp.eval(&x), dq.eval(&x));
                g.fill_normal(&mut z);
                dq.sample(&z, &mut x);
                let tq = log_ratio_to_mixture(dq.eval(&x), dp.eval(&x));
                let t = 0.5 * (tp + tq);
                s1 += t;
                s2 += t * t;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = n_mc as f64;
    let raw = s1 / n;
    let var = ((s2 / n - raw * raw) * n / (n - 1.0)).max(0.0);
    Ok(JsdEstimate {
        value: raw.clamp(0.0, std::f64::consts::LN_2),
        std_err: (var / n).sqrt(),
        raw,
        analytic: false,
    })
}

/// `D*(z) = p(z) / (p(z) + q(z))`.
pub fn optimal_discriminator(p_density: f64, q_density: f64) -> Result<f64> {
    if !(p_density >= 0.0 && q_density >= 0.0) || !p_density.is_finite() || !q_density.is_finite() {
        return Err(Error::Domain(format!("densities must be finite and >= 0, got {p_density}, {q_density}")));
    }
    if p_density == 0.0 && q_density == 0.0 {
        return Err(Error::Domain("both densities are zero".into()));
    }
    Ok(p_density / (p_density + q_density))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMethod {
    Projection,
    ExactAssignment,
}

/// Transport cost of a coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingCost {
    pub cost: f64,
    pub method: CouplingMethod,
    /// Zero for exact costs.
    pub std_err: f64,
}

/// `E‖Y − UUᵀY‖`: the cost of coupling `Y` with its projection.
pub fn projection_coupling_cost(
    cov: &CovarianceModel,
    basis: &SubspaceBasis,
    n_mc: usize,
    rng: &RngStream,
) -> Result<CouplingCost> {
    let (cost, std_err) = residual_objective(cov, basis, n_mc, rng)?;
    Ok(CouplingCost { cost, method: CouplingMethod::Projection, std_err })
}

fn check_pair(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!("sample dimensions {} vs {}", a.dim, b.dim)));
    }
    if a.n != b.n || a.n == 0 {
        return Err(Error::Unsupported(format!("need equal nonzero sizes, got {} and {}", a.n, b.n)));
    }
    Ok(())
}

/// Exact `W1` between the uniform empirical measures on `a` and `b`.
pub fn empirical_w1_exact(a: &SampleSet, b: &SampleSet) -> Result<CouplingCost> {
    check_pair(a, b)?;
    if a.n > MAX_EXACT_N {
        return Err(Error::Unsupported(format!("n={} exceeds the exact-assignment cap {MAX_EXACT_N}", a.n)));
    }
    let n = a.n;
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        let ai = a.sample(i);
        let row = cost.row_mut(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = ai.iter().zip(b.sample(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    let (_, total) = min_cost_assignment(&cost)?;
    Ok(CouplingCost { cost: total / n as f64, method: CouplingMethod::ExactAssignment, std_err: 0.0 })
}

/// `(1/n) Σ ‖a_i − b_i‖`: the cost of the coupling that pairs samples by index.
pub fn paired_cost(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    check_pair(a, b)?;
    let total: f64 = (0..a.n)
        .map(|i| a.sample(i).iter().zip(b.sample(i)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    Ok(total / a.n as f64)
}
