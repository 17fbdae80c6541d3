//! Ground-truth covariances, Gaussian sampling and empirical covariances.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, sym_eig, EigenDecomposition, Matrix};
use crate::rng::RngStream;

const PSD_TOL: f64 = 1e-10;

/// A zero-mean Gaussian covariance `K_Y` together with its
/// eigendecomposition `V Σ Vᵀ` and a Cholesky-type factor for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub d: usize,
    pub k_y: Matrix,
    pub eig: EigenDecomposition,
    factor: Matrix,
}

impl CovarianceModel {
    /// Wraps an arbitrary symmetric PSD matrix without renormalizing it.
    pub fn from_matrix(k: Matrix) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                k.rows(),
                k.cols()
            )));
        }
        let k = k.symmetrized();
        let eig = sym_eig(&k)?;
        let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if min < -PSD_TOL * k.max_abs().max(1.0) {
            return Err(Error::Domain(format!(
                "covariance is not PSD (min eigenvalue {min:.3e})"
            )));
        }
        let factor = cholesky_factor(&k)?;
        Ok(Self { d: k.rows(), k_y: k, eig, factor })
    }

    /// Lower-triangular `L` with `L Lᵀ = K_Y`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// `σ_i²` in descending order.
    pub fn spectrum(&self) -> &[f64] {
        &self.eig.eigenvalues
    }

    /// Leading `r` eigenvectors `V_r`.
    pub fn principal_basis(&self, r: usize) -> Matrix {
        self.eig.top_vectors(r)
    }
}

/// Draws `K_Y ∝ A diag(s²) Aᵀ` with `A_ij ~ N(0,1)` and
/// `s_i² ~ Uniform(0, 10)`, normalized to unit Frobenius norm.
///
/// Draw order: the `d x d` entries of `A` row-major, then the `d` values
/// `s_i²`.
pub fn generate_covariance(d: usize, rng: &RngStream) -> Result<CovarianceModel> {
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    let mut g = rng.open();
    let mut a = Matrix::zeros(d, d);
    g.fill_normal(a.as_mut_slice());
    let s2: Vec<f64> = (0..d).map(|_| g.uniform_range(0.0, 10.0)).collect();
    let mut scaled = a.clone();
    for i in 0..d {
        for (j, &s) in s2.iter().enumerate() {
            scaled[(i, j)] *= s;
        }
    }
    let k = scaled.matmul_t(&a)?.symmetrized();
    let nrm = k.frobenius_norm();
    CovarianceModel::from_matrix(k.scale(1.0 / nrm))
}

/// `n` samples stored as rows of an `n x dim` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub n: usize,
    pub dim: usize,
    pub samples: Matrix,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(samples: Matrix, seed: u64) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Domain("sample set must be non-empty".into()));
        }
        if !samples.is_finite() {
            return Err(Error::Domain("sample set has non-finite entries".into()));
        }
        Ok(Self { n: samples.rows(), dim: samples.cols(), samples, seed })
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    /// CSV with header `dim=<d>,n=<n>,seed=<seed>` and one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = format!("dim={},n={},seed={}\n", self.dim, self.n, self.seed);
        for i in 0..self.n {
            for (j, x) in self.sample(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", crate::fmt_real(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty sample file".into()))?;
        let mut dim = None;
        let mut n = None;
        let mut seed = None;
        for field in header.split(',') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
            let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| Error::Parse(e.to_string()));
            match k.trim() {
                "dim" => dim = Some(parse(v)? as usize),
                "n" => n = Some(parse(v)? as usize),
                "seed" => seed = Some(parse(v)?),
                other => return Err(Error::Parse(format!("unknown header key {other:?}"))),
            }
        }
        let (dim, n, seed) = match (dim, n, seed) {
            (Some(d), Some(n), Some(s)) => (d, n, s),
            _ => return Err(Error::Parse("header must carry dim, n and seed".into())),
        };
        let mut data = Vec::with_capacity(dim * n);
        let mut rows = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let before = data.len();
            for tok in line.split(',') {
                data.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{tok:?}: {e}")))?,
                );
            }
            if data.len() - before != dim {
                return Err(Error::Parse(format!("row {rows} has {} values, expected {dim}", data.len() - before)));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse(format!("header says n={n} but found {rows} rows")));
        }
        SampleSet::new(Matrix::from_vec(n, dim, data)?, seed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Rows `L z` with `z` standard normal; draws are row-major per sample.
pub fn sample_gaussian(cov: &CovarianceModel, n: usize, rng: &RngStream) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let d = cov.d;
    let l = cov.factor();
    let mut g = rng.open();
    let mut out = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        g.fill_normal(&mut z);
        let row = out.row_mut(i);
        for (a, y) in row.iter_mut().enumerate() {
            // L is lower triangular.
            *y = l.row(a)[..=a].iter().zip(&z).map(|(x, w)| x * w).sum();
        }
    }
    SampleSet::new(out, rng.seed)
}

/// `n` latent vectors from `N(0, I_r)`.
pub fn sample_latent(r: usize, n: usize, rng: &RngStream) -> Result<SampleSet> {
    if n == 0 || r == 0 {
        return Err(Error::Domain("latent sample needs r >= 1 and n >= 1".into()));
    }
    let mut g = rng.open();
    let mut out = Matrix::zeros(n, r);
    g.fill_normal(out.as_mut_slice());
    SampleSet::new(out, rng.seed)
}

/// `(1/n) Σ y_i y_iᵀ` (zero-mean model, no centering).
pub fn empirical_covariance(s: &SampleSet) -> Matrix {
    let x = &s.samples;
    x.t_matmul(x)
        .expect("t_matmul of a matrix with itself")
        .scale(1.0 / s.n as f64)
        .symmetrized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_distance;

    #[test]
    fn generated_covariance_has_unit_norm() {
        for seed in 0..5 {
            let c = generate_covariance(32, &RngStream::new(seed, 0)).unwrap();
            assert!((c.k_y.frobenius_norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let a = generate_covariance(6, &RngStream::new(11, 2)).unwrap();
        let b = generate_covariance(6, &RngStream::new(11, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_covariances_are_psd() {
        for seed in 0..100 {
            let c = generate_covariance(8, &RngStream::new(seed, 0)).unwrap();
            let e = sym_eig(&c.k_y).unwrap();
            assert!(*e.eigenvalues.last().unwrap() >= -1e-10);
            assert!(frobenius_distance(&e.reconstruct(), &c.k_y).unwrap() < 1e-9);
        }
    }

    #[test]
    fn generate_rejects_small_dimension() {
        assert!(matches!(generate_covariance(1, &RngStream::new(0, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn single_sample_is_deterministic() {
        let c = CovarianceModel::from_matrix(Matrix::identity(2)).unwrap();
        let a = sample_gaussian(&c, 1, &RngStream::new(3, 0)).unwrap();
        let b = sample_gaussian(&c, 1, &RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.shape(), (1, 2));
    }

    #[test]
    fn sample_covariance_matches_diag() {
        let k = Matrix::from_diag(&[0.8, 0.6]);
        let c = CovarianceModel::from_matrix(k.clone()).unwrap();
        let s = sample_gaussian(&c, 100_000, &RngStream::new(1, 0)).unwrap();
        let e = empirical_covariance(&s);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[(i, j)] - k[(i, j)]).abs() < 0.02, "{e:?}");
            }
        }
    }

    #[test]
    fn degenerate_covariance_samples_on_line() {
        let k = Matrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        let c = CovarianceModel::from_matrix(k).unwrap();
        let s = sample_gaussian(&c, 1000, &RngStream::new(2, 0)).unwrap();
        for i in 0..s.n {
            let y = s.sample(i);
            assert!((y[0] - y[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn latent_variance_one_dim() {
        let s = sample_latent(1, 1_000_000, &RngStream::new(4, 0)).unwrap();
        let var = empirical_covariance(&s)[(0, 0)];
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn latent_deterministic_and_isotropic() {
        let a = sample_latent(8, 100_000, &RngStream::new(6, 1)).unwrap();
        assert_eq!(a, sample_latent(8, 100_000, &RngStream::new(6, 1)).unwrap());
        let e = empirical_covariance(&a);
        let id = Matrix::identity(8);
        for i in 0..8 {
            for j in 0..8 {
                assert!((e[(i, j)] - id[(i, j)]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn empirical_covariance_examples() {
        let s = SampleSet::new(Matrix::from_rows(&[&[1.0, 2.0]]).unwrap(), 0).unwrap();
        assert_eq!(empirical_covariance(&s), Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap());
        let s = SampleSet::new(Matrix::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap(), 0).unwrap();
        assert_eq!(empirical_covariance(&s), Matrix::from_diag(&[1.0, 0.0]));
    }

    #[test]
    fn empirical_covariance_converges() {
        let c = generate_covariance(16, &RngStream::new(8, 0)).unwrap();
        let s = sample_gaussian(&c, 100_000, &RngStream::new(8, 1)).unwrap();
        assert!(frobenius_distance(&empirical_covariance(&s), &c.k_y).unwrap() <= 0.02);
    }

    #[test]
    fn empirical_error_shrinks_with_sample_size() {
        // Quadrupling n should halve the mean Frobenius error (±50%).
        let c = generate_covariance(4, &RngStream::new(21, 0)).unwrap();
        let mean_err = |n: usize| {
            (0..40)
                .map(|s| {
                    let x = sample_gaussian(&c, n, &RngStream::new(100 + s, n as u64)).unwrap();
                    frobenius_distance(&empirical_covariance(&x), &c.k_y).unwrap()
                })
                .sum::<f64>()
                / 40.0
        };
        let ratio = mean_err(2000) / mean_err(8000);
        assert!((1.0..=3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_round_trip() {
        let c = generate_covariance(3, &RngStream::new(1, 1)).unwrap();
        let s = sample_gaussian(&c, 5, &RngStream::new(77, 0)).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("dim=3,n=5,seed=77\n"));
        assert_eq!(SampleSet::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(SampleSet::from_csv("dim=2,n=1,seed=0\n1.0\n").is_err());
        assert!(SampleSet::from_csv("dim=2,n=2,seed=0\n1.0,2.0\n").is_err());
        assert!(SampleSet::from_csv("n=1,seed=0\n1.0\n").is_err());
    }
}
