//! Linear generator and fully connected ReLU critic.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

/// `ỹ = G x` with `G ∈ R^{d x r}`; no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGenerator {
    pub g: Matrix,
}

impl LinearGenerator {
    pub fn new(g: Matrix) -> Result<Self> {
        if !g.is_finite() {
            return Err(Error::Domain("generator has non-finite entries".into()));
        }
        Ok(Self { g })
    }

    pub fn zeros(d: usize, r: usize) -> Self {
        Self { g: Matrix::zeros(d, r) }
    }

    /// Glorot-uniform entries with `fan_in = r`, `fan_out = d`.
    pub fn glorot(d: usize, r: usize, rng: &RngStream) -> Self {
        Self { g: glorot_matrix(d, r, r, d, &mut rng.open()) }
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.g.cols()
    }

    /// Covariance of the generated law, `G Gᵀ`.
    pub fn gram(&self) -> Matrix {
        self.g.matmul_t(&self.g).expect("shapes agree").symmetrized()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        Self::new(Matrix::from_vec(g.g.rows(), g.g.cols(), g.g.into_vec())?)
    }
}

/// Latent batch `x` (`n x r`, one sample per row) to outputs (`n x d`).
pub fn generator_forward(gen: &LinearGenerator, x: &Matrix) -> Result<Matrix> {
    if x.cols() != gen.latent_dim() {
        return Err(Error::Dimension(format!("latents have {} columns, generator expects {}", x.cols(), gen.latent_dim())));
    }
    x.matmul_t(&gen.g)
}

/// Recorded form of [`generator_forward`].
pub fn generator_forward_tape(tape: &mut Tape, g: Var, x: Var) -> Result<Var> {
    let gt = tape.transpose(g)?;
    tape.matmul(x, gt)
}

fn glorot_matrix(rows: usize, cols: usize, fan_in: usize, fan_out: usize, g: &mut crate::rng::GaussianSource) -> Matrix {
    let b = glorot_bound(fan_in, fan_out);
    let mut m = Matrix::zeros(rows, cols);
    m.as_mut_slice().iter_mut().for_each(|x| *x = g.uniform_range(-b, b));
    m
}

/// `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fully connected critic: relu after every layer except the last, which is
/// affine with a single output. Weights are stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

/// Tape handles for a recorded critic.
#[derive(Debug, Clone)]
pub struct CriticVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl CriticVars {
    /// Parameters in the order of [`CriticNet::params`].
    pub fn params(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [*w, *b]).collect()
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::Config(format!("need at least two nonzero layer sizes, got {layer_sizes:?}")));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::Config("critic output size must be 1".into()));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn glorot_init(layer_sizes: &[usize], rng: &RngStream) -> Result<CriticNet> {
    check_sizes(layer_sizes)?;
    let mut g = rng.open();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        weights.push(glorot_matrix(w[0], w[1], w[0], w[1], &mut g));
        biases.push(Matrix::zeros(1, w[1]));
    }
    Ok(CriticNet { layer_sizes: layer_sizes.to_vec(), weights, biases })
}

impl CriticNet {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect();
        let biases = layer_sizes[1..].iter().map(|&n| Matrix::zeros(1, n)).collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// `w₀, b₀, w₁, b₁, …`
    pub fn params(&self) -> Vec<&Matrix> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Records the parameters on `tape`, as leaves when `trainable`,
    /// otherwise as constants.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Result<CriticVars> {
        let mut put = |m: &Matrix| if trainable { tape.leaf(m.clone()) } else { tape.constant(m.clone()) };
        let weights = self.weights.iter().map(&mut put).collect::<Result<Vec<_>>>()?;
        let biases = self.biases.iter().map(&mut put).collect::<Result<Vec<_>>>()?;
        Ok(CriticVars { weights, biases })
    }

    /// Critic values for a batch (`n x d` in, `n x 1` out), without
    /// keeping a tape.
    pub fn eval(&self, y: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false)?;
        let x = tape.constant(y.clone())?;
        let out = critic_forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.into_net()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Affine→relu chain with a final affine layer; `y` is `n x d`, result `n x 1`.
pub fn critic_forward(tape: &mut Tape, net: &CriticVars, y: Var) -> Result<Var> {
    let (rows, cols) = y.shape();
    let expected = net.weights.first().map(|w| w.shape().0).unwrap_or(0);
    if cols != expected {
        return Err(Error::Dimension(format!("critic expects inputs of width {expected}, got {rows}x{cols}")));
    }
    let last = net.weights.len() - 1;
    let mut h = y;
    for (k, (&w, &b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add_bias(z, b)?;
        if k < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// On-disk form: layer sizes and flat row-major arrays per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<&CriticNet> for Checkpoint {
    fn from(n: &CriticNet) -> Self {
        Self {
            layer_sizes: n.layer_sizes.clone(),
            weights: n.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: n.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }
}

impl Checkpoint {
    fn into_net(self) -> Result<CriticNet> {
        check_sizes(&self.layer_sizes)?;
        let layers = self.layer_sizes.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Parse(format!("checkpoint has {} weight and {} bias arrays for {layers} layers", self.weights.len(), self.biases.len())));
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (k, (w, b)) in self.weights.into_iter().zip(self.biases).enumerate() {
            let (i, o) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            weights.push(Matrix::from_vec(i, o, w).map_err(|e| Error::Parse(format!("layer {k} weights: {e}")))?);
            biases.push(Matrix::from_vec(1, o, b).map_err(|e| Error::Parse(format!("layer {k} biases: {e}")))?);
        }
        Ok(CriticNet { layer_sizes: self.layer_sizes, weights, biases })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{empirical_covariance, sample_latent};
    use crate::linalg::sym_eig;
    use crate::optim::clip_weights;
    use crate::SampleSet;
    use proptest::prelude::*;

    #[test]
    fn glorot_bound_and_range() {
        assert!((glorot_bound(64, 64) - 0.21651).abs() < 1e-5);
        let net = glorot_init(&[64, 64, 1], &RngStream::new(1, 0)).unwrap();
        let b = glorot_bound(64, 64);
        assert!(net.weights[0].as_slice().iter().all(|w| w.abs() < b));
        assert!(net.biases.iter().all(|b| b.as_slice().iter().all(|&x| x == 0.0)));
        let again = glorot_init(&[64, 64, 1], &RngStream::new(1, 0)).unwrap();
        assert_eq!(net, again);
        assert_ne!(net, glorot_init(&[64, 64, 1], &RngStream::new(2, 0)).unwrap());
    }

    #[test]
    fn glorot_rejects_bad_sizes() {
        assert!(glorot_init(&[4], &RngStream::new(0, 0)).is_err());
        assert!(glorot_init(&[4, 2], &RngStream::new(0, 0)).is_err());
        assert!(glorot_init(&[4, 0, 1], &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn generator_examples() {
        let x = Matrix::from_rows(&[&[5.0, 7.0], &[1.0, -1.0]]).unwrap();
        let zero = LinearGenerator::zeros(3, 2);
        assert_eq!(generator_forward(&zero, &x).unwrap(), Matrix::zeros(2, 3));
        let g = LinearGenerator::new(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(generator_forward(&g, &x).unwrap().row(0), &[5.0, 7.0, 0.0]);
        assert!(generator_forward(&g, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn generator_output_covariance_approaches_gram() {
        let g = LinearGenerator::glorot(5, 2, &RngStream::new(3, 0));
        let x = sample_latent(2, 100_000, &RngStream::new(3, 1)).unwrap();
        let y = SampleSet::new(generator_forward(&g, &x.samples).unwrap(), 0).unwrap();
        let diff = empirical_covariance(&y).sub(&g.gram());
        assert!(diff.max_abs() <= 0.02, "{}", diff.max_abs());
    }

    #[test]
    fn critic_examples() {
        let y = Matrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, 9.0]]).unwrap();
        let zero = CriticNet::zeros(&[3, 4, 1]).unwrap();
        assert_eq!(zero.eval(&y).unwrap(), Matrix::zeros(2, 1));

        let mut lin = CriticNet::zeros(&[3, 1]).unwrap();
        lin.weights[0] = Matrix::column_vector(&[1.0, 0.0, 0.0]);
        assert_eq!(lin.eval(&y).unwrap().as_slice(), &[1.0, 0.5]);
        assert!(lin.eval(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn batch_matches_per_sample() {
        let net = glorot_init(&[6, 64, 64, 64, 1], &RngStream::new(4, 0)).unwrap();
        let mut y = Matrix::zeros(20, 6);
        RngStream::new(4, 1).open().fill_normal(y.as_mut_slice());
        let batch = net.eval(&y).unwrap();
        for i in 0..20 {
            let one = net.eval(&Matrix::row_vector(y.row(i))).unwrap();
            assert!((one.as_slice()[0] - batch.as_slice()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn hidden_layers_use_relu_and_output_is_linear() {
        // 1 → 1 → 1 with w = 1, b = 0: D(y) = relu(y).
        let mut net = CriticNet::zeros(&[1, 1, 1]).unwrap();
        net.weights[0] = Matrix::scalar(1.0);
        net.weights[1] = Matrix::scalar(-1.0);
        let out = net.eval(&Matrix::column_vector(&[-2.0, 3.0])).unwrap();
        assert_eq!(out.as_slice(), &[0.0, -3.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = glorot_init(&[3, 5, 1], &RngStream::new(5, 0)).unwrap();
        let back = CriticNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let json = net.to_json().unwrap();
        assert!(json.contains("layer_sizes"));
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["layer_sizes"][0] = 4.into();
        assert!(CriticNet::from_json(&v.to_string()).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("critic.json");
        net.save(&p).unwrap();
        assert_eq!(CriticNet::load(&p).unwrap(), net);

        let g = LinearGenerator::glorot(4, 2, &RngStream::new(5, 1));
        assert_eq!(LinearGenerator::from_json(&g.to_json().unwrap()).unwrap(), g);
    }

    #[test]
    fn clipped_layers_obey_operator_norm_bound() {
        let mut net = glorot_init(&[16, 64, 64, 64, 1], &RngStream::new(6, 0)).unwrap();
        let c = 0.01;
        clip_weights(&mut net.params_mut(), c).unwrap();
        for w in &net.weights {
            let (fi, fo) = w.shape();
            let top = sym_eig(&w.t_matmul(w).unwrap()).unwrap().eigenvalues[0];
            assert!(top.sqrt() <= c * ((fi * fo) as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn generator_is_linear(seed in 0u64..1000, a in -5.0f64..5.0) {
            let g = LinearGenerator::glorot(4, 3, &RngStream::new(seed, 0));
            let x1 = sample_latent(3, 5, &RngStream::new(seed, 1)).unwrap().samples;
            let x2 = sample_latent(3, 5, &RngStream::new(seed, 2)).unwrap().samples;
            let f = |x: &Matrix| generator_forward(&g, x).unwrap();
            prop_assert!(f(&x1.scale(a)).sub(&f(&x1).scale(a)).max_abs() < 1e-12);
            prop_assert!(f(&x1.add(&x2)).sub(&f(&x1).add(&f(&x2))).max_abs() < 1e-12);
        }

        #[test]
        fn critic_is_positively_homogeneous_without_biases(seed in 0u64..1000, a in 0.0f64..4.0) {
            // Zero biases make a relu net positively homogeneous.
            let net = glorot_init(&[3, 8, 8, 1], &RngStream::new(seed, 0)).unwrap();
            let mut y = Matrix::zeros(4, 3);
            RngStream::new(seed, 1).open().fill_normal(y.as_mut_slice());
            let lhs = net.eval(&y.scale(a)).unwrap();
            let rhs = net.eval(&y).unwrap().scale(a);
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        }
    }
}
