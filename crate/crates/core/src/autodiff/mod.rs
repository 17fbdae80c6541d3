//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Operations are evaluated eagerly as they are recorded, so every node
//! caches its value. A tape can differentiate itself in two ways:
//!
//! - [`Tape::gradients`] runs a plain numeric reverse sweep (sealed tapes);
//! - [`Tape::backward_graph`] records the reverse sweep as new nodes, so
//!   the resulting gradients are themselves differentiable. This is how the
//!   gradient penalty `‖∇ₓD(x)‖` gets differentiated with respect to the
//!   critic parameters.
//!
//! `relu'(0)` is 0. The relu derivative mask is recorded as a constant node.

mod backward;
mod gradcheck;

pub use gradcheck::{gradcheck, gradcheck_tape, GradcheckReport};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};

/// Smoothing added inside norms whose gradient is needed at zero.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    /// `n x m → 1 x m`.
    SumRows(usize),
    /// `n x m → n x 1`.
    SumCols(usize),
    /// `1 x m → n x m`.
    BroadcastRows(usize, usize),
    /// `n x 1 → n x m`.
    BroadcastCols(usize, usize),
    /// `1 x 1 → r x c`.
    BroadcastScalar(usize, usize, usize),
    /// `n x m` plus a `1 x m` row added to every row.
    AddBias(usize, usize),
    Square(usize),
    Sqrt(usize),
    Pow(usize, f64),
    Dot(usize, usize),
    L2Norm(usize, f64),
}

impl Op {
    pub(crate) fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | AddBias(a, b) | Dot(a, b) => {
                [Some(a), Some(b)]
            }
            Scale(a, _)
            | AddScalar(a, _)
            | Transpose(a)
            | Relu(a)
            | Sum(a)
            | Mean(a)
            | SumRows(a)
            | SumCols(a)
            | BroadcastRows(a, _)
            | BroadcastCols(a, _)
            | BroadcastScalar(a, _, _)
            | Square(a)
            | Sqrt(a)
            | Pow(a, _)
            | L2Norm(a, _) => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Matrix,
}

/// Append-only record of operations. Node inputs always refer to earlier
/// nodes, so index order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sealed: bool,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Freezes the tape; recording afterwards is an error.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.id].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.id].value.as_slice()[0]
    }

    pub(crate) fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub(crate) fn var_of(&self, id: usize) -> Var {
        let (rows, cols) = self.nodes[id].value.shape();
        Var { id, rows, cols }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<Var> {
        if self.sealed {
            return Err(Error::Tape("cannot record on a sealed tape".into()));
        }
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        Ok(Var { id, rows, cols })
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.id >= self.nodes.len() || self.nodes[v.id].value.shape() != v.shape() {
            return Err(Error::Tape(format!("variable {} does not belong to this tape", v.id)));
        }
        Ok(())
    }

    /// A differentiable input (parameter or data point).
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    /// A value treated as constant by differentiation.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(Op::Constant, value)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if a.shape() != b.shape() {
            return Err(shape_err(op, a.shape(), b.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a.id, b.id), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a.id, b.id), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a.id, b.id), v)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(Op::Div(a.id, b.id), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a.id, c), v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a.id, c), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if a.cols != b.rows {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let v = gemm(self.value(a), false, self.value(b), false);
        self.push(Op::MatMul(a.id, b.id), v)
    }

    /// Matrix times column vector (`m x n` by `n x 1`).
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        if x.cols != 1 {
            return Err(shape_err("matvec", a.shape(), x.shape()));
        }
        self.matmul(a, x)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a.id), v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a.id), v)
    }

    /// Sum of all entries (`1 x 1`).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a.id), v)
    }

    /// Mean of all entries (`1 x 1`).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(Op::Mean(a.id), v)
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = sum_rows(self.value(a));
        self.push(Op::SumRows(a.id), v)
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = sum_cols(self.value(a));
        self.push(Op::SumCols(a.id), v)
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        if a.rows != 1 {
            return Err(shape_err("broadcast_rows", a.shape(), (1, a.cols)));
        }
        let v = broadcast_rows(self.value(a), n);
        self.push(Op::BroadcastRows(a.id, n), v)
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        self.check(a)?;
        if a.cols != 1 {
            return Err(shape_err("broadcast_cols", a.shape(), (a.rows, 1)));
        }
        let v = broadcast_cols(self.value(a), m);
        self.push(Op::BroadcastCols(a.id, m), v)
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.check(a)?;
        if !a.is_scalar() {
            return Err(shape_err("broadcast_scalar", a.shape(), (1, 1)));
        }
        let v = Matrix::filled(rows, cols, self.scalar_value(a));
        self.push(Op::BroadcastScalar(a.id, rows, cols), v)
    }

    /// Adds the `1 x m` row `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if b.rows != 1 || b.cols != a.cols {
            return Err(shape_err("add_bias", a.shape(), b.shape()));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(b).as_slice().to_vec();
        for i in 0..v.rows() {
            v.row_mut(i).iter_mut().zip(&bias).for_each(|(x, y)| *x += y);
        }
        self.push(Op::AddBias(a.id, b.id), v)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a.id), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a.id), v)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| x.powf(p));
        self.push(Op::Pow(a.id, p), v)
    }

    /// `Σ a_ij b_ij` (`1 x 1`).
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = Matrix::scalar(crate::linalg::dot(self.value(a).as_slice(), self.value(b).as_slice()));
        self.push(Op::Dot(a.id, b.id), v)
    }

    /// `sqrt(Σ a_ij² + eps)` (`1 x 1`).
    pub fn l2norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.check(a)?;
        let m = self.value(a);
        let v = Matrix::scalar((crate::linalg::dot(m.as_slice(), m.as_slice()) + eps).sqrt());
        self.push(Op::L2Norm(a.id, eps), v)
    }

    /// Per-row `sqrt(Σ_j a_ij² + eps)` as an `n x 1` column (composite).
    pub fn row_norms(&mut self, a: Var, eps: f64) -> Result<Var> {
        let sq = self.square(a)?;
        let s = self.sum_cols(sq)?;
        let s = self.add_scalar(s, eps)?;
        self.sqrt(s)
    }

    /// Values of `outputs` on a sealed tape.
    pub fn forward_eval(&self, outputs: &[Var]) -> Result<Vec<Matrix>> {
        if !self.sealed {
            return Err(Error::Tape("forward_eval needs a sealed tape".into()));
        }
        outputs
            .iter()
            .map(|&v| {
                self.check(v)?;
                Ok(self.value(v).clone())
            })
            .collect()
    }

    /// Numeric reverse sweep: gradient of scalar `output` with respect to
    /// each of `wrt` (zeros where `output` does not depend on it).
    pub fn gradients(&self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        if !self.sealed {
            return Err(Error::Tape("gradients need a sealed tape".into()));
        }
        self.check_grad_args(output, wrt)?;
        Ok(backward::numeric(self, output, wrt))
    }

    /// Records the reverse sweep on the tape and returns differentiable
    /// gradient nodes, one per entry of `wrt`.
    pub fn backward_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.sealed {
            return Err(Error::Tape("cannot record a backward graph on a sealed tape".into()));
        }
        self.check_grad_args(output, wrt)?;
        backward::recorded(self, output, wrt)
    }

    fn check_grad_args(&self, output: Var, wrt: &[Var]) -> Result<()> {
        self.check(output)?;
        if !output.is_scalar() {
            return Err(Error::Tape(format!(
                "gradient output must be scalar, got {}x{}",
                output.rows, output.cols
            )));
        }
        for &w in wrt {
            self.check(w)?;
        }
        Ok(())
    }
}

/// `∂g/∂θ` for `g(θ) = sqrt(‖∇ₓ output‖² + eps)`.
///
/// The input-gradient is recorded on `tape`, its smoothed norm is appended,
/// the tape is sealed and a numeric reverse sweep differentiates the norm
/// with respect to `wrt_params`. Returns `(g, gradients)`.
pub fn grad_of_gradnorm(
    tape: &mut Tape,
    output: Var,
    input_point: Var,
    wrt_params: &[Var],
    eps: f64,
) -> Result<(f64, Vec<Matrix>)> {
    if eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let gx = tape.backward_graph(output, &[input_point])?[0];
    let g = tape.l2norm(gx, eps)?;
    tape.seal();
    let grads = tape.gradients(g, wrt_params)?;
    Ok((tape.scalar_value(g), grads))
}

pub(crate) fn sum_rows(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        out.iter_mut().zip(m.row(i)).for_each(|(o, x)| *o += x);
    }
    Matrix::from_raw(1, m.cols(), out)
}

pub(crate) fn sum_cols(m: &Matrix) -> Matrix {
    Matrix::from_raw(m.rows(), 1, (0..m.rows()).map(|i| m.row(i).iter().sum()).collect())
}

pub(crate) fn broadcast_rows(m: &Matrix, n: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * m.cols());
    for _ in 0..n {
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_raw(n, m.cols(), data)
}

pub(crate) fn broadcast_cols(m: &Matrix, cols: usize) -> Matrix {
    let mut data = Vec::with_capacity(m.rows() * cols);
    for &x in m.as_slice() {
        data.extend(std::iter::repeat(x).take(cols));
    }
    Matrix::from_raw(m.rows(), cols, data)
}
