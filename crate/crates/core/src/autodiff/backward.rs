//! Reverse sweeps: numeric and recorded.

use super::{broadcast_cols, broadcast_rows, sum_cols, sum_rows, Op, Tape, Var};
use crate::error::Result;
use crate::linalg::{gemm, Matrix};

/// Marks nodes that depend on any of `wrt`; only those receive adjoints.
fn dependents(tape: &Tape, upto: usize, wrt: &[Var]) -> Vec<bool> {
    let mut needs = vec![false; upto + 1];
    for w in wrt {
        if w.id <= upto {
            needs[w.id] = true;
        }
    }
    for i in 0..=upto {
        if !needs[i] {
            needs[i] = tape.node(i).op.inputs().iter().flatten().any(|&j| needs[j]);
        }
    }
    needs
}

#[cfg(test)]
thread_local! {
    pub(crate) static CORRUPT_MUL: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn mul_factor() -> f64 {
    #[cfg(test)]
    if CORRUPT_MUL.with(|c| c.get()) {
        return 1.1;
    }
    1.0
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(super) fn numeric(tape: &Tape, output: Var, wrt: &[Var]) -> Vec<Matrix> {
    let needs = dependents(tape, output.id, wrt);
    let mut is_wrt = vec![false; output.id + 1];
    for w in wrt.iter().filter(|w| w.id <= output.id) {
        is_wrt[w.id] = true;
    }
    let mut adj: Vec<Option<Matrix>> = vec![None; output.id + 1];
    adj[output.id] = Some(Matrix::scalar(1.0));
    for i in (0..=output.id).rev() {
        let g = if is_wrt[i] { adj[i].clone() } else { adj[i].take() };
        let Some(g) = g else { continue };
        let node = tape.node(i);
        let val = |j: usize| &tape.node(j).value;
        let send = |j: usize, m: Matrix, adj: &mut Vec<Option<Matrix>>| {
            if needs[j] {
                accumulate(&mut adj[j], m);
            }
        };
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                send(a, g.clone(), &mut adj);
                send(b, g, &mut adj);
            }
            Op::Sub(a, b) => {
                send(a, g.clone(), &mut adj);
                send(b, g.scale(-1.0), &mut adj);
            }
            Op::Mul(a, b) => {
                let f = mul_factor();
                send(a, g.zip_map(val(b), |x, y| f * x * y), &mut adj);
                send(b, g.zip_map(val(a), |x, y| x * y), &mut adj);
            }
            Op::Div(a, b) => {
                send(a, g.zip_map(val(b), |x, y| x / y), &mut adj);
                let t = g.zip_map(val(a), |x, y| x * y).zip_map(val(b), |x, y| -x / (y * y));
                send(b, t, &mut adj);
            }
            Op::Scale(a, c) => send(a, g.scale(c), &mut adj),
            Op::AddScalar(a, _) => send(a, g, &mut adj),
            Op::MatMul(a, b) => {
                if needs[a] {
                    send(a, gemm(&g, false, val(b), true), &mut adj);
                }
                if needs[b] {
                    send(b, gemm(val(a), true, &g, false), &mut adj);
                }
            }
            Op::Transpose(a) => send(a, g.transpose(), &mut adj),
            Op::Relu(a) => send(a, g.zip_map(val(a), |x, y| if y > 0.0 { x } else { 0.0 }), &mut adj),
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                send(a, Matrix::filled(r, c, g.as_slice()[0]), &mut adj);
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                send(a, Matrix::filled(r, c, g.as_slice()[0] / (r * c) as f64), &mut adj);
            }
            Op::SumRows(a) => send(a, broadcast_rows(&g, val(a).rows()), &mut adj),
            Op::SumCols(a) => send(a, broadcast_cols(&g, val(a).cols()), &mut adj),
            Op::BroadcastRows(a, _) => send(a, sum_rows(&g), &mut adj),
            Op::BroadcastCols(a, _) => send(a, sum_cols(&g), &mut adj),
            Op::BroadcastScalar(a, _, _) => send(a, Matrix::scalar(g.sum()), &mut adj),
            Op::AddBias(a, b) => {
                if needs[b] {
                    send(b, sum_rows(&g), &mut adj);
                }
                send(a, g, &mut adj);
            }
            Op::Square(a) => send(a, g.zip_map(val(a), |x, y| 2.0 * x * y), &mut adj),
            Op::Sqrt(a) => send(a, g.zip_map(&node.value, |x, y| 0.5 * x / y), &mut adj),
            Op::Pow(a, p) => send(a, g.zip_map(val(a), |x, y| x * p * y.powf(p - 1.0)), &mut adj),
            Op::Dot(a, b) => {
                let s = g.as_slice()[0];
                send(a, val(b).scale(s), &mut adj);
                send(b, val(a).scale(s), &mut adj);
            }
            Op::L2Norm(a, _) => {
                let s = g.as_slice()[0] / node.value.as_slice()[0];
                send(a, val(a).scale(s), &mut adj);
            }
        }
    }
    wrt.iter()
        .map(|w| {
            if w.id <= output.id {
                if let Some(g) = &adj[w.id] {
                    return g.clone();
                }
            }
            Matrix::zeros(w.rows, w.cols)
        })
        .collect()
}

pub(super) fn recorded(tape: &mut Tape, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
    let needs = dependents(tape, output.id, wrt);
    let mut adj: Vec<Option<Var>> = vec![None; output.id + 1];
    let one = tape.constant(Matrix::scalar(1.0))?;
    adj[output.id] = Some(one);

    fn send(tape: &mut Tape, adj: &mut [Option<Var>], needs: &[bool], j: usize, g: Var) -> Result<()> {
        if needs[j] {
            adj[j] = Some(match adj[j] {
                Some(acc) => tape.add(acc, g)?,
                None => g,
            });
        }
        Ok(())
    }

    for i in (0..=output.id).rev() {
        let Some(g) = adj[i] else { continue };
        if !needs[i] {
            continue;
        }
        let var = tape.var_of(i);
        let v = |t: &Tape, j: usize| t.var_of(j);
        match tape.node(i).op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                send(tape, &mut adj, &needs, a, g)?;
                send(tape, &mut adj, &needs, b, g)?;
            }
            Op::Sub(a, b) => {
                send(tape, &mut adj, &needs, a, g)?;
                if needs[b] {
                    let t = tape.neg(g)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (v(tape, a), v(tape, b));
                if needs[a] {
                    let mut t = tape.mul(g, vb)?;
                    let f = mul_factor();
                    if f != 1.0 {
                        t = tape.scale(t, f)?;
                    }
                    send(tape, &mut adj, &needs, a, t)?;
                }
                if needs[b] {
                    let t = tape.mul(g, va)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (v(tape, a), v(tape, b));
                if needs[a] {
                    let t = tape.div(g, vb)?;
                    send(tape, &mut adj, &needs, a, t)?;
                }
                if needs[b] {
                    let ga = tape.mul(g, va)?;
                    let b2 = tape.square(vb)?;
                    let q = tape.div(ga, b2)?;
                    let t = tape.neg(q)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::Scale(a, c) => {
                let t = tape.scale(g, c)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::AddScalar(a, _) => send(tape, &mut adj, &needs, a, g)?,
            Op::MatMul(a, b) => {
                let (va, vb) = (v(tape, a), v(tape, b));
                if needs[a] {
                    let bt = tape.transpose(vb)?;
                    let t = tape.matmul(g, bt)?;
                    send(tape, &mut adj, &needs, a, t)?;
                }
                if needs[b] {
                    let at = tape.transpose(va)?;
                    let t = tape.matmul(at, g)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::Transpose(a) => {
                let t = tape.transpose(g)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Relu(a) => {
                let mask = tape.node(a).value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let m = tape.constant(mask)?;
                let t = tape.mul(g, m)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Sum(a) => {
                let (r, c) = v(tape, a).shape();
                let t = tape.broadcast_scalar(g, r, c)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Mean(a) => {
                let (r, c) = v(tape, a).shape();
                let s = tape.scale(g, 1.0 / (r * c) as f64)?;
                let t = tape.broadcast_scalar(s, r, c)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::SumRows(a) => {
                let t = tape.broadcast_rows(g, v(tape, a).rows)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::SumCols(a) => {
                let t = tape.broadcast_cols(g, v(tape, a).cols)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::BroadcastRows(a, _) => {
                let t = tape.sum_rows(g)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::BroadcastCols(a, _) => {
                let t = tape.sum_cols(g)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::BroadcastScalar(a, _, _) => {
                let t = tape.sum(g)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::AddBias(a, b) => {
                send(tape, &mut adj, &needs, a, g)?;
                if needs[b] {
                    let t = tape.sum_rows(g)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::Square(a) => {
                let two_a = tape.scale(v(tape, a), 2.0)?;
                let t = tape.mul(g, two_a)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Sqrt(a) => {
                let q = tape.div(g, var)?;
                let t = tape.scale(q, 0.5)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Pow(a, p) => {
                let va = v(tape, a);
                let d = tape.powf(va, p - 1.0)?;
                let d = tape.scale(d, p)?;
                let t = tape.mul(g, d)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
            Op::Dot(a, b) => {
                let (va, vb) = (v(tape, a), v(tape, b));
                let gs = tape.broadcast_scalar(g, va.rows, va.cols)?;
                if needs[a] {
                    let t = tape.mul(gs, vb)?;
                    send(tape, &mut adj, &needs, a, t)?;
                }
                if needs[b] {
                    let t = tape.mul(gs, va)?;
                    send(tape, &mut adj, &needs, b, t)?;
                }
            }
            Op::L2Norm(a, _) => {
                let va = v(tape, a);
                let q = tape.div(g, var)?;
                let qs = tape.broadcast_scalar(q, va.rows, va.cols)?;
                let t = tape.mul(qs, va)?;
                send(tape, &mut adj, &needs, a, t)?;
            }
        }
    }
    wrt.iter()
        .map(|w| match (w.id <= output.id).then(|| adj[w.id]).flatten() {
            Some(g) => Ok(g),
            None => tape.constant(Matrix::zeros(w.rows, w.cols)),
        })
        .collect()
}
