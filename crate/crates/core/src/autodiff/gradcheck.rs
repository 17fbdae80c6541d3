//! Central finite-difference gradient checks.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub worst_rel_error: f64,
    /// `(input index, flat entry index)` of the worst coordinate.
    pub worst_at: (usize, usize),
    pub coordinates: usize,
    pub passed: bool,
}

/// Compares `analytic(inputs)` against central differences of `value`.
///
/// Relative errors use a denominator floor of `1e-2`, so gradients close to
/// zero are effectively checked in absolute terms.
pub fn gradcheck(
    value: impl Fn(&[Matrix]) -> Result<f64>,
    analytic: impl Fn(&[Matrix]) -> Result<Vec<Matrix>>,
    inputs: &[Matrix],
    h: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    if h <= 0.0 || tolerance <= 0.0 {
        return Err(Error::Domain(format!("step {h} and tolerance {tolerance} must be positive")));
    }
    let grads = analytic(inputs)?;
    if grads.len() != inputs.len() || grads.iter().zip(inputs).any(|(g, x)| g.shape() != x.shape()) {
        return Err(Error::Dimension("analytic gradient shapes differ from inputs".into()));
    }
    let mut work = inputs.to_vec();
    let mut report = GradcheckReport { worst_rel_error: 0.0, worst_at: (0, 0), coordinates: 0, passed: true };
    for (k, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let x0 = work[k].as_slice()[e];
            work[k].as_mut_slice()[e] = x0 + h;
            let fp = value(&work)?;
            work[k].as_mut_slice()[e] = x0 - h;
            let fm = value(&work)?;
            work[k].as_mut_slice()[e] = x0;
            let num = (fp - fm) / (2.0 * h);
            let ana = g.as_slice()[e];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-2);
            if !(rel <= report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst_at = (k, e);
            }
            report.coordinates += 1;
        }
    }
    report.passed = report.worst_rel_error <= tolerance;
    Ok(report)
}

/// [`gradcheck`] for a scalar function recorded by `builder`, which receives
/// the inputs as leaves. Analytic gradients come from the numeric sweep.
pub fn gradcheck_tape(
    builder: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Matrix],
    h: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let build = |xs: &[Matrix]| -> Result<(Tape, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let leaves = xs.iter().map(|x| tape.leaf(x.clone())).collect::<Result<Vec<_>>>()?;
        let out = builder(&mut tape, &leaves)?;
        tape.seal();
        Ok((tape, out, leaves))
    };
    gradcheck(
        |xs| {
            let (tape, out, _) = build(xs)?;
            Ok(tape.scalar_value(out))
        },
        |xs| {
            let (tape, out, leaves) = build(xs)?;
            tape.gradients(out, &leaves)
        },
        inputs,
        h,
        tolerance,
    )
}
