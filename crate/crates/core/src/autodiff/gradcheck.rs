//! Central-difference verification of tape gradients.

use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::Tape;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Compare the tape gradient of `f` at `point` against central differences.
///
/// `f` must map a leaf tensor to a scalar tensor on the given tape. The
/// relative error denominator is max(|analytic|, |numeric|, 1e-8) per
/// coordinate; the check passes iff the max relative error is within `tol`.
pub fn grad_check<S, F>(f: F, point: &Tensor<S>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
{
    assert!(step > 0.0, "grad_check step must be positive");

    let mut tape = Tape::new();
    let leaf = tape.leaf(point);
    let out = f(&mut tape, &leaf)?;
    let grads = tape.backward(&out)?;
    let analytic: Vec<f64> = grads.grad(&leaf).values().iter().map(|v| v.as_f64()).collect();

    let eval = |x: &Tensor<S>| -> Result<f64> {
        let mut t = Tape::no_grad();
        let leaf = t.leaf(x);
        Ok(f(&mut t, &leaf)?.item().as_f64())
    };

    let base = point.to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] = plus[i] + S::of_f64(step);
        let mut minus = base.clone();
        minus[i] = minus[i] - S::of_f64(step);
        let shape = point.shape().to_vec();
        let fp = eval(&Tensor::from_parts(shape.clone(), plus, None))?;
        let fm = eval(&Tensor::from_parts(shape, minus, None))?;
        numeric.push((fp - fm) / (2.0 * step));
    }

    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .collect();
    let max_rel_error = rel_errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        pass: max_rel_error <= tol,
    })
}
