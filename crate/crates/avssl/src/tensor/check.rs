//! Numerical gradient checking support for tests.
//!
//! The central-difference oracle here only evaluates forward closures; it is
//! independent of the tape's backward pass, which is exactly what lets it
//! serve as the reference when validating analytic gradients.

use super::Tensor;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central finite differences of a scalar-valued function of several tensors.
///
/// Returns one gradient tensor per input, where entry `i` is
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_difference<F>(mut f: F, inputs: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for ti in 0..inputs.len() {
        let mut g = vec![0.0; inputs[ti].len()];
        for ei in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let plus = f(&work);
            work[ti].data_mut()[ei] = orig - h;
            let minus = f(&work);
            work[ti].data_mut()[ei] = orig;
            g[ei] = (plus - minus) / (2.0 * h);
        }
        grads.push(Tensor::new(inputs[ti].shape().to_vec(), g).expect("fd shape"));
    }
    grads
}

/// Largest relative error between analytic and numerical gradients, where the
/// per-element relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks `|a − n| ≤ rel_tol · max(|a|, |n|)` elementwise with an absolute
/// escape hatch for near-zero gradients.
pub fn grads_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) -> bool {
    analytic.len() == numeric.len()
        && analytic.iter().zip(numeric).all(|(&a, &n)| {
            let diff = (a - n).abs();
            diff <= abs_tol || diff <= rel_tol * a.abs().max(n.abs())
        })
}
