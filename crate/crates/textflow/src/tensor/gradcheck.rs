//! Central finite-difference gradient verification.
//!
//! This is an independent check of the tape: it only ever calls the forward
//! path, perturbing one parameter entry at a time, so it cannot share a bug
//! with the analytic gradient rules it validates.

use super::Tensor;

/// Result of checking one parameter entry.
#[derive(Debug)]
pub struct GradMismatch {
    pub param_index: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the graph from the current parameter values on
/// every call. Passing tolerance: `|ad - fd| <= atol + rtol * max(|ad|, |fd|)`.
pub fn check_gradients(
    params: &[Tensor],
    loss_fn: &mut dyn FnMut() -> Tensor,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(), GradMismatch> {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    loss.backward().expect("loss must be scalar");
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();

    for (pi, p) in params.iter().enumerate() {
        let base = p.to_vec();
        for entry in 0..base.len() {
            let mut plus = base.clone();
            plus[entry] += h;
            p.set_data(&plus);
            let f_plus = loss_fn().item();

            let mut minus = base.clone();
            minus[entry] -= h;
            p.set_data(&minus);
            let f_minus = loss_fn().item();

            p.set_data(&base);

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let ad = analytic[pi][entry];
            if (ad - numeric).abs() > atol + rtol * ad.abs().max(numeric.abs()) {
                return Err(GradMismatch {
                    param_index: pi,
                    entry,
                    analytic: ad,
                    numeric,
                });
            }
        }
    }
    Ok(())
}

/// Convenience wrapper with the default tolerances used throughout the
/// test suite: h = 1e-5, relative 1e-4, absolute 1e-7.
pub fn check_default(
    params: &[Tensor],
    loss_fn: &mut dyn FnMut() -> Tensor,
) -> Result<(), GradMismatch> {
    check_gradients(params, loss_fn, 1e-5, 1e-4, 1e-7)
}
