//! Central finite-difference gradient verification.

use alloc::vec::Vec;

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared in absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn numerical_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest [`relative_error`] between `analytic` and the central-difference
/// gradient of `f` at `x`, over every coordinate.
pub fn grad_check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(
        x.len(),
        analytic.len(),
        "gradient length differs from input"
    );
    numerical_gradient(f, x, h)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max)
}
