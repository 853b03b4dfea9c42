//! Shared helpers for the integration suites: a central finite-difference
//! oracle kept independent of the autodiff implementation it checks.

/// d(f)/d(x[k]) by central differences at step h.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    plus[k] += h;
    let mut minus = x.to_vec();
    minus[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with a unit floor, so near-zero gradients compare
/// absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
