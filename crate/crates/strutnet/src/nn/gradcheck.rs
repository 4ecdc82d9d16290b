//! Numerical gradient verification by central finite differences.
//!
//! Used by the test and acceptance suites to pin analytic backward passes
//! against an oracle that only exercises forward evaluation.

/// Worst relative disagreement between an analytic gradient and central
/// finite differences of `f` at `point`.
///
/// Per coordinate: `|analytic - numeric| / max(|analytic| + |numeric|, 1.0)`.
pub fn max_relative_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x);
        x[i] = orig - eps;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let denom = (analytic[i].abs() + numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
