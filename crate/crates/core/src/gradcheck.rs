//! Central finite-difference gradient checking.
//!
//! The numeric derivative of component `i` is
//! `(f(x + h e_i) - f(x - h e_i)) / 2h`, computed by re-evaluating the
//! scalar function only; it never touches a backward pass. Agreement is
//! measured as `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
//! The floor keeps components whose true value is near zero from turning
//! round-off of order `eps * |f| / h` into spurious failures.

use alloc::vec::Vec;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl core::fmt::Display for GradCheckFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "component {}: analytic {:e} vs numeric {:e} (rel err {:e})",
            self.index, self.analytic, self.numeric, self.rel_error
        )
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `x`, one component at a time.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
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

/// Compares `analytic` against central differences of `f` around `x`.
/// Returns the largest relative error, or the worst offending component.
pub fn check_gradient(
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
    f: impl FnMut(&[f64]) -> f64,
) -> Result<f64, GradCheckFailure> {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(x, h, f);
    let mut worst: Option<GradCheckFailure> = None;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = rel_error(a, n);
        if worst.as_ref().map_or(true, |w| e > w.rel_error) {
            worst = Some(GradCheckFailure { index: i, analytic: a, numeric: n, rel_error: e });
        }
    }
    match worst {
        Some(w) if w.rel_error > tol || w.rel_error.is_nan() => Err(w),
        Some(w) => Ok(w.rel_error),
        None => Ok(0.0),
    }
}
