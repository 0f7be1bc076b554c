//! Small numeric utilities shared across modules: bracketed root finding,
//! adaptive quadrature, and order statistics.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

/// Checks that a matrix is symmetric (to a relative `1e-8`) and positive
/// definite, returning its Cholesky factorization. `what` names the matrix
/// in error messages.
pub(crate) fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::InvalidInput(format!("{what} must be a square matrix")));
    }
    let asym = (m - m.transpose()).amax();
    if !asym.is_finite() || asym > 1e-8 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} is not positive definite")))
}

/// Finds a root of `f` on `[lo, hi]` by bisection.
///
/// Requires `f(lo)` and `f(hi)` to have opposite signs (a zero at either end
/// is accepted). Iterates until the bracket width falls below
/// `rel_tol * max(1, |mid|)` and returns the midpoint.
pub(crate) fn bisect(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::Numerical(format!(
            "bisection endpoints are not finite: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numerical(format!(
            "root not bracketed on [{lo}, {hi}]: f has the same sign at both ends"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= rel_tol * mid.abs().max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Integrates `f` over `[a, b]` by adaptive Simpson subdivision.
pub(crate) fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Median of a slice; the midpoint of the two central order statistics when
/// the length is even. Errors on empty input.
pub(crate) fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of an empty slice".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}

/// Empirical quantile with linear interpolation between order statistics,
/// so `quantile(&[1, 2, 3], 0.5) == 2`. `sorted` must be ascending.
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty slice".into()));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidParameter(format!(
            "quantile probability {prob} outside [0, 1]"
        )));
    }
    let n = sorted.len();
    let h = prob * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}
