//! Bisquare loss kernels and the robust M-scale that the S-, MM-, and DCML
//! estimators are built on.
//!
//! The bisquare family trades efficiency against resistance through a single
//! tuning constant: small constants reject outliers aggressively, large ones
//! approach least squares. [`BREAKDOWN_TUNING`] fixes the 50% breakdown scale,
//! and [`tuning_constant_for_efficiency`] inverts the Gaussian efficiency of
//! the kernel to pick the constant used in the efficient reweighting step.
//!
//! The kernel functions are total over finite `t` and assume `c > 0`; a
//! non-positive constant is a programming error guarded by debug assertions.
//! Fallible entry points ([`m_scale`], [`tuning_constant_for_efficiency`],
//! [`KernelConfig::new`]) validate their parameters and return errors.

use crate::numeric::{bisect, integrate, median};
use crate::{Error, Result};

/// Tuning constant giving the bisquare M-scale 50% Gaussian breakdown.
pub const BREAKDOWN_TUNING: f64 = 1.547;

/// Bisquare tuning constant with 85% Gaussian efficiency, i.e.
/// `tuning_constant_for_efficiency(0.85)` frozen to full precision.
pub const EFFICIENT_TUNING: f64 = 3.443_689_536_899_54;

/// Tuning constants for the two-stage estimators: `c0` drives the initial
/// high-breakdown scale and `c1` the efficient reweighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub c0: f64,
    pub c1: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            c0: BREAKDOWN_TUNING,
            c1: EFFICIENT_TUNING,
        }
    }
}

impl KernelConfig {
    /// Builds a config after checking both constants are positive and finite.
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        for (name, c) in [("c0", c0), ("c1", c1)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "tuning constant {name} must be positive and finite, got {c}"
                )));
            }
        }
        Ok(Self { c0, c1 })
    }
}

/// Bisquare loss: `1 - (1 - (t/c)^2)^3` inside `[-c, c]`, constant 1 outside.
///
/// Even, nondecreasing in `|t|`, with `rho_bisquare(0, c) == 0` and
/// `rho_bisquare(c, c) == 1`.
pub fn rho_bisquare(t: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let s = (t / c) * (t / c);
    if s >= 1.0 {
        1.0
    } else {
        let u = 1.0 - s;
        1.0 - u * u * u
    }
}

/// Derivative of [`rho_bisquare`] in `t`: `6t/c^2 (1 - (t/c)^2)^2` inside
/// `[-c, c]`, zero outside. Odd, and redescending to zero at `|t| = c`.
pub fn psi_bisquare(t: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let s = (t / c) * (t / c);
    if s >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s;
        6.0 * t / (c * c) * u * u
    }
}

/// Derivative of [`psi_bisquare`] in `t`: `6/c^2 (1 - s)(1 - 5s)` with
/// `s = (t/c)^2` inside `[-c, c]`, zero outside.
pub fn psi_deriv_bisquare(t: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let s = (t / c) * (t / c);
    if s >= 1.0 {
        0.0
    } else {
        6.0 / (c * c) * (1.0 - s) * (1.0 - 5.0 * s)
    }
}

/// IRWLS weight `psi_bisquare(t, c) / t`, continuously extended to `6/c^2`
/// at zero. Nonincreasing in `|t|` and zero for `|t| >= c`.
pub fn weight_bisquare(t: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let s = (t / c) * (t / c);
    if s >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s;
        6.0 / (c * c) * u * u
    }
}

/// Robust M-scale of a residual vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MScale {
    /// Scale estimate; zero when the scale equation has no positive root.
    pub sigma: f64,
    /// True when so many residuals are exactly zero that the scale collapses.
    pub degenerate: bool,
}

/// Solves the M-scale equation `mean(rho_bisquare(r_i / sigma, c)) = gamma`
/// for `sigma > 0` by bracketed bisection.
///
/// When the fraction of exactly-zero residuals reaches `1 - gamma` the mean
/// stays below `gamma` for every positive scale, so the equation has no
/// root; the estimate is then zero with `degenerate` set. Otherwise the root
/// is unique and satisfies the scale equation to within `1e-9`.
///
/// # Errors
///
/// Rejects empty or non-finite residuals, non-positive `c`, and `gamma`
/// outside `(0, 1)`.
pub fn m_scale(residuals: &[f64], c: f64, gamma: f64) -> Result<MScale> {
    if residuals.is_empty() {
        return Err(Error::InvalidInput("m_scale of an empty sample".into()));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(
            "m_scale requires finite residuals".into(),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tuning constant must be positive, got {c}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "scale equation target must lie in (0, 1), got {gamma}"
        )));
    }

    let n = residuals.len() as f64;
    let zero_fraction = residuals.iter().filter(|r| **r == 0.0).count() as f64 / n;
    if zero_fraction >= 1.0 - gamma {
        return Ok(MScale {
            sigma: 0.0,
            degenerate: true,
        });
    }

    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let max_abs = abs.iter().cloned().fold(0.0_f64, f64::max);
    let min_positive = abs
        .iter()
        .cloned()
        .filter(|a| *a > 0.0)
        .fold(f64::INFINITY, f64::min);
    let med = median(&abs)?;

    let objective =
        |sigma: f64| abs.iter().map(|a| rho_bisquare(a / sigma, c)).sum::<f64>() / n - gamma;

    // mean rho decreases in sigma, so expand the bracket until it straddles
    // the root.
    let mut lo = if med > 0.0 { med } else { min_positive } / 10.0;
    let mut guard = 0;
    while objective(lo) <= 0.0 {
        lo /= 10.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Numerical(
                "m_scale could not bracket the root from below".into(),
            ));
        }
    }
    let mut hi = 10.0 * max_abs;
    guard = 0;
    while objective(hi) >= 0.0 {
        hi *= 10.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Numerical(
                "m_scale could not bracket the root from above".into(),
            ));
        }
    }

    let sigma = bisect(objective, lo, hi, 1e-13)?;
    debug_assert!(objective(sigma).abs() <= 1e-9);
    Ok(MScale {
        sigma,
        degenerate: false,
    })
}

/// Gaussian efficiency of the bisquare location kernel with constant `c`:
/// `E[psi']^2 / E[psi^2]` under the standard normal.
fn gaussian_efficiency(c: f64) -> f64 {
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // psi vanishes outside [-c, c]; both integrands are even.
    let e_psi_sq = 2.0 * integrate(
        &|u| psi_bisquare(u, c) * psi_bisquare(u, c) * phi(u),
        0.0,
        c,
        1e-13,
    );
    let e_psi_deriv = 2.0 * integrate(&|u| psi_deriv_bisquare(u, c) * phi(u), 0.0, c, 1e-13);
    e_psi_deriv * e_psi_deriv / e_psi_sq
}

/// Returns the bisquare tuning constant whose Gaussian efficiency equals
/// `efficiency`.
///
/// Efficiency is strictly increasing in the constant, so the root is found
/// by bisection on `[0.5, 40]`; the result reproduces the requested
/// efficiency to well under `1e-5`.
///
/// # Errors
///
/// `efficiency` must lie strictly between 0 and 1.
pub fn tuning_constant_for_efficiency(efficiency: f64) -> Result<f64> {
    if !(efficiency > 0.0 && efficiency < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "efficiency must lie in (0, 1), got {efficiency}"
        )));
    }
    bisect(|c| gaussian_efficiency(c) - efficiency, 0.5, 40.0, 1e-12)
}
