//! Distance-constrained blending of the multivariate MLE with a robust
//! location/scatter estimate.
//!
//! Scatter and location are shrunk separately. The scatter blend
//! `(1 - t) Sigma_ML + t Sigma_0` moves toward the robust anchor until its
//! Gaussian KL divergence from the anchor drops to `delta`; the location
//! blend `t xbar + (1 - t) mu_0` moves toward the sample mean as far as the
//! same kind of constraint allows. Note the two `t` parameters weight
//! opposite ends: scatter `t` is the weight on the robust anchor, location
//! `t` the weight on the sample mean.

use nalgebra::{DMatrix, DVector};

use crate::kernels::KernelConfig;
use crate::multivariate::{
    consistency_rescale, s_multivariate, sample_mean_cov, LocationScatter,
};
use crate::numeric::spd_cholesky;
use crate::{Error, Result};

/// Which half of the multivariate model a tuning rule refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcmlTarget {
    Scatter,
    Location,
}

impl std::fmt::Display for DcmlTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DcmlTarget::Scatter => "scatter",
            DcmlTarget::Location => "location",
        })
    }
}

impl std::str::FromStr for DcmlTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scatter" | "sigma" => Ok(DcmlTarget::Scatter),
            "location" | "mu" => Ok(DcmlTarget::Location),
            other => Err(Error::InvalidParameter(format!(
                "unknown target '{other}' (expected scatter or location)"
            ))),
        }
    }
}

/// Constraint radii for the two shrinkage problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmlMultivariateConfig {
    pub delta_sigma: f64,
    pub delta_mu: f64,
}

impl DcmlMultivariateConfig {
    pub fn new(delta_sigma: f64, delta_mu: f64) -> Result<Self> {
        if !(delta_sigma > 0.0 && delta_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta_sigma must be a positive real, got {delta_sigma}"
            )));
        }
        if !(delta_mu > 0.0 && delta_mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta_mu must be a positive real, got {delta_mu}"
            )));
        }
        Ok(Self { delta_sigma, delta_mu })
    }

    /// Radii from the sample-size power law for both targets.
    pub fn for_problem(p: usize, n: usize) -> Self {
        Self {
            delta_sigma: delta_multivariate(p, n, DcmlTarget::Scatter),
            delta_mu: delta_multivariate(p, n, DcmlTarget::Location),
        }
    }
}

/// Constraint radius `a * n^(-b) * p^c`, fitted so that the constraint is
/// inactive with high probability under a clean Gaussian model.
///
/// The constants are `(1.02, 0.82, 0.18)` for scatter and
/// `(0.55, 0.88, -0.30)` for location.
pub fn delta_multivariate(p: usize, n: usize, target: DcmlTarget) -> f64 {
    debug_assert!(p > 0 && n > 0, "dimension and sample size must be positive");
    let (a, b, c) = match target {
        DcmlTarget::Scatter => (1.02, 0.82, 0.18),
        DcmlTarget::Location => (0.55, 0.88, -0.30),
    };
    a * (n as f64).powf(-b) * (p as f64).powf(c)
}

/// Log-determinant from a Cholesky factor; safe where the determinant
/// itself would overflow.
fn log_det(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Gaussian KL-type divergence between scatter matrices:
/// `log|Sigma| - log|Sigma_0| + trace(Sigma^{-1} Sigma_0) - p`.
///
/// Returns exactly zero when the inputs are identical.
pub fn kl_scatter(sigma0: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma0.shape() != sigma.shape() {
        return Err(Error::InvalidInput("scatter dimensions disagree".into()));
    }
    let chol0 = spd_cholesky(sigma0, "anchor scatter")?;
    let chol = spd_cholesky(sigma, "scatter")?;
    if sigma0 == sigma {
        return Ok(0.0);
    }
    let p = sigma.nrows() as f64;
    let trace = chol.solve(sigma0).trace();
    Ok(log_det(&chol) - log_det(&chol0) + trace - p)
}

/// Squared Mahalanobis distance between two location vectors under `sigma`:
/// `(mu - mu0)' Sigma^{-1} (mu - mu0)`.
pub fn kl_location(mu0: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if mu0.len() != mu.len() || sigma.nrows() != mu.len() {
        return Err(Error::InvalidInput("location dimensions disagree".into()));
    }
    let chol = spd_cholesky(sigma, "scatter")?;
    let diff = mu - mu0;
    Ok(diff.dot(&chol.solve(&diff)))
}

/// Shrinks the ML scatter toward a robust anchor under a divergence budget.
///
/// Returns `(Sigma_ML, 0)` when the anchor is already within `delta` of the
/// MLE; otherwise bisects the blend weight `t` on the anchor until
/// `kl_scatter(anchor, blend)` equals `delta` to a relative `1e-9`. If the
/// bracket collapses to adjacent floats first (possible when the MLE sits
/// astronomically far from the anchor), the feasible endpoint is returned,
/// so the divergence budget is never exceeded.
///
/// # Errors
///
/// Numerical error if 200 bisection steps cannot meet tolerance (the
/// divergence is continuous and bracketed, so this indicates broken input).
pub fn dcml_scatter(
    sigma_ml: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    delta: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "delta must be a positive real, got {delta}"
        )));
    }
    let d0 = kl_scatter(sigma0, sigma_ml)?;
    if d0 <= delta {
        return Ok((sigma_ml.clone(), 0.0));
    }
    // Solve in u = 1 - t, the offset from the anchor, where the divergence
    // vanishes quadratically: kl(u) rises continuously from 0 at u = 0 to
    // d0 > delta at u = 1, and relative precision in u survives even when
    // the MLE is many orders of magnitude away (t near 1 would not).
    let step = sigma_ml - sigma0;
    let blend_at = |u: f64| sigma0 + &step * u;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let u = 0.5 * (lo + hi);
        let blend = blend_at(u);
        let kl = kl_scatter(sigma0, &blend)?;
        if (kl - delta).abs() <= 1e-9 * delta {
            return Ok((blend, 1.0 - u));
        }
        if kl > delta {
            hi = u;
        } else {
            lo = u;
        }
        if !(lo < 0.5 * (lo + hi) && 0.5 * (lo + hi) < hi) {
            // Adjacent floats: no representable u meets the tolerance.
            // The lower endpoint is feasible (divergence below budget).
            return Ok((blend_at(lo), 1.0 - lo));
        }
    }
    Err(Error::Numerical(
        "scatter blend weight did not converge in 200 bisection steps".into(),
    ))
}

/// Shrinks the sample mean toward a robust location anchor.
///
/// With `d0 = kl_location(mu0, xbar, sigma0)`, the weight on the sample
/// mean is `t = min(1, sqrt(delta / d0))` (`t = 1` when `d0 = 0`), and the
/// estimate is `t * xbar + (1 - t) * mu0`, which satisfies
/// `kl_location(mu0, result, sigma0) = min(d0, delta)`.
pub fn dcml_location(
    xbar: &DVector<f64>,
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    delta: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "delta must be a positive real, got {delta}"
        )));
    }
    let d0 = kl_location(mu0, xbar, sigma0)?;
    let t = if d0 > 0.0 {
        (delta / d0).sqrt().min(1.0)
    } else {
        1.0
    };
    if t >= 1.0 {
        return Ok((xbar.clone(), 1.0));
    }
    Ok((xbar * t + mu0 * (1.0 - t), t))
}

/// Full multivariate fit: MLE, rescaled S-estimate, and their DCML blend.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateFit {
    pub mle: LocationScatter,
    /// S-estimate after the consistency rescale (covariance-sized scatter).
    pub s_est: LocationScatter,
    /// Minimized M-scale of the S-estimator (diagnostic).
    pub s_scale: f64,
    pub dcml: LocationScatter,
    /// Weight on the robust anchor in the scatter blend (0 = pure MLE).
    pub t_scatter: f64,
    /// Weight on the sample mean in the location blend (1 = pure MLE).
    pub t_location: f64,
}

/// Runs the whole chain: sample mean/covariance, subsampled S-estimator,
/// consistency rescale, then the two constrained blends. `config` defaults
/// to the power-law radii for `(p, n)`.
pub fn fit_multivariate(
    obs: &DMatrix<f64>,
    kernel: &KernelConfig,
    n_subsamples: usize,
    seed: u64,
    config: Option<DcmlMultivariateConfig>,
) -> Result<MultivariateFit> {
    let mle = sample_mean_cov(obs)?;
    let (shape, s_scale) = s_multivariate(obs, kernel, n_subsamples, seed)?;
    let s_est = consistency_rescale(obs, shape.mu(), shape.sigma_mat())?;
    let cfg = config.unwrap_or_else(|| DcmlMultivariateConfig::for_problem(obs.ncols(), obs.nrows()));
    let (sigma_dc, t_scatter) = dcml_scatter(mle.sigma_mat(), s_est.sigma_mat(), cfg.delta_sigma)?;
    let (mu_dc, t_location) = dcml_location(mle.mu(), s_est.mu(), s_est.sigma_mat(), cfg.delta_mu)?;
    let dcml = LocationScatter::new(mu_dc, sigma_dc)?;
    Ok(MultivariateFit {
        mle,
        s_est,
        s_scale,
        dcml,
        t_scatter,
        t_location,
    })
}
