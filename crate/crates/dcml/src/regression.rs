//! Regression estimators: least squares, the high-breakdown S-estimator,
//! the efficient MM-estimator, and the robust weighted design covariance.
//!
//! The estimators form a chain: the S-estimator minimizes the robust M-scale
//! of the residuals over random exact-fit candidates and supplies both a
//! starting coefficient vector and the fixed scale; the MM-estimator
//! reweights from that start for efficiency while keeping the S-scale; the
//! weighted design covariance summarizes the predictors under the MM weights
//! and becomes the metric of the DCML constraint.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kernels::{m_scale, rho_bisquare, weight_bisquare, KernelConfig};
use crate::{Error, Result};

/// A fixed design matrix and response vector.
///
/// By convention the first column of `x` is all ones when the model has an
/// intercept; [`Dataset::with_intercept`] builds that layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Validates shapes and finiteness: `y` must have one entry per row of
    /// `x`, every entry must be finite, and there must be at least as many
    /// rows as columns.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("empty design matrix".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < x.ncols() {
            return Err(Error::InvalidInput(format!(
                "more columns ({}) than rows ({})",
                x.ncols(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "design and response must be finite".into(),
            ));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset whose design is `predictors` with a leading column
    /// of ones.
    pub fn with_intercept(predictors: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = predictors.nrows();
        let mut x = DMatrix::zeros(n, predictors.ncols() + 1);
        x.column_mut(0).fill(1.0);
        x.columns_mut(1, predictors.ncols()).copy_from(predictors);
        Self::new(x, y)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Number of observations.
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    /// Number of design columns, intercept included.
    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Residual vector `y - X beta`.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }
}

/// Which estimator produced a [`RegressionEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ls,
    S,
    Mm,
    Dcml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ls => "LS",
            Method::S => "S",
            Method::Mm => "MM",
            Method::Dcml => "DCML",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LS" | "OLS" => Ok(Method::Ls),
            "S" => Ok(Method::S),
            "MM" => Ok(Method::Mm),
            "DCML" => Ok(Method::Dcml),
            other => Err(Error::InvalidParameter(format!(
                "unknown regression estimator '{other}'"
            ))),
        }
    }
}

/// A fitted regression: coefficients, residual scale, and (for the robust
/// fits) the final IRWLS weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEstimate {
    pub beta: DVector<f64>,
    /// Residual scale: the classical standard deviation for LS, the robust
    /// M-scale for S, and the fixed S-scale for MM and DCML. Zero marks an
    /// exact-fit (degenerate-scale) solution.
    pub sigma: f64,
    pub weights: Option<DVector<f64>>,
    pub method: Method,
}

/// Breakdown-maximizing target for the residual M-scale equation given `n`
/// observations and `q` design columns: `0.5 (1 - q/n)`.
pub fn breakdown_target(n: usize, q: usize) -> f64 {
    0.5 * (1.0 - q as f64 / n as f64)
}

/// Default number of random exact-fit candidates for [`s_regression`]:
/// 500 for up to 10 design columns, 1000 above.
pub fn default_subsample_count(n_cols: usize) -> usize {
    if n_cols <= 10 {
        500
    } else {
        1000
    }
}

/// Ordinary least squares via singular value decomposition.
///
/// `sigma` is the classical residual standard deviation with denominator
/// `n - q` (zero for a saturated fit with `n == q`).
///
/// # Errors
///
/// Rank-deficient designs are rejected with a degenerate-data error.
pub fn ls_fit(data: &Dataset) -> Result<RegressionEstimate> {
    let (n, q) = (data.n_obs(), data.n_cols());
    let svd = data.x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = max_sv * 1e-10;
    if svd.rank(eps) < q {
        return Err(Error::DegenerateData(
            "design matrix is rank deficient".into(),
        ));
    }
    let beta = svd
        .solve(&data.y, eps)
        .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))?;
    let r = data.residuals(&beta);
    let sigma = if n > q {
        (r.norm_squared() / (n - q) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RegressionEstimate {
        beta,
        sigma,
        weights: None,
        method: Method::Ls,
    })
}

/// Weighted least squares through the normal equations; weights must be
/// nonnegative with positive sum.
pub(crate) fn solve_wls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let xtwx = x.transpose() * &xw;
    let xtwy = xw.transpose() * y;
    xtwx
        .cholesky()
        .map(|chol| chol.solve(&xtwy))
        .ok_or_else(|| Error::DegenerateData("weighted design is singular".into()))
}

/// High-breakdown S-estimator of regression.
///
/// Draws `n_subsamples` random `q`-point subsets, fits each exactly, scores
/// candidates by the residual M-scale with target [`breakdown_target`], and
/// refines the five best by reweighting steps that only ever decrease the
/// scale. Ties in the ranking break toward the earlier subsample, so the
/// result is a deterministic function of `(data, cfg, n_subsamples, seed)`.
///
/// A candidate fitting more than half the responses exactly (to within
/// `1e-12` relative to the response magnitude) is returned at once with
/// `sigma = 0`, the exact-fit convention of the M-scale.
///
/// # Errors
///
/// Needs `n > q`; fails with a degenerate-data error when every subsample
/// is singular.
pub fn s_regression(
    data: &Dataset,
    cfg: &KernelConfig,
    n_subsamples: usize,
    seed: u64,
) -> Result<RegressionEstimate> {
    let (n, q) = (data.n_obs(), data.n_cols());
    if n <= q {
        return Err(Error::InvalidInput(format!(
            "S-estimator needs more rows than columns, got {n} rows and {q} columns"
        )));
    }
    if n_subsamples == 0 {
        return Err(Error::InvalidParameter("n_subsamples must be > 0".into()));
    }
    let gamma = breakdown_target(n, q);
    let zero_tol = 1e-12 * data.y.amax().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<(f64, usize, DVector<f64>)> = Vec::new();
    let mut sub_x = DMatrix::zeros(q, q);
    let mut sub_y = DVector::zeros(q);
    for j in 0..n_subsamples {
        let idx = rand::seq::index::sample(&mut rng, n, q);
        for (k, i) in idx.iter().enumerate() {
            sub_x.row_mut(k).copy_from(&data.x.row(i));
            sub_y[k] = data.y[i];
        }
        let Some(beta) = sub_x.clone().lu().solve(&sub_y) else {
            continue;
        };
        if beta.iter().any(|b| !b.is_finite()) {
            continue;
        }
        let r = data.residuals(&beta);
        let near_zero = r.iter().filter(|v| v.abs() <= zero_tol).count();
        if 2 * near_zero > n {
            return Ok(exact_fit_estimate(beta));
        }
        let scale = m_scale(r.as_slice(), cfg.c0, gamma)?;
        if scale.degenerate {
            return Ok(exact_fit_estimate(beta));
        }
        candidates.push((scale.sigma, j, beta));
    }
    if candidates.is_empty() {
        return Err(Error::DegenerateData(
            "every subsample produced a singular exact-fit system".into(),
        ));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best_sigma = candidates[0].0;
    let mut best_beta = candidates[0].2.clone();
    for (cand_sigma, _, cand_beta) in candidates.into_iter().take(5) {
        let (beta, sigma) = refine_s_candidate(data, cfg, gamma, cand_beta, cand_sigma, 50)?;
        if sigma < best_sigma {
            best_sigma = sigma;
            best_beta = beta;
        }
    }

    let weights = if best_sigma > 0.0 {
        Some(
            data.residuals(&best_beta)
                .map(|r| weight_bisquare(r / best_sigma, cfg.c0)),
        )
    } else {
        None
    };
    Ok(RegressionEstimate {
        beta: best_beta,
        sigma: best_sigma,
        weights,
        method: Method::S,
    })
}

fn exact_fit_estimate(beta: DVector<f64>) -> RegressionEstimate {
    RegressionEstimate {
        beta,
        sigma: 0.0,
        weights: None,
        method: Method::S,
    }
}

/// Reweighting refinement for one S candidate: each accepted step strictly
/// lowers the M-scale, so the loop is monotone and stops at the first
/// non-improving step.
fn refine_s_candidate(
    data: &Dataset,
    cfg: &KernelConfig,
    gamma: f64,
    mut beta: DVector<f64>,
    mut sigma: f64,
    max_steps: usize,
) -> Result<(DVector<f64>, f64)> {
    for _ in 0..max_steps {
        if sigma == 0.0 {
            break;
        }
        let r = data.residuals(&beta);
        let w = r.map(|ri| weight_bisquare(ri / sigma, cfg.c0));
        if w.sum() <= 0.0 {
            break;
        }
        let Ok(beta_new) = solve_wls(&data.x, &data.y, &w) else {
            break;
        };
        let r_new = data.residuals(&beta_new);
        let scale_new = m_scale(r_new.as_slice(), cfg.c0, gamma)?;
        let sigma_new = if scale_new.degenerate {
            0.0
        } else {
            scale_new.sigma
        };
        if sigma_new >= sigma {
            break;
        }
        beta = beta_new;
        sigma = sigma_new;
    }
    Ok((beta, sigma))
}

/// Efficient MM-estimator: iteratively reweighted least squares with weights
/// `W(r_i / sigma_0, c1)`, started at the S coefficients and keeping the
/// S-scale `sigma_0` fixed.
///
/// Iterates until the relative coefficient change falls below `1e-8` or 200
/// iterations, whichever comes first; a step is only accepted if it does not
/// increase the objective `sum rho(r_i / sigma_0, c1)`.
///
/// A degenerate initial scale (`sigma == 0`) marks an exact fit, which the
/// reweighting cannot improve; the initial coefficients are returned.
pub fn mm_regression(
    data: &Dataset,
    init: &RegressionEstimate,
    cfg: &KernelConfig,
) -> Result<RegressionEstimate> {
    if init.sigma == 0.0 {
        return Ok(RegressionEstimate {
            beta: init.beta.clone(),
            sigma: 0.0,
            weights: None,
            method: Method::Mm,
        });
    }
    let sigma0 = init.sigma;
    let objective = |r: &DVector<f64>| {
        r.iter()
            .map(|ri| rho_bisquare(ri / sigma0, cfg.c1))
            .sum::<f64>()
    };

    let mut beta = init.beta.clone();
    let mut r = data.residuals(&beta);
    let mut obj = objective(&r);
    for _ in 0..200 {
        let w = r.map(|ri| weight_bisquare(ri / sigma0, cfg.c1));
        if w.sum() <= 0.0 {
            break;
        }
        let beta_new = solve_wls(&data.x, &data.y, &w)?;
        let r_new = data.residuals(&beta_new);
        let obj_new = objective(&r_new);
        // IRWLS descent guarantee, allowing roundoff-level slack.
        debug_assert!(obj_new <= obj + 1e-9 * obj.abs().max(1.0));
        if obj_new > obj + 1e-12 * obj.abs().max(1.0) {
            break;
        }
        let step = (&beta_new - &beta).norm() / beta.norm().max(1.0);
        beta = beta_new;
        r = r_new;
        obj = obj_new;
        if step < 1e-8 {
            break;
        }
    }
    let weights = r.map(|ri| weight_bisquare(ri / sigma0, cfg.c1));
    Ok(RegressionEstimate {
        beta,
        sigma: sigma0,
        weights: Some(weights),
        method: Method::Mm,
    })
}

/// Robust weighted second-moment matrix of the predictors,
/// `C_w = sum(w_i x_i x_i') / sum(w_i)`, with `w_i = W(r_i / sigma, c1)`
/// evaluated at the estimate's coefficients and scale.
///
/// # Errors
///
/// Needs `est.sigma > 0`; fails with a degenerate-data error when every
/// weight is zero (all residuals at or beyond the rejection point).
pub fn weighted_design_cov(
    data: &Dataset,
    est: &RegressionEstimate,
    cfg: &KernelConfig,
) -> Result<DMatrix<f64>> {
    if est.sigma <= 0.0 {
        return Err(Error::InvalidInput(
            "weighted design covariance needs a positive residual scale".into(),
        ));
    }
    let r = data.residuals(&est.beta);
    let w = r.map(|ri| weight_bisquare(ri / est.sigma, cfg.c1));
    let total = w.sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData(
            "all robustness weights are zero".into(),
        ));
    }
    let mut xw = data.x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let mut cw = data.x.transpose() * xw / total;
    // Symmetrize away the roundoff skew from the accumulation order.
    let cw_t = cw.transpose();
    cw = (cw + cw_t) * 0.5;
    Ok(cw)
}
