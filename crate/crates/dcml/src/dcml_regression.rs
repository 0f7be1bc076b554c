//! Distance-constrained maximum likelihood for regression: blends the
//! efficient robust fit toward least squares as far as a Kullback-Leibler
//! ball around the robust fit allows.
//!
//! The constraint radius grows with the model dimension and shrinks with the
//! sample size ([`delta_regression`]), so on clean data the blend usually
//! reaches least squares outright, while under contamination the robust
//! anchor keeps it bounded.

use nalgebra::{DMatrix, DVector};

use crate::regression::{ls_fit, Dataset, Method, RegressionEstimate};
use crate::{Error, Result};

/// How the constrained maximum is computed.
///
/// Both solve the same problem: `ConvexCombination` moves along the segment
/// between the robust and least-squares coefficients (the closed form of the
/// constrained problem in the robust metric), while `LagrangeBlend` solves
/// the penalized normal equations with a Lagrange multiplier. The two differ
/// only through sampling noise in practice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcmlVariant {
    ConvexCombination,
    LagrangeBlend,
}

/// Constraint radius and solution variant for [`dcml_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmlRegressionConfig {
    pub delta: f64,
    pub variant: DcmlVariant,
}

impl DcmlRegressionConfig {
    pub fn new(delta: f64, variant: DcmlVariant) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "constraint radius must be positive and finite, got {delta}"
            )));
        }
        Ok(Self { delta, variant })
    }

    /// Default configuration: convex-combination solution with the
    /// [`delta_regression`] radius for `p` slopes and `n` observations.
    pub fn for_problem(p_slopes: usize, n: usize) -> Result<Self> {
        Self::new(
            delta_regression(p_slopes, n),
            DcmlVariant::ConvexCombination,
        )
    }
}

/// Constraint radius `0.3 p / n`, where `p` counts slope parameters
/// (the intercept excluded).
pub fn delta_regression(p_slopes: usize, n: usize) -> f64 {
    debug_assert!(p_slopes > 0 && n > 0);
    0.3 * p_slopes as f64 / n as f64
}

/// Kullback-Leibler distance between two coefficient vectors in the metric
/// of a positive definite matrix `c` and scale `sigma`:
/// `(beta2 - beta1)' C (beta2 - beta1) / sigma^2`.
///
/// # Errors
///
/// `c` must be symmetric positive definite and `sigma` positive.
pub fn kl_regression(
    beta1: &DVector<f64>,
    beta2: &DVector<f64>,
    c: &DMatrix<f64>,
    sigma: f64,
) -> Result<f64> {
    if beta1.len() != beta2.len() || c.nrows() != beta1.len() || !c.is_square() {
        return Err(Error::InvalidInput(
            "coefficient vectors and metric matrix disagree in dimension".into(),
        ));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive and finite, got {sigma}"
        )));
    }
    check_spd(c)?;
    Ok(quadratic_form(&(beta2 - beta1), c) / (sigma * sigma))
}

fn check_spd(c: &DMatrix<f64>) -> Result<()> {
    let asym = (c - c.transpose()).amax();
    if asym > 1e-8 * c.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(
            "metric matrix is not symmetric".into(),
        ));
    }
    if c.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(
            "metric matrix has a nonpositive eigenvalue".into(),
        ));
    }
    Ok(())
}

fn quadratic_form(d: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    (d.transpose() * c * d)[(0, 0)]
}

/// A DCML regression solution with its diagnostics.
#[derive(Debug, Clone)]
pub struct DcmlFit {
    pub estimate: RegressionEstimate,
    /// Blend weight on the least-squares coefficients: 1 when the constraint
    /// is inactive (the fit IS least squares), in `(0, 1)` on the segment.
    /// `None` for an interior `LagrangeBlend` solution, which does not lie
    /// on the segment.
    pub t: Option<f64>,
    /// The robust KL distance between the initial and least-squares
    /// coefficients; infinite when the initial scale is zero.
    pub distance: f64,
    /// Set when a `LagrangeBlend` request fell back to the convex
    /// combination because the metric was effectively singular.
    pub lagrange_fallback: bool,
}

/// Constrained maximum likelihood: moves from the robust initial fit toward
/// least squares until the KL constraint binds.
///
/// `init` is the efficient robust (MM) fit carrying the fixed scale; `cw`
/// is the weighted design covariance in whose metric distances are
/// measured. With `d = kl(init, LS)`:
///
/// - `d <= delta` returns the least-squares coefficients unchanged;
/// - `ConvexCombination` returns `t LS + (1 - t) init` with
///   `t = sqrt(delta / d)`, which meets the constraint with equality;
/// - `LagrangeBlend` solves `(X'X + lambda Cw) beta = X'X beta_LS +
///   lambda Cw beta_init`, tuning `lambda` until the constraint holds to
///   `1e-9` relative tolerance. A singular metric or penalized system makes
///   it fall back to the convex combination with `lagrange_fallback` set.
///
/// A zero initial scale marks an exact fit: the robust coefficients are
/// already the constrained maximum and are returned with `t = 0`.
pub fn dcml_fit(
    data: &Dataset,
    init: &RegressionEstimate,
    cw: &DMatrix<f64>,
    cfg: &DcmlRegressionConfig,
) -> Result<DcmlFit> {
    if cfg.delta <= 0.0 {
        return Err(Error::InvalidParameter(
            "constraint radius must be positive".into(),
        ));
    }
    if cw.nrows() != data.n_cols() || !cw.is_square() || cw.nrows() != init.beta.len() {
        return Err(Error::InvalidInput(
            "metric matrix does not match the design dimension".into(),
        ));
    }
    if init.sigma == 0.0 {
        return Ok(DcmlFit {
            estimate: RegressionEstimate {
                beta: init.beta.clone(),
                sigma: 0.0,
                weights: None,
                method: Method::Dcml,
            },
            t: Some(0.0),
            distance: f64::INFINITY,
            lagrange_fallback: false,
        });
    }

    let beta_ls = ls_fit(data)?.beta;
    let diff = &init.beta - &beta_ls;
    let sigma0 = init.sigma;
    let d = (quadratic_form(&diff, cw) / (sigma0 * sigma0)).max(0.0);

    let ls_result = |fallback: bool| DcmlFit {
        estimate: RegressionEstimate {
            beta: beta_ls.clone(),
            sigma: sigma0,
            weights: None,
            method: Method::Dcml,
        },
        t: Some(1.0),
        distance: d,
        lagrange_fallback: fallback,
    };

    if d <= cfg.delta {
        return Ok(ls_result(false));
    }

    match cfg.variant {
        DcmlVariant::ConvexCombination => Ok(convex_solution(init, &beta_ls, d, cfg.delta, false)),
        DcmlVariant::LagrangeBlend => {
            match lagrange_solution(data, init, cw, &beta_ls, cfg.delta) {
                Ok(Some(beta)) => Ok(DcmlFit {
                    estimate: RegressionEstimate {
                        beta,
                        sigma: sigma0,
                        weights: None,
                        method: Method::Dcml,
                    },
                    t: None,
                    distance: d,
                    lagrange_fallback: false,
                }),
                // Singular metric or penalized system: degrade gracefully.
                Ok(None) => Ok(convex_solution(init, &beta_ls, d, cfg.delta, true)),
                Err(e) => Err(e),
            }
        }
    }
}

fn convex_solution(
    init: &RegressionEstimate,
    beta_ls: &DVector<f64>,
    d: f64,
    delta: f64,
    fallback: bool,
) -> DcmlFit {
    let t = (delta / d).sqrt().min(1.0);
    let beta = beta_ls * t + &init.beta * (1.0 - t);
    DcmlFit {
        estimate: RegressionEstimate {
            beta,
            sigma: init.sigma,
            weights: None,
            method: Method::Dcml,
        },
        t: Some(t),
        distance: d,
        lagrange_fallback: fallback,
    }
}

/// Solves the penalized normal equations for the multiplier that makes the
/// constraint bind. Returns `Ok(None)` when the metric is too close to
/// singular for the Lagrange path.
fn lagrange_solution(
    data: &Dataset,
    init: &RegressionEstimate,
    cw: &DMatrix<f64>,
    beta_ls: &DVector<f64>,
    delta: f64,
) -> Result<Option<DVector<f64>>> {
    if cw.clone().cholesky().is_none() {
        return Ok(None);
    }
    let xtx = data.x().transpose() * data.x();
    let xtx_bls = &xtx * beta_ls;
    let sigma_sq = init.sigma * init.sigma;

    let beta_at = |lambda: f64| -> Option<DVector<f64>> {
        let lhs = &xtx + cw * lambda;
        let rhs = &xtx_bls + (cw * &init.beta) * lambda;
        lhs.cholesky().map(|chol| chol.solve(&rhs))
    };
    let distance_at = |beta: &DVector<f64>| -> f64 {
        quadratic_form(&(beta - &init.beta), cw) / sigma_sq
    };

    // The distance to the robust anchor falls from d at lambda = 0 toward 0
    // as lambda grows; double until the constraint is met, then bisect.
    let mut hi = 1.0;
    let mut hi_ok = false;
    for _ in 0..200 {
        match beta_at(hi) {
            Some(beta) => {
                if distance_at(&beta) <= delta {
                    hi_ok = true;
                    break;
                }
                hi *= 2.0;
            }
            None => return Ok(None),
        }
    }
    if !hi_ok {
        return Err(Error::Numerical(
            "Lagrange multiplier search failed to satisfy the constraint".into(),
        ));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let Some(beta) = beta_at(mid) else {
            return Ok(None);
        };
        let dist = distance_at(&beta);
        if (dist - delta).abs() <= 1e-9 * delta {
            return Ok(Some(beta));
        }
        if dist > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The bracket collapsed without hitting the tolerance; take the feasible
    // endpoint.
    Ok(beta_at(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelConfig;
    use crate::regression::{mm_regression, s_regression, weighted_design_cov};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy_data(seed: u64, n: usize, q: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = nalgebra::DMatrix::zeros(n, q);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..q {
                x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
            y[i] = rng.sample::<f64, _>(StandardNormal);
        }
        Dataset::new(x, y).unwrap()
    }

    fn chain(data: &Dataset, cfg: &DcmlRegressionConfig, seed: u64) -> (RegressionEstimate, DMatrix<f64>, DcmlFit) {
        let kernel = KernelConfig::default();
        let s = s_regression(data, &kernel, 300, seed).unwrap();
        let mm = mm_regression(data, &s, &kernel).unwrap();
        let cw = weighted_design_cov(data, &mm, &kernel).unwrap();
        let fit = dcml_fit(data, &mm, &cw, cfg).unwrap();
        (mm, cw, fit)
    }

    #[test]
    fn delta_shrinks_with_sample_size() {
        assert_relative_eq!(delta_regression(5, 100), 0.015);
        assert_relative_eq!(delta_regression(10, 200), 0.015);
        assert_relative_eq!(delta_regression(20, 100), 0.06);
        assert!(delta_regression(5, 50) > delta_regression(5, 200));
    }

    #[test]
    fn kl_regression_matches_hand_arithmetic() {
        let b1 = DVector::from_vec(vec![0.0, 0.0]);
        let b2 = DVector::from_vec(vec![1.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(kl_regression(&b1, &b2, &c, 2.0).unwrap(), 0.75);

        let eye = DMatrix::identity(2, 2);
        assert_relative_eq!(kl_regression(&b1, &b2, &eye, 1.0).unwrap(), 2.0);
        assert_eq!(kl_regression(&b2, &b2, &eye, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn kl_regression_rejects_bad_metrics() {
        let b = DVector::zeros(2);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            kl_regression(&b, &b, &indefinite, 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asymmetric = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(kl_regression(&b, &b, &asymmetric, 1.0).is_err());
        let eye = DMatrix::identity(2, 2);
        assert!(kl_regression(&b, &b, &eye, 0.0).is_err());
        assert!(kl_regression(&b, &b, &eye, -1.0).is_err());
    }

    #[test]
    fn inactive_constraint_returns_least_squares_exactly() {
        let data = noisy_data(1, 200, 3);
        // A huge radius guarantees d <= delta.
        let cfg = DcmlRegressionConfig::new(1e6, DcmlVariant::ConvexCombination).unwrap();
        let (_, _, fit) = chain(&data, &cfg, 7);
        let ls = ls_fit(&data).unwrap();
        assert_eq!(fit.estimate.beta, ls.beta);
        assert_eq!(fit.t, Some(1.0));

        let cfg = DcmlRegressionConfig::new(1e6, DcmlVariant::LagrangeBlend).unwrap();
        let (_, _, fit) = chain(&data, &cfg, 7);
        assert_eq!(fit.estimate.beta, ls.beta);
    }

    #[test]
    fn quarter_radius_gives_the_midpoint() {
        let data = noisy_data(2, 60, 3);
        let kernel = KernelConfig::default();
        let s = s_regression(&data, &kernel, 300, 3).unwrap();
        let mm = mm_regression(&data, &s, &kernel).unwrap();
        let cw = weighted_design_cov(&data, &mm, &kernel).unwrap();
        let ls = ls_fit(&data).unwrap();
        let d = kl_regression(&mm.beta, &ls.beta, &cw, mm.sigma).unwrap();
        assert!(d > 0.0);

        let cfg = DcmlRegressionConfig::new(d / 4.0, DcmlVariant::ConvexCombination).unwrap();
        let fit = dcml_fit(&data, &mm, &cw, &cfg).unwrap();
        assert_relative_eq!(fit.t.unwrap(), 0.5, max_relative = 1e-12);
        let midpoint = (&ls.beta + &mm.beta) * 0.5;
        assert!((fit.estimate.beta - midpoint).amax() < 1e-12);
    }

    #[test]
    fn constraint_is_satisfied_with_equality_when_active() {
        for seed in 0..20u64 {
            let data = noisy_data(seed + 10, 50, 4);
            let delta = delta_regression(3, 50);
            let cfg = DcmlRegressionConfig::new(delta, DcmlVariant::ConvexCombination).unwrap();
            let (mm, cw, fit) = chain(&data, &cfg, seed);
            let kl = kl_regression(&fit.estimate.beta, &mm.beta, &cw, mm.sigma).unwrap();
            assert!(kl <= delta * (1.0 + 1e-6));
            if fit.t.unwrap() < 1.0 {
                assert_relative_eq!(kl, delta, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn lagrange_blend_hits_the_constraint_radius() {
        let mut interior = 0;
        for seed in 0..10u64 {
            let data = noisy_data(seed + 50, 40, 4);
            let delta = delta_regression(3, 400); // small radius forces the constraint
            let cfg = DcmlRegressionConfig::new(delta, DcmlVariant::LagrangeBlend).unwrap();
            let (mm, cw, fit) = chain(&data, &cfg, seed);
            assert!(!fit.lagrange_fallback);
            let kl = kl_regression(&fit.estimate.beta, &mm.beta, &cw, mm.sigma).unwrap();
            assert!(kl <= delta * (1.0 + 1e-6));
            if fit.t.is_none() {
                interior += 1;
                assert_relative_eq!(kl, delta, max_relative = 1e-6);
            }
        }
        assert!(interior > 0, "no test case activated the constraint");
    }

    #[test]
    fn variants_stay_close_on_clean_data() {
        // The two solutions should differ by much less than the gap they
        // both bridge; recorded as a ratio, asserted only loosely.
        let mut total_gap = 0.0;
        let mut total_diff = 0.0;
        for seed in 0..30u64 {
            let data = noisy_data(seed + 100, 100, 6);
            let delta = delta_regression(5, 100);
            let convex = DcmlRegressionConfig::new(delta, DcmlVariant::ConvexCombination).unwrap();
            let lagrange = DcmlRegressionConfig::new(delta, DcmlVariant::LagrangeBlend).unwrap();
            let (mm, _, fit_c) = chain(&data, &convex, seed);
            let (_, _, fit_l) = chain(&data, &lagrange, seed);
            let ls = ls_fit(&data).unwrap();
            total_gap += (&mm.beta - &ls.beta).norm();
            total_diff += (&fit_c.estimate.beta - &fit_l.estimate.beta).norm();
        }
        let ratio = total_diff / total_gap;
        println!("variant gap ratio: {ratio:.4}");
        assert!(ratio.is_finite());
        assert!(ratio < 0.5, "variants unexpectedly far apart: {ratio}");
    }

    #[test]
    fn dcml_stays_between_the_anchors_componentwise() {
        for seed in 0..10u64 {
            let data = noisy_data(seed + 200, 40, 3);
            let delta = delta_regression(2, 400);
            let cfg = DcmlRegressionConfig::new(delta, DcmlVariant::ConvexCombination).unwrap();
            let (mm, _, fit) = chain(&data, &cfg, seed);
            let ls = ls_fit(&data).unwrap();
            for i in 0..fit.estimate.beta.len() {
                let lo = mm.beta[i].min(ls.beta[i]) - 1e-12;
                let hi = mm.beta[i].max(ls.beta[i]) + 1e-12;
                assert!(fit.estimate.beta[i] >= lo && fit.estimate.beta[i] <= hi);
            }
        }
    }

    #[test]
    fn singular_metric_falls_back_to_the_convex_path() {
        let data = noisy_data(3, 50, 3);
        let kernel = KernelConfig::default();
        let s = s_regression(&data, &kernel, 300, 5).unwrap();
        let mm = mm_regression(&data, &s, &kernel).unwrap();
        let singular = DMatrix::from_fn(3, 3, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let cfg = DcmlRegressionConfig::new(1e-6, DcmlVariant::LagrangeBlend).unwrap();
        let fit = dcml_fit(&data, &mm, &singular, &cfg).unwrap();
        assert!(fit.lagrange_fallback);
        assert!(fit.t.is_some());
    }

    #[test]
    fn exact_fit_input_passes_through() {
        let data = noisy_data(4, 30, 3);
        let init = RegressionEstimate {
            beta: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            sigma: 0.0,
            weights: None,
            method: Method::Mm,
        };
        let cw = DMatrix::identity(3, 3);
        let cfg = DcmlRegressionConfig::new(0.015, DcmlVariant::ConvexCombination).unwrap();
        let fit = dcml_fit(&data, &init, &cw, &cfg).unwrap();
        assert_eq!(fit.estimate.beta, init.beta);
        assert_eq!(fit.t, Some(0.0));
        assert!(fit.distance.is_infinite());
    }
}
