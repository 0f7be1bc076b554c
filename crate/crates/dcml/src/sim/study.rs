//! Study execution: replicated fits over scenario grids with Monte Carlo
//! error bars, plus the constraint-radius diagnostic.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dcml_multivariate::{
    dcml_location, dcml_scatter, kl_location, kl_scatter, DcmlMultivariateConfig, DcmlTarget,
};
use crate::dcml_regression::{dcml_fit, DcmlRegressionConfig};
use crate::kernels::KernelConfig;
use crate::multivariate::{consistency_rescale, s_multivariate, sample_mean_cov};
use crate::numeric::quantile_sorted;
use crate::regression::{
    default_subsample_count, ls_fit, mm_regression, s_regression, weighted_design_cov, Dataset,
    Method,
};
use crate::sim::scenario::{
    contaminate_multivariate, contaminate_regression, generate_multivariate_sample,
    generate_regression_sample, MultivariateScenario, RegressionScenario,
};
use crate::sim::{derive_seed, Metric, StudyResult};
use crate::{Error, Result};

/// Estimators available in the multivariate studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvEstimator {
    Mle,
    S,
    Dcml,
}

impl MvEstimator {
    pub const ALL: [Self; 3] = [Self::Mle, Self::S, Self::Dcml];
}

impl std::fmt::Display for MvEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mle => "MLE",
            Self::S => "S",
            Self::Dcml => "DCML",
        })
    }
}

impl std::str::FromStr for MvEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MLE" => Ok(Self::Mle),
            "S" | "S-E" | "SE" => Ok(Self::S),
            "DCML" => Ok(Self::Dcml),
            other => Err(Error::InvalidParameter(format!(
                "unknown multivariate estimator '{other}'"
            ))),
        }
    }
}

/// Study-level switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MvStudyOptions {
    /// Report the scatter loss as `trace - logdet` without subtracting `p`
    /// (the form with a nonzero floor), instead of the default
    /// `trace - logdet - p` that vanishes at the truth.
    pub uncentered_scatter_loss: bool,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error of `mean(x)/mean(y)` by the delta method, honoring the
/// correlation between the paired per-replicate values.
fn ratio_se(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (a, b) in x.iter().zip(y) {
        var_x += (a - mx) * (a - mx);
        var_y += (b - my) * (b - my);
        cov += (a - mx) * (b - my);
    }
    var_x /= n - 1.0;
    var_y /= n - 1.0;
    cov /= n - 1.0;
    let var = (var_x / (my * my) + mx * mx * var_y / (my * my * my * my)
        - 2.0 * mx * cov / (my * my * my))
        / n;
    var.max(0.0).sqrt()
}

/// The requested regression estimates on one dataset, as squared
/// coefficient norms. The robust chain is shared: S feeds MM feeds DCML.
fn regression_norms(
    data: &Dataset,
    estimators: &[Method],
    kernel: &KernelConfig,
    p_slopes: usize,
    s_seed: u64,
) -> Result<Vec<(Method, f64)>> {
    let needs_s = estimators
        .iter()
        .any(|m| matches!(m, Method::S | Method::Mm | Method::Dcml));
    let needs_mm = estimators
        .iter()
        .any(|m| matches!(m, Method::Mm | Method::Dcml));
    let needs_dcml = estimators.contains(&Method::Dcml);

    let mut values: Vec<(Method, f64)> = Vec::with_capacity(estimators.len());
    let mut record = |method: Method, sq: f64| {
        if estimators.contains(&method) {
            values.push((method, sq));
        }
    };

    if estimators.contains(&Method::Ls) {
        let ls = ls_fit(data)?;
        record(Method::Ls, ls.beta.norm_squared());
    }
    if needs_s {
        let s = s_regression(data, kernel, default_subsample_count(data.n_cols()), s_seed)?;
        record(Method::S, s.beta.norm_squared());
        if needs_mm {
            let mm = mm_regression(data, &s, kernel)?;
            record(Method::Mm, mm.beta.norm_squared());
            if needs_dcml {
                let dcml_sq = if mm.sigma == 0.0 {
                    // Exact fit: the constraint ball has radius zero and the
                    // blend stays at the robust coefficients.
                    mm.beta.norm_squared()
                } else {
                    let cw = weighted_design_cov(data, &mm, kernel)?;
                    let cfg = DcmlRegressionConfig::for_problem(p_slopes, data.n_obs())?;
                    dcml_fit(data, &mm, &cw, &cfg)?.estimate.beta.norm_squared()
                };
                record(Method::Dcml, dcml_sq);
            }
        }
    }
    // Preserve the caller's estimator order.
    values.sort_by_key(|(m, _)| estimators.iter().position(|e| e == m));
    Ok(values)
}

fn dedupe<T: PartialEq + Copy>(items: &[T]) -> Vec<T> {
    let mut out = Vec::new();
    for &item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Runs the regression study: for every scenario and estimator, the mean
/// squared coefficient norm over `n_rep` replicates.
///
/// Clean scenarios (`epsilon = 0`) report `MSE` and `Efficiency` (the LS
/// mean on the same clean replicates over the estimator's mean).
/// Contaminated scenarios report a per-`K` `MSE` row (scenario id suffixed
/// with `;K=value`) and the worst case over the grid as `MaxMSE`.
///
/// A replicate where any estimator fails is excluded and counted; the study
/// errors out if more than 1% of replicates fail.
pub fn run_regression_study(
    scenarios: &[RegressionScenario],
    estimators: &[Method],
    n_rep: usize,
) -> Result<StudyResult> {
    if scenarios.is_empty() || n_rep == 0 {
        return Err(Error::InvalidParameter(
            "need at least one scenario and one replicate".into(),
        ));
    }
    let estimators = dedupe(estimators);
    if estimators.is_empty() {
        return Err(Error::InvalidParameter("need at least one estimator".into()));
    }
    let kernel = KernelConfig::default();
    let mut result = StudyResult::default();
    for sc in scenarios {
        let part = if sc.epsilon == 0.0 {
            clean_regression_cell(sc, &estimators, n_rep, &kernel)?
        } else {
            contaminated_regression_cell(sc, &estimators, n_rep, &kernel)?
        };
        result.absorb(part);
    }
    check_failure_rate(&result)?;
    Ok(result)
}

fn check_failure_rate(result: &StudyResult) -> Result<()> {
    if result.failures as f64 > 0.01 * result.attempts as f64 {
        return Err(Error::Numerical(format!(
            "{} of {} replicates failed (more than 1%)",
            result.failures, result.attempts
        )));
    }
    Ok(())
}

fn clean_regression_cell(
    sc: &RegressionScenario,
    estimators: &[Method],
    n_rep: usize,
    kernel: &KernelConfig,
) -> Result<StudyResult> {
    let outcomes: Vec<Option<(f64, Vec<(Method, f64)>)>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<(f64, Vec<(Method, f64)>)> {
                let data = generate_regression_sample(sc, r)?;
                let ls_sq = ls_fit(&data)?.beta.norm_squared();
                let fits =
                    regression_norms(&data, estimators, kernel, sc.p, derive_seed(sc.seed, r as u64))?;
                Ok((ls_sq, fits))
            };
            run().ok()
        })
        .collect();

    let mut result = StudyResult {
        attempts: n_rep,
        ..Default::default()
    };
    let included: Vec<&(f64, Vec<(Method, f64)>)> = outcomes.iter().flatten().collect();
    result.failures = n_rep - included.len();
    if included.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed for scenario {}",
            sc.id()
        )));
    }
    let ls_baseline: Vec<f64> = included.iter().map(|(ls, _)| *ls).collect();
    let id = sc.id();
    for (pos, &method) in estimators.iter().enumerate() {
        let values: Vec<f64> = included.iter().map(|(_, fits)| fits[pos].1).collect();
        debug_assert!(included.iter().all(|(_, fits)| fits[pos].0 == method));
        let (mse, se) = mean_and_se(&values);
        result.push(&id, method, Metric::Mse, mse, se)?;
        let (ls_mean, _) = mean_and_se(&ls_baseline);
        result.push(
            &id,
            method,
            Metric::Efficiency,
            ls_mean / mse,
            ratio_se(&ls_baseline, &values),
        )?;
    }
    Ok(result)
}

fn contaminated_regression_cell(
    sc: &RegressionScenario,
    estimators: &[Method],
    n_rep: usize,
    kernel: &KernelConfig,
) -> Result<StudyResult> {
    let outcomes: Vec<Option<Vec<Vec<(Method, f64)>>>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Vec<Vec<(Method, f64)>>> {
                let clean = generate_regression_sample(sc, r)?;
                sc.k_grid
                    .iter()
                    .enumerate()
                    .map(|(ki, &k)| {
                        let data = contaminate_regression(&clean, sc, k)?;
                        regression_norms(
                            &data,
                            estimators,
                            kernel,
                            sc.p,
                            derive_seed(sc.seed, (r as u64) * 1_000 + ki as u64),
                        )
                    })
                    .collect()
            };
            run().ok()
        })
        .collect();

    let mut result = StudyResult {
        attempts: n_rep,
        ..Default::default()
    };
    let included: Vec<&Vec<Vec<(Method, f64)>>> = outcomes.iter().flatten().collect();
    result.failures = n_rep - included.len();
    if included.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed for scenario {}",
            sc.id()
        )));
    }
    let id = sc.id();
    for (pos, &method) in estimators.iter().enumerate() {
        let mut best: Option<(f64, f64)> = None;
        for (ki, k) in sc.k_grid.iter().enumerate() {
            let values: Vec<f64> = included.iter().map(|reps| reps[ki][pos].1).collect();
            let (mse, se) = mean_and_se(&values);
            result.push(format!("{id};K={k}"), method, Metric::Mse, mse, se)?;
            if best.map_or(true, |(b, _)| mse > b) {
                best = Some((mse, se));
            }
        }
        let (max_mse, se) = best.expect("nonempty K grid");
        result.push(&id, method, Metric::MaxMse, max_mse, se)?;
    }
    Ok(result)
}

/// Scatter loss `trace(S) - logdet(S) - p` (minimized at the identity);
/// `uncentered` omits the `- p`.
fn scatter_loss(sigma: &DMatrix<f64>, uncentered: bool) -> Result<f64> {
    let p = sigma.nrows() as f64;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("scatter estimate lost definiteness".into()))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let floor = if uncentered { 0.0 } else { p };
    Ok(sigma.trace() - logdet - floor)
}

struct MvLosses {
    scatter: f64,
    location: f64,
}

fn multivariate_losses(
    obs: &DMatrix<f64>,
    estimators: &[MvEstimator],
    kernel: &KernelConfig,
    s_seed: u64,
    uncentered: bool,
) -> Result<(MvLosses, Vec<(MvEstimator, MvLosses)>)> {
    let (n, p) = (obs.nrows(), obs.ncols());
    let mle = sample_mean_cov(obs)?;
    let baseline = MvLosses {
        scatter: scatter_loss(mle.sigma_mat(), uncentered)?,
        location: mle.mu().norm_squared(),
    };
    let needs_s = estimators
        .iter()
        .any(|e| matches!(e, MvEstimator::S | MvEstimator::Dcml));

    let mut values = Vec::with_capacity(estimators.len());
    for &est in estimators {
        if est == MvEstimator::Mle {
            values.push((
                est,
                MvLosses {
                    scatter: baseline.scatter,
                    location: baseline.location,
                },
            ));
        }
    }
    if needs_s {
        let (shape, _) = s_multivariate(obs, kernel, default_subsample_count(p), s_seed)?;
        let s_est = consistency_rescale(obs, shape.mu(), shape.sigma_mat())?;
        if estimators.contains(&MvEstimator::S) {
            values.push((
                MvEstimator::S,
                MvLosses {
                    scatter: scatter_loss(s_est.sigma_mat(), uncentered)?,
                    location: s_est.mu().norm_squared(),
                },
            ));
        }
        if estimators.contains(&MvEstimator::Dcml) {
            let cfg = DcmlMultivariateConfig::for_problem(p, n);
            let (sigma_dc, _) = dcml_scatter(mle.sigma_mat(), s_est.sigma_mat(), cfg.delta_sigma)?;
            let (mu_dc, _) = dcml_location(mle.mu(), s_est.mu(), s_est.sigma_mat(), cfg.delta_mu)?;
            values.push((
                MvEstimator::Dcml,
                MvLosses {
                    scatter: scatter_loss(&sigma_dc, uncentered)?,
                    location: mu_dc.norm_squared(),
                },
            ));
        }
    }
    values.sort_by_key(|(e, _)| estimators.iter().position(|x| x == e));
    Ok((baseline, values))
}

/// Runs the multivariate study with default options.
pub fn run_multivariate_study(
    scenarios: &[MultivariateScenario],
    estimators: &[MvEstimator],
    n_rep: usize,
) -> Result<StudyResult> {
    run_multivariate_study_with(scenarios, estimators, n_rep, &MvStudyOptions::default())
}

/// Runs the multivariate study: mean scatter and location losses per
/// scenario and estimator, with `Efficiency` (classical over estimator mean
/// loss) on clean scenarios and per-`K` plus worst-case (`MaxMSE`) rows on
/// contaminated ones. Rows carry a `;target=scatter` or `;target=location`
/// suffix on the scenario id.
pub fn run_multivariate_study_with(
    scenarios: &[MultivariateScenario],
    estimators: &[MvEstimator],
    n_rep: usize,
    options: &MvStudyOptions,
) -> Result<StudyResult> {
    if scenarios.is_empty() || n_rep == 0 {
        return Err(Error::InvalidParameter(
            "need at least one scenario and one replicate".into(),
        ));
    }
    let estimators = dedupe(estimators);
    if estimators.is_empty() {
        return Err(Error::InvalidParameter("need at least one estimator".into()));
    }
    let kernel = KernelConfig::default();
    let mut result = StudyResult::default();
    for sc in scenarios {
        let part = if sc.epsilon == 0.0 {
            clean_multivariate_cell(sc, &estimators, n_rep, &kernel, options)?
        } else {
            contaminated_multivariate_cell(sc, &estimators, n_rep, &kernel, options)?
        };
        result.absorb(part);
    }
    check_failure_rate(&result)?;
    Ok(result)
}

fn clean_multivariate_cell(
    sc: &MultivariateScenario,
    estimators: &[MvEstimator],
    n_rep: usize,
    kernel: &KernelConfig,
    options: &MvStudyOptions,
) -> Result<StudyResult> {
    let outcomes: Vec<Option<(MvLosses, Vec<(MvEstimator, MvLosses)>)>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let obs = generate_multivariate_sample(sc, r);
            multivariate_losses(
                &obs,
                estimators,
                kernel,
                derive_seed(sc.seed, r as u64),
                options.uncentered_scatter_loss,
            )
            .ok()
        })
        .collect();

    let mut result = StudyResult {
        attempts: n_rep,
        ..Default::default()
    };
    let included: Vec<&(MvLosses, Vec<(MvEstimator, MvLosses)>)> =
        outcomes.iter().flatten().collect();
    result.failures = n_rep - included.len();
    if included.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed for scenario {}",
            sc.id()
        )));
    }
    let id = sc.id();
    for (target, pick) in [
        ("scatter", &(|l: &MvLosses| l.scatter) as &dyn Fn(&MvLosses) -> f64),
        ("location", &|l: &MvLosses| l.location),
    ] {
        let baseline: Vec<f64> = included.iter().map(|(b, _)| pick(b)).collect();
        let (baseline_mean, _) = mean_and_se(&baseline);
        for (pos, &est) in estimators.iter().enumerate() {
            let values: Vec<f64> = included.iter().map(|(_, v)| pick(&v[pos].1)).collect();
            let (mean, se) = mean_and_se(&values);
            let scenario = format!("{id};target={target}");
            result.push(&scenario, est, Metric::MeanLoss, mean, se)?;
            result.push(
                &scenario,
                est,
                Metric::Efficiency,
                baseline_mean / mean,
                ratio_se(&baseline, &values),
            )?;
        }
    }
    Ok(result)
}

fn contaminated_multivariate_cell(
    sc: &MultivariateScenario,
    estimators: &[MvEstimator],
    n_rep: usize,
    kernel: &KernelConfig,
    options: &MvStudyOptions,
) -> Result<StudyResult> {
    let outcomes: Vec<Option<Vec<Vec<(MvEstimator, MvLosses)>>>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Vec<Vec<(MvEstimator, MvLosses)>>> {
                let clean = generate_multivariate_sample(sc, r);
                sc.k_grid
                    .iter()
                    .enumerate()
                    .map(|(ki, &k)| {
                        let obs = contaminate_multivariate(&clean, sc, k)?;
                        let (_, values) = multivariate_losses(
                            &obs,
                            estimators,
                            kernel,
                            derive_seed(sc.seed, (r as u64) * 1_000 + ki as u64),
                            options.uncentered_scatter_loss,
                        )?;
                        Ok(values)
                    })
                    .collect()
            };
            run().ok()
        })
        .collect();

    let mut result = StudyResult {
        attempts: n_rep,
        ..Default::default()
    };
    let included: Vec<&Vec<Vec<(MvEstimator, MvLosses)>>> = outcomes.iter().flatten().collect();
    result.failures = n_rep - included.len();
    if included.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed for scenario {}",
            sc.id()
        )));
    }
    let id = sc.id();
    for (target, pick) in [
        ("scatter", &(|l: &MvLosses| l.scatter) as &dyn Fn(&MvLosses) -> f64),
        ("location", &|l: &MvLosses| l.location),
    ] {
        for (pos, &est) in estimators.iter().enumerate() {
            let mut best: Option<(f64, f64)> = None;
            for (ki, k) in sc.k_grid.iter().enumerate() {
                let values: Vec<f64> =
                    included.iter().map(|reps| pick(&reps[ki][pos].1)).collect();
                let (mean, se) = mean_and_se(&values);
                result.push(
                    format!("{id};target={target};K={k}"),
                    est,
                    Metric::MeanLoss,
                    mean,
                    se,
                )?;
                if best.map_or(true, |(b, _)| mean > b) {
                    best = Some((mean, se));
                }
            }
            let (max_loss, se) = best.expect("nonempty K grid");
            result.push(format!("{id};target={target}"), est, Metric::MaxMse, max_loss, se)?;
        }
    }
    Ok(result)
}

/// Simulated `alpha`-quantile of the divergence between the rescaled
/// S-estimate and the MLE under the clean `N_p(0, I)` model; the sampled
/// counterpart of the power-law constraint radius.
pub fn delta_quantile_diagnostic(
    p: usize,
    n: usize,
    target: DcmlTarget,
    alpha: f64,
    n_rep: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n_rep == 0 {
        return Err(Error::InvalidParameter("n_rep must be positive".into()));
    }
    let sc = MultivariateScenario::new(p, n, 0.0, Vec::new(), seed)?;
    let kernel = KernelConfig::default();
    let divergences: Result<Vec<f64>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let obs = generate_multivariate_sample(&sc, r);
            let mle = sample_mean_cov(&obs)?;
            let (shape, _) =
                s_multivariate(&obs, &kernel, default_subsample_count(p), derive_seed(seed, r as u64))?;
            let s_est = consistency_rescale(&obs, shape.mu(), shape.sigma_mat())?;
            match target {
                DcmlTarget::Scatter => kl_scatter(s_est.sigma_mat(), mle.sigma_mat()),
                DcmlTarget::Location => kl_location(s_est.mu(), mle.mu(), s_est.sigma_mat()),
            }
        })
        .collect();
    let mut divergences = divergences?;
    divergences.sort_by(f64::total_cmp);
    quantile_sorted(&divergences, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::ErrorDistribution;
    use crate::sim::scenario::XDistribution;

    fn clean_sc(p: usize, n: usize, seed: u64) -> RegressionScenario {
        RegressionScenario::clean(p, n, XDistribution::Normal, ErrorDistribution::Normal, seed)
            .unwrap()
    }

    #[test]
    fn clean_study_reports_mse_and_efficiency() {
        let sc = clean_sc(2, 50, 3);
        let result =
            run_regression_study(&[sc.clone()], &[Method::Ls, Method::Dcml], 30).unwrap();
        assert_eq!(result.attempts, 30);
        assert_eq!(result.failures, 0);
        assert_eq!(result.rows.len(), 4);
        let ls_eff = result
            .rows
            .iter()
            .find(|r| r.estimator == "LS" && r.metric == "Efficiency")
            .unwrap();
        assert_eq!(ls_eff.value, 1.0);
        assert_eq!(ls_eff.mc_std_error, 0.0);
        for row in &result.rows {
            assert!(row.value.is_finite() && row.mc_std_error >= 0.0);
            assert!(row.scenario.starts_with("reg;p=2;n=50"));
        }
        let again = run_regression_study(&[sc], &[Method::Ls, Method::Dcml], 30).unwrap();
        assert_eq!(result, again);
    }

    #[test]
    fn mse_shrinks_with_sample_size() {
        let mut last = f64::INFINITY;
        for n in [50usize, 200, 800] {
            let sc = clean_sc(2, n, 11);
            let result = run_regression_study(&[sc], &[Method::Ls], 40).unwrap();
            let mse = result
                .rows
                .iter()
                .find(|r| r.metric == "MSE")
                .unwrap()
                .value;
            assert!(mse < last, "MSE did not shrink at n = {n}");
            last = mse;
        }
    }

    #[test]
    fn contaminated_study_reports_per_k_and_max_rows() {
        let sc = RegressionScenario::new(
            2,
            40,
            XDistribution::Normal,
            ErrorDistribution::Normal,
            0.1,
            vec![0.5, 1.0, 2.0],
            5.0,
            7,
        )
        .unwrap();
        let result = run_regression_study(&[sc], &[Method::Mm, Method::Dcml], 10).unwrap();
        // Two estimators x (three per-K rows + one max row).
        assert_eq!(result.rows.len(), 8);
        for est in ["MM", "DCML"] {
            let per_k: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.estimator == est && r.metric == "MSE")
                .map(|r| r.value)
                .collect();
            assert_eq!(per_k.len(), 3);
            let max_row = result
                .rows
                .iter()
                .find(|r| r.estimator == est && r.metric == "MaxMSE")
                .unwrap();
            let max = per_k.iter().fold(f64::MIN, |a, &b| a.max(b));
            assert_eq!(max_row.value, max);
            assert!(!max_row.scenario.contains(";K="));
        }
    }

    #[test]
    fn study_input_validation() {
        let sc = clean_sc(2, 30, 1);
        assert!(run_regression_study(&[], &[Method::Ls], 5).is_err());
        assert!(run_regression_study(&[sc.clone()], &[], 5).is_err());
        assert!(run_regression_study(&[sc], &[Method::Ls], 0).is_err());
    }

    #[test]
    fn multivariate_clean_study_rows() {
        let sc = MultivariateScenario::new(2, 40, 0.0, Vec::new(), 5).unwrap();
        let result = run_multivariate_study(&[sc.clone()], &MvEstimator::ALL, 20).unwrap();
        // Three estimators x two targets x (MeanLoss + Efficiency).
        assert_eq!(result.rows.len(), 12);
        for target in ["scatter", "location"] {
            let mle_eff = result
                .rows
                .iter()
                .find(|r| {
                    r.estimator == "MLE"
                        && r.metric == "Efficiency"
                        && r.scenario.ends_with(target)
                })
                .unwrap();
            assert_eq!(mle_eff.value, 1.0);
        }
        for row in &result.rows {
            if row.metric == "MeanLoss" {
                assert!(row.value >= 0.0, "loss {} negative", row.value);
            }
        }

        // The floor-free and floored scatter losses differ by exactly p.
        let uncentered = run_multivariate_study_with(
            &[sc],
            &MvEstimator::ALL,
            20,
            &MvStudyOptions {
                uncentered_scatter_loss: true,
            },
        )
        .unwrap();
        let pick = |res: &StudyResult, est: &str| {
            res.rows
                .iter()
                .find(|r| {
                    r.estimator == est
                        && r.metric == "MeanLoss"
                        && r.scenario.contains("scatter")
                })
                .unwrap()
                .value
        };
        for est in ["MLE", "S", "DCML"] {
            let diff = pick(&uncentered, est) - pick(&result, est);
            assert!((diff - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn multivariate_contaminated_study_rows() {
        let sc = MultivariateScenario::new(2, 40, 0.1, vec![2.0, 5.0], 9).unwrap();
        let result = run_multivariate_study(&[sc], &[MvEstimator::Mle, MvEstimator::Dcml], 8)
            .unwrap();
        // Two estimators x two targets x (two per-K rows + one max row).
        assert_eq!(result.rows.len(), 12);
        let max_rows: Vec<_> = result.rows.iter().filter(|r| r.metric == "MaxMSE").collect();
        assert_eq!(max_rows.len(), 4);
    }

    #[test]
    fn delta_diagnostic_is_deterministic_and_monotone() {
        let q1 = delta_quantile_diagnostic(2, 20, DcmlTarget::Scatter, 0.4, 40, 13).unwrap();
        let q2 = delta_quantile_diagnostic(2, 20, DcmlTarget::Scatter, 0.4, 40, 13).unwrap();
        assert_eq!(q1, q2);
        assert!(q1 > 0.0);
        let lo = delta_quantile_diagnostic(2, 20, DcmlTarget::Scatter, 0.2, 40, 13).unwrap();
        let hi = delta_quantile_diagnostic(2, 20, DcmlTarget::Scatter, 0.6, 40, 13).unwrap();
        assert!(lo <= q1 && q1 <= hi);
        assert!(delta_quantile_diagnostic(2, 20, DcmlTarget::Scatter, 1.2, 40, 13).is_err());
    }
}
