//! Python bindings for the robust-estimation library: bisquare kernels,
//! M-scale, the regression chain (LS, S, MM, DCML), and the multivariate
//! chain (MLE, rescaled S, constrained blends). Matrices cross the boundary
//! as plain lists of row lists so the module has no numpy build dependency.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dcml::dcml_multivariate::{self, DcmlTarget};
use dcml::dcml_regression::{dcml_fit, DcmlRegressionConfig};
use dcml::kernels::{self, KernelConfig};
use dcml::regression::{
    default_subsample_count, ls_fit, mm_regression, s_regression, weighted_design_cov, Dataset,
    Method,
};
use dcml::sim::{parse_numeric_csv, stackloss_csv};
use dcml::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::InvalidParameter(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    let width = rows[0].len();
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(
            "matrix rows must be non-empty and of equal length",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Bisquare loss, clamped to 1 outside `[-c, c]`.
#[pyfunction]
fn rho(t: f64, c: f64) -> f64 {
    kernels::rho_bisquare(t, c)
}

/// Bisquare score function (derivative of `rho`).
#[pyfunction]
fn psi(t: f64, c: f64) -> f64 {
    kernels::psi_bisquare(t, c)
}

/// Bisquare weight `psi(t) / t`, continuous at zero.
#[pyfunction]
fn weight(t: f64, c: f64) -> f64 {
    kernels::weight_bisquare(t, c)
}

/// M-scale of the residuals: the sigma solving `mean rho(r / sigma) = gamma`.
/// Returns `(sigma, degenerate)`.
#[pyfunction]
#[pyo3(signature = (residuals, c=kernels::BREAKDOWN_TUNING, gamma=0.5))]
fn m_scale(residuals: Vec<f64>, c: f64, gamma: f64) -> PyResult<(f64, bool)> {
    let est = kernels::m_scale(&residuals, c, gamma).map_err(to_py_err)?;
    Ok((est.sigma, est.degenerate))
}

/// Tuning constant giving the requested Gaussian efficiency of the bisquare
/// M-estimator.
#[pyfunction]
fn tuning_constant_for_efficiency(efficiency: f64) -> PyResult<f64> {
    kernels::tuning_constant_for_efficiency(efficiency).map_err(to_py_err)
}

/// Constraint radius for regression, `0.3 p / n` with `p` counting slopes.
#[pyfunction]
fn delta_regression(p_slopes: usize, n: usize) -> f64 {
    dcml::dcml_regression::delta_regression(p_slopes, n)
}

/// Power-law constraint radius for the multivariate blends;
/// `target` is "scatter" or "location".
#[pyfunction]
fn delta_multivariate(p: usize, n: usize, target: &str) -> PyResult<f64> {
    let target: DcmlTarget = target.parse().map_err(to_py_err)?;
    Ok(dcml_multivariate::delta_multivariate(p, n, target))
}

/// Gaussian KL-type divergence between two scatter matrices.
#[pyfunction]
fn kl_scatter(sigma0: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> PyResult<f64> {
    dcml_multivariate::kl_scatter(&matrix_from_rows(sigma0)?, &matrix_from_rows(sigma)?)
        .map_err(to_py_err)
}

/// Location divergence `(mu - mu0)' Sigma^-1 (mu - mu0)`.
#[pyfunction]
fn kl_location(mu0: Vec<f64>, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> PyResult<f64> {
    dcml_multivariate::kl_location(
        &DVector::from_vec(mu0),
        &DVector::from_vec(mu),
        &matrix_from_rows(sigma)?,
    )
    .map_err(to_py_err)
}

/// A fitted regression: coefficients (intercept first when requested),
/// residual scale, and for the constrained blend the mixing weight on the
/// unconstrained fit plus the divergence actually used.
#[pyclass(get_all)]
#[derive(Clone)]
struct RegressionFit {
    beta: Vec<f64>,
    sigma: f64,
    method: String,
    t: Option<f64>,
    distance: Option<f64>,
}

#[pymethods]
impl RegressionFit {
    fn __repr__(&self) -> String {
        format!(
            "RegressionFit(method='{}', sigma={:.6}, beta={:?})",
            self.method, self.sigma, self.beta
        )
    }
}

/// Fits one of LS, S, MM, or DCML. `x` is one predictor row per observation;
/// an intercept column is prepended unless `intercept=False`.
#[pyfunction]
#[pyo3(signature = (x, y, method="DCML", *, intercept=true, seed=0))]
fn fit_regression(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    method: &str,
    intercept: bool,
    seed: u64,
) -> PyResult<RegressionFit> {
    let method: Method = method.parse().map_err(to_py_err)?;
    let predictors = matrix_from_rows(x)?;
    let p_slopes = predictors.ncols();
    let response = DVector::from_vec(y);
    let data = if intercept {
        Dataset::with_intercept(&predictors, response)
    } else {
        Dataset::new(predictors, response)
    }
    .map_err(to_py_err)?;
    let kernel = KernelConfig::default();
    let n_subsamples = default_subsample_count(data.n_cols());

    let done = |est: &dcml::regression::RegressionEstimate,
                t: Option<f64>,
                distance: Option<f64>| RegressionFit {
        beta: est.beta.iter().copied().collect(),
        sigma: est.sigma,
        method: method.to_string(),
        t,
        distance,
    };
    match method {
        Method::Ls => Ok(done(&ls_fit(&data).map_err(to_py_err)?, None, None)),
        Method::S => Ok(done(
            &s_regression(&data, &kernel, n_subsamples, seed).map_err(to_py_err)?,
            None,
            None,
        )),
        Method::Mm => {
            let s = s_regression(&data, &kernel, n_subsamples, seed).map_err(to_py_err)?;
            Ok(done(&mm_regression(&data, &s, &kernel).map_err(to_py_err)?, None, None))
        }
        Method::Dcml => {
            let s = s_regression(&data, &kernel, n_subsamples, seed).map_err(to_py_err)?;
            let mm = mm_regression(&data, &s, &kernel).map_err(to_py_err)?;
            if mm.sigma == 0.0 {
                return Ok(done(&mm, None, None));
            }
            let cw = weighted_design_cov(&data, &mm, &kernel).map_err(to_py_err)?;
            let cfg = DcmlRegressionConfig::for_problem(p_slopes, data.n_obs()).map_err(to_py_err)?;
            let fit = dcml_fit(&data, &mm, &cw, &cfg).map_err(to_py_err)?;
            Ok(done(&fit.estimate, fit.t, Some(fit.distance)))
        }
    }
}

/// The full multivariate chain on one sample: sample mean/covariance,
/// rescaled subsampling S-estimate, and the two constrained blends.
#[pyclass(get_all)]
#[derive(Clone)]
struct MultivariateFit {
    mle_mean: Vec<f64>,
    mle_scatter: Vec<Vec<f64>>,
    s_mean: Vec<f64>,
    s_scatter: Vec<Vec<f64>>,
    s_scale: f64,
    dcml_mean: Vec<f64>,
    dcml_scatter: Vec<Vec<f64>>,
    t_scatter: f64,
    t_location: f64,
}

#[pymethods]
impl MultivariateFit {
    fn __repr__(&self) -> String {
        format!(
            "MultivariateFit(p={}, t_scatter={:.4}, t_location={:.4})",
            self.mle_mean.len(),
            self.t_scatter,
            self.t_location
        )
    }
}

/// Fits location and scatter on `obs` (one observation per row).
#[pyfunction]
#[pyo3(signature = (obs, *, seed=0, n_subsamples=None))]
fn fit_multivariate(
    obs: Vec<Vec<f64>>,
    seed: u64,
    n_subsamples: Option<usize>,
) -> PyResult<MultivariateFit> {
    let obs = matrix_from_rows(obs)?;
    let n_subsamples = n_subsamples.unwrap_or_else(|| default_subsample_count(obs.ncols()));
    let fit =
        dcml_multivariate::fit_multivariate(&obs, &KernelConfig::default(), n_subsamples, seed, None)
            .map_err(to_py_err)?;
    Ok(MultivariateFit {
        mle_mean: fit.mle.mu().iter().copied().collect(),
        mle_scatter: matrix_to_rows(fit.mle.sigma_mat()),
        s_mean: fit.s_est.mu().iter().copied().collect(),
        s_scatter: matrix_to_rows(fit.s_est.sigma_mat()),
        s_scale: fit.s_scale,
        dcml_mean: fit.dcml.mu().iter().copied().collect(),
        dcml_scatter: matrix_to_rows(fit.dcml.sigma_mat()),
        t_scatter: fit.t_scatter,
        t_location: fit.t_location,
    })
}

/// The bundled 21-row plant-operations dataset as `(headers, rows)`.
#[pyfunction]
fn stackloss() -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let table = parse_numeric_csv(stackloss_csv()).map_err(to_py_err)?;
    Ok((table.headers().to_vec(), matrix_to_rows(table.values())))
}

#[pymodule]
fn dcml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(weight, m)?)?;
    m.add_function(wrap_pyfunction!(m_scale, m)?)?;
    m.add_function(wrap_pyfunction!(tuning_constant_for_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(delta_regression, m)?)?;
    m.add_function(wrap_pyfunction!(delta_multivariate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_scatter, m)?)?;
    m.add_function(wrap_pyfunction!(kl_location, m)?)?;
    m.add_function(wrap_pyfunction!(fit_regression, m)?)?;
    m.add_function(wrap_pyfunction!(fit_multivariate, m)?)?;
    m.add_function(wrap_pyfunction!(stackloss, m)?)?;
    m.add_class::<RegressionFit>()?;
    m.add_class::<MultivariateFit>()?;
    m.add("BREAKDOWN_TUNING", kernels::BREAKDOWN_TUNING)?;
    m.add("EFFICIENT_TUNING", kernels::EFFICIENT_TUNING)?;
    Ok(())
}
