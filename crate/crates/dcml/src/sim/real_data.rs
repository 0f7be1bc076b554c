//! Fitting the estimator chain to a numeric CSV table, with a bundled
//! industrial-process example.
//!
//! The workflow fits least squares, S, MM, and the blended estimator twice:
//! once on the rows flagged as reliable ("good") and once on the whole
//! table. Both fits are scored by root mean squared residual over the good
//! rows only, so the second pass shows what the flagged rows cost each
//! estimator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dcml_regression::{dcml_fit, DcmlRegressionConfig};
use crate::kernels::KernelConfig;
use crate::regression::{
    default_subsample_count, ls_fit, mm_regression, s_regression, weighted_design_cov, Dataset,
    Method,
};
use crate::sim::{Metric, StudyResult};
use crate::{Error, Result};

/// Column-labeled numeric table parsed from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    headers: Vec<String>,
    values: DMatrix<f64>,
}

impl NumericTable {
    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no column named '{name}'; table has: {}",
                self.headers.join(", ")
            ))
        })
    }
}

/// The bundled 21-run plant-operation table (air flow, water temperature,
/// acid concentration, stack loss).
pub fn stackloss_csv() -> &'static str {
    include_str!("../../data/stackloss.csv")
}

/// Parses CSV text with a header row into a numeric table. Every field
/// must parse as a float and every row must match the header width.
pub fn parse_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() {
        return Err(Error::InvalidInput("CSV has no columns".into()));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::InvalidInput(format!(
                "row {} has {} fields, expected {}",
                n_rows + 1,
                record.len(),
                headers.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "row {}, column '{}': '{}' is not numeric",
                    n_rows + 1,
                    headers[col],
                    field
                ))
            })?;
            rows.push(value);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::InvalidInput("CSV has no data rows".into()));
    }
    let values = DMatrix::from_row_slice(n_rows, headers.len(), &rows);
    Ok(NumericTable { headers, values })
}

/// Reads a numeric CSV table from disk.
pub fn load_numeric_csv(path: &Path) -> Result<NumericTable> {
    let text = std::fs::read_to_string(path)?;
    parse_numeric_csv(&text)
}

fn subset_rows(values: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(keep.len(), values.ncols());
    for (i, &row) in keep.iter().enumerate() {
        out.set_row(i, &values.row(row));
    }
    out
}

fn fit_chain(data: &Dataset, kernel: &KernelConfig, seed: u64) -> Result<Vec<(Method, DVector<f64>)>> {
    let p_slopes = data.n_cols() - 1;
    let ls = ls_fit(data)?;
    let s = s_regression(data, kernel, default_subsample_count(data.n_cols()), seed)?;
    let mm = mm_regression(data, &s, kernel)?;
    let dcml_beta = if mm.sigma == 0.0 {
        mm.beta.clone()
    } else {
        let cw = weighted_design_cov(data, &mm, kernel)?;
        let cfg = DcmlRegressionConfig::for_problem(p_slopes, data.n_obs())?;
        dcml_fit(data, &mm, &cw, &cfg)?.estimate.beta
    };
    Ok(vec![
        (Method::Ls, ls.beta),
        (Method::S, s.beta),
        (Method::Mm, mm.beta),
        (Method::Dcml, dcml_beta),
    ])
}

fn rmse(data: &Dataset, beta: &DVector<f64>) -> f64 {
    (data.residuals(beta).norm_squared() / data.n_obs() as f64).sqrt()
}

/// Fits the estimator chain to a parsed table.
///
/// `response` names the target column; every other column enters as a
/// predictor (an intercept is prepended). `drop_rows` are 1-based indices
/// of rows excluded from the "good" subset. The result has one `RMSE` row
/// per estimator and fit, with scenario ids `{stem};fit=good` and
/// `{stem};fit=all`; both fits are scored on the good rows.
pub fn real_data_workflow(
    table: &NumericTable,
    stem: &str,
    response: &str,
    drop_rows: &[usize],
    seed: u64,
) -> Result<StudyResult> {
    let n = table.n_rows();
    let y_col = table.column_index(response)?;
    let mut dropped = vec![false; n];
    for &row in drop_rows {
        if row == 0 || row > n {
            return Err(Error::InvalidInput(format!(
                "drop row {row} out of range 1..={n}"
            )));
        }
        dropped[row - 1] = true;
    }
    let good: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    let p_slopes = table.headers.len() - 1;
    if good.len() <= p_slopes + 1 {
        return Err(Error::InvalidInput(format!(
            "only {} rows left after dropping, need more than {}",
            good.len(),
            p_slopes + 1
        )));
    }

    let make_dataset = |rows: &[usize]| -> Result<Dataset> {
        let subset = subset_rows(&table.values, rows);
        let y = DVector::from_iterator(rows.len(), subset.column(y_col).iter().copied());
        let predictors = subset.remove_column(y_col);
        Dataset::with_intercept(&predictors, y)
    };
    let good_data = make_dataset(&good)?;
    let all_rows: Vec<usize> = (0..n).collect();
    let all_data = make_dataset(&all_rows)?;

    let kernel = KernelConfig::default();
    let mut result = StudyResult::default();
    for (tag, data) in [("good", &good_data), ("all", &all_data)] {
        for (method, beta) in fit_chain(data, &kernel, seed)? {
            result.push(
                format!("{stem};fit={tag}"),
                method,
                Metric::Rmse,
                rmse(&good_data, &beta),
                0.0,
            )?;
        }
    }
    Ok(result)
}

/// [`real_data_workflow`] over raw CSV text.
pub fn real_data_workflow_from_str(
    text: &str,
    stem: &str,
    response: &str,
    drop_rows: &[usize],
    seed: u64,
) -> Result<StudyResult> {
    let table = parse_numeric_csv(text)?;
    real_data_workflow(&table, stem, response, drop_rows, seed)
}
