//! Simulation harness: scenario generation, study execution at desk scale,
//! and the real-data workflow, all fully deterministic given a seed.

pub mod real_data;
pub mod scenario;
pub mod study;

pub use real_data::{
    load_numeric_csv, parse_numeric_csv, real_data_workflow, real_data_workflow_from_str,
    stackloss_csv, NumericTable,
};
pub use scenario::{
    contaminate_multivariate, contaminate_regression, generate_multivariate_sample,
    generate_regression_sample, MultivariateScenario, RegressionScenario, XDistribution,
};
pub use study::{
    delta_quantile_diagnostic, run_multivariate_study, run_multivariate_study_with,
    run_regression_study, MvEstimator, MvStudyOptions,
};

use serde::Serialize;

use crate::{Error, Result};

/// Metric tags used by study outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    MaxMse,
    Efficiency,
    MeanLoss,
    Rmse,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Mse => "MSE",
            Metric::MaxMse => "MaxMSE",
            Metric::Efficiency => "Efficiency",
            Metric::MeanLoss => "MeanLoss",
            Metric::Rmse => "RMSE",
        })
    }
}

/// One result record: a metric value for a (scenario, estimator) pair with
/// its Monte Carlo standard error (zero where no sampling is involved).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub scenario: String,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    pub mc_std_error: f64,
}

/// Ordered result records plus the replicate failure accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    /// Replicates excluded because an estimator failed on them.
    pub failures: usize,
    /// Replicates attempted in total.
    pub attempts: usize,
}

impl StudyResult {
    /// Appends one record, validating that the value is finite and the
    /// standard error nonnegative.
    pub fn push(
        &mut self,
        scenario: impl Into<String>,
        estimator: impl std::fmt::Display,
        metric: impl std::fmt::Display,
        value: f64,
        mc_std_error: f64,
    ) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite study value for metric {metric}"
            )));
        }
        if !(mc_std_error >= 0.0) {
            return Err(Error::Numerical("negative Monte Carlo standard error".into()));
        }
        self.rows.push(StudyRow {
            scenario: scenario.into(),
            estimator: estimator.to_string(),
            metric: metric.to_string(),
            value,
            mc_std_error,
        });
        Ok(())
    }

    pub(crate) fn absorb(&mut self, other: StudyResult) {
        self.rows.extend(other.rows);
        self.failures += other.failures;
        self.attempts += other.attempts;
    }

    /// Serializes the rows as CSV with the stable column order
    /// `scenario,estimator,metric,value,mc_std_error`.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Numerical(format!("CSV buffer error: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(format!("CSV encoding error: {e}")))
    }

    /// Serializes the rows as a JSON array of record objects.
    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.rows)
            .map_err(|e| Error::Numerical(format!("JSON encoding error: {e}")))
    }
}

/// Mixes a master seed with an ordinal into an independent stream seed
/// (splitmix64 finalizer). Used to give every scenario and replicate its
/// own stream; deterministic.
pub fn derive_seed(seed: u64, ordinal: u64) -> u64 {
    let mut z = seed ^ ordinal.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
