//! Scenario definitions and deterministic sample generation for the
//! regression and multivariate studies.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::asymptotics::ErrorDistribution;
use crate::regression::Dataset;
use crate::{Error, Result};

/// Predictor distribution, standardized to mean 0 and variance 1 with the
/// distribution's exact moments so the design second-moment matrix is the
/// identity in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XDistribution {
    Normal,
    Uniform01,
    Student4,
    NormalSquared,
    UniformSquared,
}

impl XDistribution {
    pub const ALL: [Self; 5] = [
        Self::Normal,
        Self::Uniform01,
        Self::Student4,
        Self::NormalSquared,
        Self::UniformSquared,
    ];

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal => rng.sample(StandardNormal),
            // U(0,1): mean 1/2, variance 1/12.
            Self::Uniform01 => (rng.gen_range(0.0..1.0) - 0.5) * 12f64.sqrt(),
            // t4: variance 2.
            Self::Student4 => {
                let t: f64 = rng.sample(rand_distr::StudentT::new(4.0).expect("df > 0"));
                t / 2f64.sqrt()
            }
            // Squared standard normal: mean 1, variance 2.
            Self::NormalSquared => {
                let g: f64 = rng.sample(StandardNormal);
                (g * g - 1.0) / 2f64.sqrt()
            }
            // Squared U(0,1): mean 1/3, variance 4/45.
            Self::UniformSquared => {
                let u: f64 = rng.gen_range(0.0..1.0);
                (u * u - 1.0 / 3.0) / (4.0 / 45.0_f64).sqrt()
            }
        }
    }
}

impl std::fmt::Display for XDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::Uniform01 => "uniform01",
            Self::Student4 => "student4",
            Self::NormalSquared => "normal-squared",
            Self::UniformSquared => "uniform-squared",
        })
    }
}

impl std::str::FromStr for XDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "normal" => Ok(Self::Normal),
            "uniform01" => Ok(Self::Uniform01),
            "student4" => Ok(Self::Student4),
            "normal-squared" => Ok(Self::NormalSquared),
            "uniform-squared" => Ok(Self::UniformSquared),
            "student4-squared" => Err(Error::InvalidScenario(
                "the squared predictor scenarios exclude the Student distribution".into(),
            )),
            other => Err(Error::InvalidScenario(format!(
                "unknown predictor distribution '{other}'"
            ))),
        }
    }
}

/// A regression study cell: clean-model or contaminated sampling for one
/// (p, n, x-distribution, error-distribution, epsilon) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionScenario {
    /// Number of slopes, excluding the intercept.
    pub p: usize,
    pub n: usize,
    pub x_dist: XDistribution,
    pub error_dist: ErrorDistribution,
    /// Contamination fraction in `[0, 0.5)`.
    pub epsilon: f64,
    /// Outlier slope grid for contaminated runs.
    pub k_grid: Vec<f64>,
    /// Leverage coordinate of the contaminating rows.
    pub x0: f64,
    pub seed: u64,
}

impl RegressionScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        n: usize,
        x_dist: XDistribution,
        error_dist: ErrorDistribution,
        epsilon: f64,
        k_grid: Vec<f64>,
        x0: f64,
        seed: u64,
    ) -> Result<Self> {
        if p == 0 || n <= p + 1 {
            return Err(Error::InvalidScenario(format!(
                "need n > p + 1, got p = {p}, n = {n}"
            )));
        }
        let allowed = matches!(error_dist, ErrorDistribution::Normal)
            || matches!(error_dist, ErrorDistribution::StudentT { df } if df == 3.0 || df == 5.0);
        if !allowed {
            return Err(Error::InvalidScenario(format!(
                "error distribution must be normal, t3, or t5, got {error_dist}"
            )));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::InvalidScenario(format!(
                "epsilon must lie in [0, 0.5), got {epsilon}"
            )));
        }
        if k_grid.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidScenario("K grid must be finite".into()));
        }
        if epsilon > 0.0 && k_grid.is_empty() {
            return Err(Error::InvalidScenario(
                "contaminated scenarios need a nonempty K grid".into(),
            ));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidScenario("x0 must be finite".into()));
        }
        let m = (n as f64 * epsilon).floor() as usize;
        debug_assert!(m < n);
        Ok(Self {
            p,
            n,
            x_dist,
            error_dist,
            epsilon,
            k_grid,
            x0,
            seed,
        })
    }

    /// Clean-model cell with the default contamination controls.
    pub fn clean(
        p: usize,
        n: usize,
        x_dist: XDistribution,
        error_dist: ErrorDistribution,
        seed: u64,
    ) -> Result<Self> {
        Self::new(p, n, x_dist, error_dist, 0.0, Vec::new(), 5.0, seed)
    }

    /// Contaminated cell with the default grid `K = 0.5, 0.6, ..., 2.0` and
    /// leverage `x0 = 5`.
    pub fn contaminated(
        p: usize,
        n: usize,
        x_dist: XDistribution,
        error_dist: ErrorDistribution,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            p,
            n,
            x_dist,
            error_dist,
            epsilon,
            Self::default_k_grid(),
            5.0,
            seed,
        )
    }

    /// `0.5, 0.6, ..., 2.0`.
    pub fn default_k_grid() -> Vec<f64> {
        (5..=20).map(|i| i as f64 / 10.0).collect()
    }

    /// Number of contaminated rows, `floor(n * epsilon)`.
    pub fn n_contaminated(&self) -> usize {
        (self.n as f64 * self.epsilon).floor() as usize
    }

    /// Stable identifier used in result records.
    pub fn id(&self) -> String {
        format!(
            "reg;p={};n={};x={};err={};eps={}",
            self.p, self.n, self.x_dist, self.error_dist, self.epsilon
        )
    }
}

/// A multivariate study cell: `N_p(0, I)` samples, optionally with the
/// first `floor(n * epsilon)` rows replaced by the point `(K, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateScenario {
    pub p: usize,
    pub n: usize,
    pub epsilon: f64,
    pub k_grid: Vec<f64>,
    pub seed: u64,
}

impl MultivariateScenario {
    pub fn new(p: usize, n: usize, epsilon: f64, k_grid: Vec<f64>, seed: u64) -> Result<Self> {
        if p == 0 || n <= p + 1 {
            return Err(Error::InvalidScenario(format!(
                "need n > p + 1, got p = {p}, n = {n}"
            )));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::InvalidScenario(format!(
                "epsilon must lie in [0, 0.5), got {epsilon}"
            )));
        }
        if k_grid.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidScenario("K grid must be finite".into()));
        }
        if epsilon > 0.0 && k_grid.is_empty() {
            return Err(Error::InvalidScenario(
                "contaminated scenarios need a nonempty K grid".into(),
            ));
        }
        Ok(Self {
            p,
            n,
            epsilon,
            k_grid,
            seed,
        })
    }

    /// `1, 2, ..., 10`.
    pub fn default_k_grid() -> Vec<f64> {
        (1..=10).map(f64::from).collect()
    }

    pub fn n_contaminated(&self) -> usize {
        (self.n as f64 * self.epsilon).floor() as usize
    }

    pub fn id(&self) -> String {
        format!("mv;p={};n={};eps={}", self.p, self.n, self.epsilon)
    }
}

/// Draws one clean replicate: i.i.d. standardized predictors behind an
/// intercept column and `y = u` with true coefficients zero (justified by
/// regression equivariance). Deterministic given `(scenario seed,
/// replicate)`.
pub fn generate_regression_sample(sc: &RegressionScenario, replicate: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(replicate as u64);
    let mut x = DMatrix::zeros(sc.n, sc.p + 1);
    for i in 0..sc.n {
        x[(i, 0)] = 1.0;
        for j in 0..sc.p {
            x[(i, j + 1)] = sc.x_dist.sample(&mut rng);
        }
    }
    let y = DVector::from_fn(sc.n, |_, _| sc.error_dist.sample(&mut rng));
    Dataset::new(x, y)
}

/// Replaces the last `floor(n * epsilon)` rows with the leverage point
/// `x = (1, x0, 0, ..., 0)` and response `y = x0 * K`.
pub fn contaminate_regression(data: &Dataset, sc: &RegressionScenario, k: f64) -> Result<Dataset> {
    if !k.is_finite() {
        return Err(Error::InvalidScenario("K must be finite".into()));
    }
    if data.n_obs() != sc.n || data.n_cols() != sc.p + 1 {
        return Err(Error::InvalidInput(
            "dataset shape does not match the scenario".into(),
        ));
    }
    let m = sc.n_contaminated();
    if m == 0 {
        return Ok(data.clone());
    }
    let mut x = data.x().clone();
    let mut y = data.y().clone();
    for i in (sc.n - m)..sc.n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = sc.x0;
        for j in 2..=sc.p {
            x[(i, j)] = 0.0;
        }
        y[i] = sc.x0 * k;
    }
    Dataset::new(x, y)
}

/// Draws one clean multivariate replicate from `N_p(0, I)`.
pub fn generate_multivariate_sample(sc: &MultivariateScenario, replicate: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(replicate as u64);
    let mut obs = DMatrix::zeros(sc.n, sc.p);
    for i in 0..sc.n {
        for j in 0..sc.p {
            obs[(i, j)] = rng.sample(StandardNormal);
        }
    }
    obs
}

/// Replaces the first `floor(n * epsilon)` rows with `(K, 0, ..., 0)`.
pub fn contaminate_multivariate(
    obs: &DMatrix<f64>,
    sc: &MultivariateScenario,
    k: f64,
) -> Result<DMatrix<f64>> {
    if !k.is_finite() {
        return Err(Error::InvalidScenario("K must be finite".into()));
    }
    if obs.nrows() != sc.n || obs.ncols() != sc.p {
        return Err(Error::InvalidInput(
            "observation shape does not match the scenario".into(),
        ));
    }
    let mut out = obs.clone();
    for i in 0..sc.n_contaminated() {
        out[(i, 0)] = k;
        for j in 1..sc.p {
            out[(i, j)] = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scenario(x_dist: XDistribution, n: usize) -> RegressionScenario {
        RegressionScenario::clean(3, n, x_dist, ErrorDistribution::Normal, 7).unwrap()
    }

    #[test]
    fn standardization_gives_identity_second_moments() {
        for x_dist in XDistribution::ALL {
            let sc = scenario(x_dist, 6000);
            let data = generate_regression_sample(&sc, 0).unwrap();
            let x = data.x();
            let second = x.transpose() * x / sc.n as f64;
            let tol = 6.0 / (sc.n as f64).sqrt();
            for i in 0..4 {
                for j in 0..4 {
                    let target = if i == j { 1.0 } else { 0.0 };
                    let got = second[(i, j)];
                    // Heavy-tailed coordinates make their own variance
                    // estimate converge slowly: t4 fourth moments are
                    // infinite and a squared normal has kurtosis 15.
                    let slack = match x_dist {
                        XDistribution::Student4 if i == j => 5.0 * tol,
                        XDistribution::NormalSquared if i == j => 3.0 * tol,
                        _ => tol,
                    };
                    assert!(
                        (got - target).abs() < slack,
                        "{x_dist}: second moment ({i},{j}) = {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn samples_are_deterministic_per_replicate() {
        let sc = scenario(XDistribution::Uniform01, 50);
        let a = generate_regression_sample(&sc, 3).unwrap();
        let b = generate_regression_sample(&sc, 3).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        let c = generate_regression_sample(&sc, 4).unwrap();
        assert_ne!(a.y(), c.y());
    }

    #[test]
    fn squared_student_is_rejected_as_a_scenario() {
        let err = "student4-squared".parse::<XDistribution>().unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(_)));
        assert_eq!(
            "normal_squared".parse::<XDistribution>().unwrap(),
            XDistribution::NormalSquared
        );
    }

    #[test]
    fn scenario_validation() {
        assert!(RegressionScenario::clean(
            3,
            4,
            XDistribution::Normal,
            ErrorDistribution::Normal,
            0
        )
        .is_err());
        assert!(RegressionScenario::contaminated(
            3,
            50,
            XDistribution::Normal,
            ErrorDistribution::Normal,
            0.6,
            0
        )
        .is_err());
        assert!(RegressionScenario::clean(
            3,
            50,
            XDistribution::Normal,
            ErrorDistribution::Uniform,
            0
        )
        .is_err());
        assert!(RegressionScenario::new(
            3,
            50,
            XDistribution::Normal,
            ErrorDistribution::Normal,
            0.2,
            vec![],
            5.0,
            0
        )
        .is_err());
    }

    #[test]
    fn contamination_replaces_the_last_rows_exactly() {
        let sc = RegressionScenario::contaminated(
            5,
            25,
            XDistribution::Normal,
            ErrorDistribution::Normal,
            0.1,
            1,
        )
        .unwrap();
        assert_eq!(sc.n_contaminated(), 2);
        let clean = generate_regression_sample(&sc, 0).unwrap();
        let bad = contaminate_regression(&clean, &sc, 1.3).unwrap();
        for i in 23..25 {
            assert_eq!(bad.x()[(i, 0)], 1.0);
            assert_eq!(bad.x()[(i, 1)], 5.0);
            for j in 2..6 {
                assert_eq!(bad.x()[(i, j)], 0.0);
            }
            assert_relative_eq!(bad.y()[i] / 5.0, 1.3, max_relative = 1e-15);
        }
        // Rows before the replaced block are untouched.
        assert_eq!(bad.x().row(0), clean.x().row(0));
        assert_eq!(bad.y()[22], clean.y()[22]);
    }

    #[test]
    fn zero_epsilon_contamination_is_identity() {
        let sc = scenario(XDistribution::Normal, 30);
        let clean = generate_regression_sample(&sc, 1).unwrap();
        let same = contaminate_regression(&clean, &sc, 1.0).unwrap();
        assert_eq!(clean.x(), same.x());
        assert_eq!(clean.y(), same.y());
    }

    #[test]
    fn multivariate_contamination_replaces_the_first_rows() {
        let sc = MultivariateScenario::new(
            4,
            20,
            0.2,
            MultivariateScenario::default_k_grid(),
            9,
        )
        .unwrap();
        let obs = generate_multivariate_sample(&sc, 0);
        let bad = contaminate_multivariate(&obs, &sc, 7.0).unwrap();
        for i in 0..4 {
            assert_eq!(bad[(i, 0)], 7.0);
            for j in 1..4 {
                assert_eq!(bad[(i, j)], 0.0);
            }
        }
        assert_eq!(bad.row(4), obs.row(4));
        let again = generate_multivariate_sample(&sc, 0);
        assert_eq!(obs, again);
    }
}
