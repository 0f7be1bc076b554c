//! Large-sample behavior of the constrained blend.
//!
//! In the limit, suitably rescaled LS and robust coefficient errors are
//! jointly Gaussian with a 2x2 covariance `V` per coordinate. Sampling that
//! limit and applying the blend weight rule coordinate-free gives the
//! limiting distribution of the blended estimator, its efficiency relative
//! to either ingredient, and the probability that the blend collapses to
//! plain LS.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::kernels::{
    m_scale, psi_bisquare, psi_deriv_bisquare, rho_bisquare, KernelConfig,
};
use crate::numeric::{bisect, integrate, quantile_sorted, spd_cholesky};
use crate::{Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Error distribution for the regression model, symmetric about zero.
///
/// The uniform variant is centered and scaled to unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDistribution {
    Normal,
    StudentT { df: f64 },
    Uniform,
}

impl ErrorDistribution {
    pub const STUDENT3: Self = Self::StudentT { df: 3.0 };
    pub const STUDENT5: Self = Self::StudentT { df: 5.0 };

    pub fn student(df: f64) -> Result<Self> {
        if !(df > 0.0 && df.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom must be positive, got {df}"
            )));
        }
        Ok(Self::StudentT { df })
    }

    /// Variance; errors when the second moment is infinite.
    pub fn variance(&self) -> Result<f64> {
        match self {
            Self::Normal | Self::Uniform => Ok(1.0),
            Self::StudentT { df } => {
                if *df > 2.0 {
                    Ok(df / (df - 2.0))
                } else {
                    Err(Error::InvalidParameter(format!(
                        "t distribution with {df} degrees of freedom has infinite variance"
                    )))
                }
            }
        }
    }

    /// Half-width of the support when bounded.
    fn support_halfwidth(&self) -> Option<f64> {
        match self {
            Self::Uniform => Some(SQRT_3),
            _ => None,
        }
    }

    fn density_fns(&self) -> Result<(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>)> {
        match self {
            Self::Normal => {
                let d = Normal::new(0.0, 1.0).expect("unit normal is valid");
                Ok((
                    Box::new(move |u| d.pdf(u)),
                    Box::new(move |u| d.cdf(u)),
                ))
            }
            Self::StudentT { df } => {
                let d = StudentsT::new(0.0, 1.0, *df)
                    .map_err(|e| Error::InvalidParameter(format!("bad t distribution: {e}")))?;
                Ok((
                    Box::new(move |u| d.pdf(u)),
                    Box::new(move |u| d.cdf(u)),
                ))
            }
            Self::Uniform => Ok((
                Box::new(|u: f64| {
                    if u.abs() <= SQRT_3 {
                        0.5 / SQRT_3
                    } else {
                        0.0
                    }
                }),
                Box::new(|u: f64| ((u + SQRT_3) / (2.0 * SQRT_3)).clamp(0.0, 1.0)),
            )),
        }
    }

    /// Draws one sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal => rng.sample(StandardNormal),
            Self::StudentT { df } => {
                let d = rand_distr::StudentT::new(*df).expect("validated degrees of freedom");
                rng.sample(d)
            }
            Self::Uniform => rng.gen_range(-SQRT_3..SQRT_3),
        }
    }
}

impl std::fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Normal => write!(f, "normal"),
            Self::StudentT { df } => write!(f, "t{df}"),
            Self::Uniform => write!(f, "uniform"),
        }
    }
}

impl std::str::FromStr for ErrorDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Self::Normal),
            "uniform" => Ok(Self::Uniform),
            t if t.starts_with('t') => {
                let df: f64 = t[1..]
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("unknown distribution '{s}'")))?;
                Self::student(df)
            }
            _ => Err(Error::InvalidParameter(format!("unknown distribution '{s}'"))),
        }
    }
}

/// Switches between the documented variants of the limit computation.
///
/// `v22_squared_denominator` divides the robust variance term by the
/// squared mean kernel derivative (the standard sandwich form, default);
/// turning it off reproduces the single-denominator variant for
/// comparison, which is not positive semidefinite for every distribution.
/// `sqrt_blend_weight` applies a square root to the blend weight ratio
/// instead of using the ratio directly (the default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticOptions {
    pub v22_squared_denominator: bool,
    pub sqrt_blend_weight: bool,
}

impl Default for AsymptoticOptions {
    fn default() -> Self {
        Self {
            v22_squared_denominator: true,
            sqrt_blend_weight: false,
        }
    }
}

/// Per-coordinate limiting covariance of the (LS, robust) error pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticV {
    v11: f64,
    v12: f64,
    v22: f64,
}

impl AsymptoticV {
    /// Validates positive semidefiniteness of `[[v11, v12], [v12, v22]]`.
    pub fn new(v11: f64, v12: f64, v22: f64) -> Result<Self> {
        if ![v11, v12, v22].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("V entries must be finite".into()));
        }
        let det = v11 * v22 - v12 * v12;
        let scale = (v11 * v22).abs().max(1.0);
        if v11 < 0.0 || v22 < 0.0 || det < -1e-12 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "V = [[{v11}, {v12}], [{v12}, {v22}]] is not positive semidefinite"
            )));
        }
        Ok(Self { v11, v12, v22 })
    }

    pub fn v11(&self) -> f64 {
        self.v11
    }

    pub fn v12(&self) -> f64 {
        self.v12
    }

    pub fn v22(&self) -> f64 {
        self.v22
    }

    /// Lower Cholesky factor entries `(a11, a21, a22)`, tolerant of the
    /// semidefinite boundary.
    fn chol(&self) -> (f64, f64, f64) {
        let a11 = self.v11.max(0.0).sqrt();
        let a21 = if a11 > 0.0 { self.v12 / a11 } else { 0.0 };
        let a22 = (self.v22 - a21 * a21).max(0.0).sqrt();
        (a11, a21, a22)
    }
}

/// Limiting M-scale of the error distribution: the `sigma` solving
/// `E rho(u / sigma; c0) = 1/2`.
pub fn limit_scale(dist: ErrorDistribution, cfg: &KernelConfig) -> Result<f64> {
    let sd = dist.variance()?.sqrt();
    let (pdf, cdf) = dist.density_fns()?;
    let expect_rho = |sigma: f64| {
        let cutoff = cfg.c0 * sigma;
        let upper = dist.support_halfwidth().map_or(cutoff, |hw| cutoff.min(hw));
        let tail = 2.0 * (1.0 - cdf(cutoff));
        let body = 2.0 * integrate(&|u: f64| rho_bisquare(u / sigma, cfg.c0) * pdf(u), 0.0, upper, 1e-12);
        tail + body
    };
    bisect(|s| expect_rho(s) - 0.5, 1e-4 * sd, 1e4 * sd, 1e-12)
}

/// Kernel-moment expectations of `dist` at scale `sigma0` and tuning `c`:
/// `(E[u psi(u/sigma0)], E[psi'(u/sigma0)], E[psi(u/sigma0)^2])`.
fn kernel_moments(dist: ErrorDistribution, sigma0: f64, c: f64) -> Result<(f64, f64, f64)> {
    let (pdf, _) = dist.density_fns()?;
    let cutoff = c * sigma0;
    let upper = dist.support_halfwidth().map_or(cutoff, |hw| cutoff.min(hw));
    let e_upsi = 2.0 * integrate(&|u: f64| u * psi_bisquare(u / sigma0, c) * pdf(u), 0.0, upper, 1e-12);
    let e_psi_deriv =
        2.0 * integrate(&|u: f64| psi_deriv_bisquare(u / sigma0, c) * pdf(u), 0.0, upper, 1e-12);
    let e_psi_sq = 2.0 * integrate(
        &|u: f64| {
            let psi = psi_bisquare(u / sigma0, c);
            psi * psi * pdf(u)
        },
        0.0,
        upper,
        1e-12,
    );
    Ok((e_upsi, e_psi_deriv, e_psi_sq))
}

fn assemble_v(
    variance: f64,
    sigma0: f64,
    moments: (f64, f64, f64),
    opts: &AsymptoticOptions,
) -> Result<AsymptoticV> {
    let (e_upsi, e_psi_deriv, e_psi_sq) = moments;
    if !(e_psi_deriv > 0.0) {
        return Err(Error::Numerical(
            "mean kernel derivative is not positive".into(),
        ));
    }
    let v12 = sigma0 * e_upsi / e_psi_deriv;
    let v22 = if opts.v22_squared_denominator {
        sigma0 * sigma0 * e_psi_sq / (e_psi_deriv * e_psi_deriv)
    } else {
        sigma0 * sigma0 * e_psi_sq / e_psi_deriv
    };
    AsymptoticV::new(variance, v12, v22)
}

/// Limiting covariance of the (LS, robust) coordinate pair for a named
/// error distribution, by quadrature.
///
/// `V11` is the error variance; `V12 = sigma0 E[u psi(u/sigma0)] / E[psi']`;
/// `V22 = sigma0^2 E[psi^2] / E[psi']^2` (denominator squaring controlled
/// by [`AsymptoticOptions`]).
///
/// # Errors
///
/// Distributions with infinite variance are rejected; so is a variant
/// combination whose `V` is not positive semidefinite.
pub fn v_matrix(dist: ErrorDistribution, cfg: &KernelConfig) -> Result<AsymptoticV> {
    v_matrix_with(dist, cfg, &AsymptoticOptions::default())
}

pub fn v_matrix_with(
    dist: ErrorDistribution,
    cfg: &KernelConfig,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticV> {
    let variance = dist.variance()?;
    let sigma0 = limit_scale(dist, cfg)?;
    let moments = kernel_moments(dist, sigma0, cfg.c1)?;
    assemble_v(variance, sigma0, moments, opts)
}

/// Same limit computed from an empirical residual sample instead of a named
/// distribution: expectations become sample averages and `sigma0` the
/// sample M-scale.
pub fn v_matrix_from_residuals(residuals: &[f64], cfg: &KernelConfig) -> Result<AsymptoticV> {
    v_matrix_from_residuals_with(residuals, cfg, &AsymptoticOptions::default())
}

pub fn v_matrix_from_residuals_with(
    residuals: &[f64],
    cfg: &KernelConfig,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticV> {
    let scale = m_scale(residuals, cfg.c0, 0.5)?;
    if scale.degenerate || scale.sigma <= 0.0 {
        return Err(Error::DegenerateData(
            "residual sample has a degenerate M-scale".into(),
        ));
    }
    let sigma0 = scale.sigma;
    let n = residuals.len() as f64;
    let mut variance = 0.0;
    let mut e_upsi = 0.0;
    let mut e_psi_deriv = 0.0;
    let mut e_psi_sq = 0.0;
    for &u in residuals {
        let psi = psi_bisquare(u / sigma0, cfg.c1);
        variance += u * u;
        e_upsi += u * psi;
        e_psi_deriv += psi_deriv_bisquare(u / sigma0, cfg.c1);
        e_psi_sq += psi * psi;
    }
    assemble_v(
        variance / n,
        sigma0,
        (e_upsi / n, e_psi_deriv / n, e_psi_sq / n),
        opts,
    )
}

/// Monte Carlo sample of the blended limit: `z3` draws with their blend
/// weights and the accumulated squared norms of both ingredients.
#[derive(Debug, Clone)]
pub struct GvSample {
    draws: Vec<DVector<f64>>,
    p: usize,
    t_values: Vec<f64>,
    sum_sq_z1: f64,
    sum_sq_z2: f64,
    sum_sq_z3: f64,
}

impl GvSample {
    /// The `z3` draws.
    pub fn draws(&self) -> &[DVector<f64>] {
        &self.draws
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Blend weight per draw, in `[0, 1]`; `1` means the draw equals `z1`.
    pub fn t_values(&self) -> &[f64] {
        &self.t_values
    }
}

const SAMPLE_CHUNK: usize = 1 << 14;

/// Samples the limiting distribution of the blended estimator.
///
/// Each of the `p` coordinates of `(z1, z2)` is an i.i.d. bivariate normal
/// pair with covariance `v`. The blend weight is
/// `t = min(1, 0.3 p / ||z2 - z1||^2)` (square-root variant behind
/// [`AsymptoticOptions`]), with `t = 1` when `z1 = z2` exactly, and
/// `z3 = t z1 + (1 - t) z2`. Deterministic given the seed; draws are
/// generated on independent counter-based streams so the result does not
/// depend on thread scheduling.
pub fn sample_z3(v: &AsymptoticV, p: usize, n_draws: usize, rng_seed: u64) -> Result<GvSample> {
    sample_z3_with(v, p, n_draws, rng_seed, &AsymptoticOptions::default())
}

pub fn sample_z3_with(
    v: &AsymptoticV,
    p: usize,
    n_draws: usize,
    rng_seed: u64,
    opts: &AsymptoticOptions,
) -> Result<GvSample> {
    if p == 0 || n_draws == 0 {
        return Err(Error::InvalidParameter(
            "dimension and draw count must be positive".into(),
        ));
    }
    let (a11, a21, a22) = v.chol();
    let threshold = 0.3 * p as f64;
    let sqrt_form = opts.sqrt_blend_weight;
    let n_chunks = n_draws.div_ceil(SAMPLE_CHUNK);

    let chunks: Vec<(Vec<DVector<f64>>, Vec<f64>, f64, f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(chunk as u64 + 1);
            let count = SAMPLE_CHUNK.min(n_draws - chunk * SAMPLE_CHUNK);
            let mut draws = Vec::with_capacity(count);
            let mut ts = Vec::with_capacity(count);
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            let mut z1 = DVector::zeros(p);
            let mut z2 = DVector::zeros(p);
            for _ in 0..count {
                let mut q = 0.0;
                for j in 0..p {
                    let g1: f64 = rng.sample(StandardNormal);
                    let g2: f64 = rng.sample(StandardNormal);
                    let a = a11 * g1;
                    let b = a21 * g1 + a22 * g2;
                    z1[j] = a;
                    z2[j] = b;
                    q += (b - a) * (b - a);
                }
                let t = if q == 0.0 {
                    1.0
                } else {
                    let ratio = threshold / q;
                    let raw = if sqrt_form { ratio.sqrt() } else { ratio };
                    raw.min(1.0)
                };
                let z3 = if t == 1.0 {
                    z1.clone()
                } else {
                    &z1 * t + &z2 * (1.0 - t)
                };
                s1 += z1.norm_squared();
                s2 += z2.norm_squared();
                s3 += z3.norm_squared();
                draws.push(z3);
                ts.push(t);
            }
            (draws, ts, s1, s2, s3)
        })
        .collect();

    let mut draws = Vec::with_capacity(n_draws);
    let mut t_values = Vec::with_capacity(n_draws);
    let (mut sum_sq_z1, mut sum_sq_z2, mut sum_sq_z3) = (0.0, 0.0, 0.0);
    for (d, t, s1, s2, s3) in chunks {
        draws.extend(d);
        t_values.extend(t);
        sum_sq_z1 += s1;
        sum_sq_z2 += s2;
        sum_sq_z3 += s3;
    }
    Ok(GvSample {
        draws,
        p,
        t_values,
        sum_sq_z1,
        sum_sq_z2,
        sum_sq_z3,
    })
}

/// Empirical quantiles (linear interpolation) of the first coordinate of
/// the blended draws; by rotational symmetry of the construction these are
/// the quantiles of any unit-direction projection.
pub fn gv_quantiles(sample: &GvSample, probs: &[f64]) -> Result<Vec<f64>> {
    for &p in probs {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantile probability {p} outside (0, 1)"
            )));
        }
    }
    let mut first: Vec<f64> = sample.draws.iter().map(|z| z[0]).collect();
    first.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&first, p)).collect()
}

/// Efficiency of the blend against each ingredient: mean squared norm of
/// `z1` (LS) and of `z2` (robust) over the mean squared norm of `z3`.
pub fn asymptotic_efficiencies(sample: &GvSample) -> (f64, f64) {
    (
        sample.sum_sq_z1 / sample.sum_sq_z3,
        sample.sum_sq_z2 / sample.sum_sq_z3,
    )
}

/// Fraction of draws where the blend equals LS exactly (`t = 1`).
pub fn prob_equal_ls(sample: &GvSample) -> f64 {
    let ones = sample.t_values.iter().filter(|&&t| t == 1.0).count();
    ones as f64 / sample.t_values.len().max(1) as f64
}

/// Quantiles of a linear combination `b' z` under a design covariance `c`:
/// the first-coordinate quantiles scaled by `sqrt(b' C b)`.
pub fn linear_combination_quantiles(
    sample: &GvSample,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    probs: &[f64],
) -> Result<Vec<f64>> {
    if b.len() != sample.p || c.nrows() != sample.p {
        return Err(Error::InvalidInput(
            "direction and covariance must match the sample dimension".into(),
        ));
    }
    spd_cholesky(c, "design covariance")?;
    let scale = b.dot(&(c * b)).max(0.0).sqrt();
    Ok(gv_quantiles(sample, probs)?
        .into_iter()
        .map(|q| q * scale)
        .collect())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`.
pub fn two_sample_ks(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("KS needs nonempty samples".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let xv = xs[i];
        let yv = ys[j];
        let v = xv.min(yv);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d.max(1.0 - i as f64 / n).max(1.0 - j as f64 / m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> KernelConfig {
        KernelConfig::default()
    }

    // Reference values below were frozen from an independent quadrature /
    // Monte Carlo implementation (2e6 draws for sampled quantities).

    #[test]
    fn limit_scale_matches_quadrature_references() {
        assert_relative_eq!(
            limit_scale(ErrorDistribution::Normal, &cfg()).unwrap(),
            1.000417,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            limit_scale(ErrorDistribution::STUDENT3, &cfg()).unwrap(),
            1.157759,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            limit_scale(ErrorDistribution::STUDENT5, &cfg()).unwrap(),
            1.090908,
            max_relative = 1e-4
        );
    }

    #[test]
    fn v_matrix_matches_quadrature_references() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        assert_eq!(v.v11(), 1.0);
        assert_relative_eq!(v.v12(), 1.0, max_relative = 1e-4);
        assert_relative_eq!(v.v22(), 1.176192, max_relative = 1e-4);

        let v = v_matrix(ErrorDistribution::STUDENT3, &cfg()).unwrap();
        assert_eq!(v.v11(), 3.0);
        assert_relative_eq!(v.v12(), 1.313810, max_relative = 1e-4);
        assert_relative_eq!(v.v22(), 1.571468, max_relative = 1e-4);

        let v = v_matrix(ErrorDistribution::STUDENT5, &cfg()).unwrap();
        assert_relative_eq!(v.v11(), 5.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(v.v12(), 1.191574, max_relative = 1e-4);
        assert_relative_eq!(v.v22(), 1.416107, max_relative = 1e-4);
    }

    #[test]
    fn infinite_variance_is_rejected() {
        let heavy = ErrorDistribution::student(2.0).unwrap();
        assert!(matches!(
            v_matrix(heavy, &cfg()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(ErrorDistribution::student(-1.0).is_err());
    }

    #[test]
    fn unsquared_denominator_variant() {
        let opts = AsymptoticOptions {
            v22_squared_denominator: false,
            sqrt_blend_weight: false,
        };
        // The single-denominator variant shrinks v22 by the factor
        // E psi' < 1, which breaks the Cauchy-Schwarz bound that keeps the
        // squared form a covariance: the constructor rejects it for both
        // reference error laws.
        for dist in [ErrorDistribution::Normal, ErrorDistribution::STUDENT3] {
            assert!(matches!(
                v_matrix_with(dist, &cfg(), &opts),
                Err(Error::NotPositiveDefinite(_))
            ));
        }
        // Verified on the raw moments: the variant entry really is smaller.
        let sigma0 = limit_scale(ErrorDistribution::STUDENT3, &cfg()).unwrap();
        let (_, e_dpsi, e_psi_sq) =
            kernel_moments(ErrorDistribution::STUDENT3, sigma0, cfg().c1).unwrap();
        assert!(e_dpsi > 0.0 && e_dpsi < 1.0);
        let squared = v_matrix(ErrorDistribution::STUDENT3, &cfg()).unwrap();
        let v22_single = sigma0 * sigma0 * e_psi_sq / e_dpsi;
        assert!(v22_single < squared.v22());
        assert_relative_eq!(v22_single, squared.v22() * e_dpsi, max_relative = 1e-12);
    }

    #[test]
    fn empirical_v_agrees_with_quadrature_and_is_sign_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| ErrorDistribution::Normal.sample(&mut rng))
            .collect();
        let v = v_matrix_from_residuals(&draws, &cfg()).unwrap();
        assert_relative_eq!(v.v11(), 1.0, max_relative = 0.02);
        assert_relative_eq!(v.v12(), 1.0, max_relative = 0.02);
        assert_relative_eq!(v.v22(), 1.176192, max_relative = 0.03);

        let flipped: Vec<f64> = draws.iter().map(|u| -u).collect();
        let w = v_matrix_from_residuals(&flipped, &cfg()).unwrap();
        assert_relative_eq!(v.v11(), w.v11(), max_relative = 1e-12);
        assert_relative_eq!(v.v12(), w.v12(), max_relative = 1e-12);
        assert_relative_eq!(v.v22(), w.v22(), max_relative = 1e-12);
    }

    #[test]
    fn sampler_is_deterministic_and_bounded() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        let a = sample_z3(&v, 3, 40_000, 5).unwrap();
        let b = sample_z3(&v, 3, 40_000, 5).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert_eq!(a.t_values(), b.t_values());
        let c = sample_z3(&v, 3, 40_000, 6).unwrap();
        assert_ne!(a.draws()[0], c.draws()[0]);
        assert!(a.t_values().iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn perfectly_correlated_ingredients_collapse_to_ls() {
        // v12 = sqrt(v11 v22) with equal variances makes z1 = z2 exactly,
        // so every t is 1 and the draws are plain LS coordinates.
        let v = AsymptoticV::new(1.0, 1.0, 1.0).unwrap();
        let s = sample_z3(&v, 2, 50_000, 9).unwrap();
        assert!(s.t_values().iter().all(|&t| t == 1.0));
        assert_eq!(prob_equal_ls(&s), 1.0);
        let mean: f64 =
            s.draws().iter().map(|z| z[0]).sum::<f64>() / s.draws().len() as f64;
        let var: f64 =
            s.draws().iter().map(|z| z[0] * z[0]).sum::<f64>() / s.draws().len() as f64;
        assert!(mean.abs() < 0.02);
        assert_relative_eq!(var, 1.0, max_relative = 0.03);

        // Proportional but unequal ingredients: no division guards trip.
        let v = AsymptoticV::new(1.0, 2.0_f64.sqrt(), 2.0).unwrap();
        let s = sample_z3(&v, 2, 10_000, 9).unwrap();
        assert!(s.t_values().iter().all(|t| t.is_finite()));
        assert!(s.draws().iter().all(|z| z.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn psd_validation_rejects_bad_v() {
        assert!(AsymptoticV::new(1.0, 2.0, 1.0).is_err());
        assert!(AsymptoticV::new(-1.0, 0.0, 1.0).is_err());
        assert!(AsymptoticV::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn quantiles_are_monotone_and_centered() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        let s = sample_z3(&v, 5, 50_000, 11).unwrap();
        let qs = gv_quantiles(&s, &[0.1, 0.25, 0.5, 0.75, 0.9]).unwrap();
        for w in qs.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(qs[2].abs() < 0.05, "median {} should be near 0", qs[2]);
        assert_relative_eq!(qs[1], -qs[3], epsilon = 0.05);
        assert!(gv_quantiles(&s, &[0.0]).is_err());
    }

    #[test]
    fn normal_errors_match_frozen_table_values() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        let s = sample_z3(&v, 5, 200_000, 2024).unwrap();
        let (eff_ls, eff_mm) = asymptotic_efficiencies(&s);
        // Frozen oracle: 0.9960 / 1.1718; LS is the MLE here so its
        // efficiency cannot exceed 1 beyond Monte Carlo error.
        assert_relative_eq!(eff_ls, 0.996, epsilon = 0.008);
        assert!(eff_ls <= 1.005);
        assert_relative_eq!(eff_mm, 1.172, epsilon = 0.015);
        let p = prob_equal_ls(&s);
        assert_relative_eq!(p, 0.8699, epsilon = 0.008);
    }

    #[test]
    fn heavy_and_bounded_tails_match_frozen_values() {
        let v3 = v_matrix(ErrorDistribution::STUDENT3, &cfg()).unwrap();
        let s = sample_z3(&v3, 20, 60_000, 31).unwrap();
        assert!(prob_equal_ls(&s) < 0.003);

        let s = sample_z3(&v3, 10, 200_000, 32).unwrap();
        let (eff_ls, eff_mm) = asymptotic_efficiencies(&s);
        assert_relative_eq!(eff_ls, 1.9363, epsilon = 0.06);
        assert_relative_eq!(eff_mm, 1.0142, epsilon = 0.03);

        let v5 = v_matrix(ErrorDistribution::STUDENT5, &cfg()).unwrap();
        let s = sample_z3(&v5, 10, 200_000, 33).unwrap();
        assert_relative_eq!(prob_equal_ls(&s), 0.0666, epsilon = 0.006);

        let vu = v_matrix(ErrorDistribution::Uniform, &cfg()).unwrap();
        let s = sample_z3(&vu, 5, 100_000, 34).unwrap();
        assert!(prob_equal_ls(&s) > 0.995);
        let (eff_ls, _) = asymptotic_efficiencies(&s);
        assert_relative_eq!(eff_ls, 1.0, epsilon = 0.005);
    }

    #[test]
    fn sqrt_weight_variant_shifts_the_heavy_tail_efficiency() {
        let opts = AsymptoticOptions {
            v22_squared_denominator: true,
            sqrt_blend_weight: true,
        };
        let v3 = v_matrix(ErrorDistribution::STUDENT3, &cfg()).unwrap();
        let s = sample_z3_with(&v3, 10, 200_000, 35, &opts).unwrap();
        let (eff_ls, eff_mm) = asymptotic_efficiencies(&s);
        assert_relative_eq!(eff_ls, 1.7925, epsilon = 0.06);
        assert_relative_eq!(eff_mm, 0.9389, epsilon = 0.03);
        // The t = 1 event is the same under both weight forms.
        let plain = sample_z3(&v3, 10, 200_000, 35).unwrap();
        assert_eq!(prob_equal_ls(&s), prob_equal_ls(&plain));
    }

    #[test]
    fn linear_combinations_scale_by_the_design_norm() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        let s = sample_z3(&v, 3, 20_000, 41).unwrap();
        let probs = [0.25, 0.5, 0.75];
        let base = gv_quantiles(&s, &probs).unwrap();

        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let eye = DMatrix::identity(3, 3);
        let same = linear_combination_quantiles(&s, &e1, &eye, &probs).unwrap();
        assert_eq!(base, same);

        let doubled = linear_combination_quantiles(&s, &(&e1 * 2.0), &eye, &probs).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12);
        }

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0]));
        let scaled = linear_combination_quantiles(&s, &e1, &diag, &probs).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12);
        }

        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(linear_combination_quantiles(&s, &e1, &bad, &probs).is_err());
    }

    #[test]
    fn projections_are_direction_invariant() {
        let v = v_matrix(ErrorDistribution::Normal, &cfg()).unwrap();
        let s = sample_z3(&v, 3, 20_000, 43).unwrap();
        let first: Vec<f64> = s.draws().iter().map(|z| z[0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2 {
            let mut d = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            d /= d.norm();
            let proj: Vec<f64> = s.draws().iter().map(|z| z.dot(&d)).collect();
            let ks = two_sample_ks(&first, &proj).unwrap();
            let critical = 1.628 * (2.0 / 20_000.0_f64).sqrt();
            assert!(ks < critical, "ks {ks} exceeded the 1% critical value");
        }
    }

    #[test]
    fn ks_statistic_edge_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(two_sample_ks(&a, &a).unwrap(), 0.0);
        let b = [10.0, 11.0];
        assert_eq!(two_sample_ks(&a, &b).unwrap(), 1.0);
        assert!(two_sample_ks(&a, &[]).is_err());
    }

    #[test]
    fn distribution_tags_round_trip() {
        for (s, d) in [
            ("normal", ErrorDistribution::Normal),
            ("t3", ErrorDistribution::STUDENT3),
            ("t5", ErrorDistribution::STUDENT5),
            ("uniform", ErrorDistribution::Uniform),
        ] {
            assert_eq!(s.parse::<ErrorDistribution>().unwrap(), d);
            assert_eq!(d.to_string(), s);
        }
        assert!("cauchy".parse::<ErrorDistribution>().is_err());
    }
}
