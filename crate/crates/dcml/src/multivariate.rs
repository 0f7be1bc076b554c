//! Multivariate location and scatter: the classical mean/covariance MLE and
//! the high-breakdown bisquare S-estimator with its consistency rescaling.
//!
//! The S-estimator minimizes the robust M-scale of Mahalanobis distances
//! over determinant-one scatter shapes; the median-chi-square rescale then
//! restores the size of the scatter so it estimates the covariance itself
//! under normality.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::kernels::{m_scale, weight_bisquare, KernelConfig};
use crate::numeric::median;
use crate::{Error, Result};

/// A location vector paired with a symmetric positive-definite scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationScatter {
    mu: DVector<f64>,
    sigma_mat: DMatrix<f64>,
}

impl LocationScatter {
    /// Validates dimensions, symmetry (to relative `1e-12`), finiteness, and
    /// positive definiteness.
    pub fn new(mu: DVector<f64>, sigma_mat: DMatrix<f64>) -> Result<Self> {
        if mu.is_empty() || sigma_mat.nrows() != mu.len() || !sigma_mat.is_square() {
            return Err(Error::InvalidInput(
                "location and scatter dimensions disagree".into(),
            ));
        }
        if mu.iter().any(|v| !v.is_finite()) || sigma_mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "location and scatter must be finite".into(),
            ));
        }
        let asym = (&sigma_mat - sigma_mat.transpose()).amax();
        if asym > 1e-12 * sigma_mat.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite(
                "scatter matrix is not symmetric".into(),
            ));
        }
        if sigma_mat.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "scatter matrix has a nonpositive eigenvalue".into(),
            ));
        }
        Ok(Self { mu, sigma_mat })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma_mat(&self) -> &DMatrix<f64> {
        &self.sigma_mat
    }

    /// Dimension `p`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Classical MLE: column means and the covariance with denominator `n`.
///
/// # Errors
///
/// Needs `n > p` rows; a singular covariance (e.g. identical rows) is a
/// degenerate-data error.
pub fn sample_mean_cov(obs: &DMatrix<f64>) -> Result<LocationScatter> {
    let (n, p) = (obs.nrows(), obs.ncols());
    if p == 0 || n <= p {
        return Err(Error::InvalidInput(format!(
            "need more than {p} observations in dimension {p}, got {n}"
        )));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    let mu = mean_vector(obs);
    let cov = scatter_about(obs, &mu, None);
    LocationScatter::new(mu, cov).map_err(|_| {
        Error::DegenerateData("sample covariance is singular".into())
    })
}

fn mean_vector(obs: &DMatrix<f64>) -> DVector<f64> {
    let n = obs.nrows() as f64;
    DVector::from_iterator(obs.ncols(), obs.column_iter().map(|c| c.sum() / n))
}

/// Covariance of `obs` about `mu`, optionally weighted; denominator is the
/// total weight (plain `n` when unweighted).
fn scatter_about(obs: &DMatrix<f64>, mu: &DVector<f64>, weights: Option<&[f64]>) -> DMatrix<f64> {
    let (n, p) = (obs.nrows(), obs.ncols());
    let mut centered = obs.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let total: f64;
    let weighted = match weights {
        Some(w) => {
            total = w.iter().sum();
            let mut scaled = centered.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= w[i];
            }
            centered.transpose() * scaled
        }
        None => {
            total = n as f64;
            centered.transpose() * &centered
        }
    };
    let mut cov = weighted / total;
    let cov_t = cov.transpose();
    cov = (cov + cov_t) * 0.5;
    debug_assert_eq!(cov.nrows(), p);
    cov
}

/// Squared Mahalanobis distance `(x - mu)' Sigma^{-1} (x - mu)`, computed
/// through the Cholesky factor rather than an explicit inverse.
pub fn mahalanobis_sq(x: &DVector<f64>, ls: &LocationScatter) -> Result<f64> {
    if x.len() != ls.dim() {
        return Err(Error::InvalidInput(
            "point dimension does not match the location".into(),
        ));
    }
    let chol = ls
        .sigma_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("scatter lost definiteness".into()))?;
    let diff = x - &ls.mu;
    let solved = chol.solve(&diff);
    Ok(diff.dot(&solved))
}

/// Squared Mahalanobis distances of every row of `obs`.
fn mahalanobis_all(
    obs: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Option<Vec<f64>> {
    let chol = sigma.clone().cholesky()?;
    let mut centered = obs.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let solved = chol.solve(&centered.transpose());
    Some(
        (0..obs.nrows())
            .map(|i| centered.row(i).dot(&solved.column(i).transpose()))
            .collect(),
    )
}

/// Median of the chi-square distribution with `p` degrees of freedom, to
/// relative accuracy well below `1e-10` (Newton refinement of a
/// Wilson-Hilferty start against the regularized gamma CDF).
pub fn chi_square_median(p: usize) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidParameter(
            "degrees of freedom must be positive".into(),
        ));
    }
    let k = p as f64;
    let dist = ChiSquared::new(k)
        .map_err(|e| Error::InvalidParameter(format!("chi-square setup failed: {e}")))?;
    let mut x = k * (1.0 - 2.0 / (9.0 * k)).powi(3);
    if !(x > 0.0) {
        x = k;
    }
    for _ in 0..100 {
        let f = dist.cdf(x) - 0.5;
        let slope = dist.pdf(x);
        if slope <= 0.0 {
            break;
        }
        let step = f / slope;
        x -= step;
        if step.abs() <= 1e-14 * x.abs() {
            break;
        }
    }
    Ok(x)
}

/// High-breakdown S-estimator of location and scatter.
///
/// Minimizes the M-scale of Mahalanobis distances over determinant-one
/// scatter shapes: draws `(p+1)`-point subsets, turns each into a candidate
/// (mean, det-normalized covariance), scores candidates by the M-scale of
/// the distances with target `0.5 (1 - p/n)`, and refines the five best by
/// weighted-mean/weighted-covariance concentration steps that only ever
/// decrease the scale. Ties break toward the earlier subsample, making the
/// result deterministic given `seed`.
///
/// Returns the location with the det-1 scatter shape and the minimized
/// scale. The scale is zero only in the exact-fit case where at least
/// `1 - gamma` of the points coincide with the candidate location.
///
/// # Errors
///
/// Needs `n > p + 1`; fails with a degenerate-data error when every
/// subsample covariance is singular.
pub fn s_multivariate(
    obs: &DMatrix<f64>,
    cfg: &KernelConfig,
    n_subsamples: usize,
    seed: u64,
) -> Result<(LocationScatter, f64)> {
    let (n, p) = (obs.nrows(), obs.ncols());
    if p == 0 || n <= p + 1 {
        return Err(Error::InvalidInput(format!(
            "S-estimator needs more than {} observations in dimension {p}, got {n}",
            p + 1
        )));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    if n_subsamples == 0 {
        return Err(Error::InvalidParameter("n_subsamples must be > 0".into()));
    }
    let gamma = 0.5 * (1.0 - p as f64 / n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<(f64, usize, DVector<f64>, DMatrix<f64>)> = Vec::new();
    let mut subset = DMatrix::zeros(p + 1, p);
    for j in 0..n_subsamples {
        let idx = rand::seq::index::sample(&mut rng, n, p + 1);
        for (k, i) in idx.iter().enumerate() {
            subset.row_mut(k).copy_from(&obs.row(i));
        }
        let mu = mean_vector(&subset);
        let cov = scatter_about(&subset, &mu, None);
        let Some(shape) = det_normalize(&cov) else {
            continue;
        };
        let Some(dists) = mahalanobis_all(obs, &mu, &shape) else {
            continue;
        };
        let roots: Vec<f64> = dists.iter().map(|d| d.max(0.0).sqrt()).collect();
        let scale = m_scale(&roots, cfg.c0, gamma)?;
        let sigma = if scale.degenerate { 0.0 } else { scale.sigma };
        candidates.push((sigma, j, mu, shape));
    }
    if candidates.is_empty() {
        return Err(Error::DegenerateData(
            "every subsample produced a singular covariance".into(),
        ));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<(f64, DVector<f64>, DMatrix<f64>)> = None;
    for (sigma, _, mu, shape) in candidates.into_iter().take(5) {
        let refined = concentrate(obs, cfg, gamma, mu, shape, sigma, 50)?;
        if best.as_ref().map_or(true, |b| refined.0 < b.0) {
            best = Some(refined);
        }
    }
    let (sigma, mu, mut shape) = best.expect("candidate list was nonempty");
    // One more normalization pass to pin the determinant against drift.
    if let Some(renorm) = det_normalize(&shape) {
        shape = renorm;
    }
    Ok((LocationScatter::new(mu, shape)?, sigma))
}

/// Scales an SPD matrix to determinant one; `None` if not SPD.
fn det_normalize(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = cov.nrows();
    let chol = cov.clone().cholesky()?;
    let det = chol.determinant();
    if !(det > 0.0 && det.is_finite()) {
        return None;
    }
    Some(cov / det.powf(1.0 / p as f64))
}

/// Concentration refinement: reweight, recompute mean and det-normalized
/// covariance, and keep going while the M-scale strictly decreases.
fn concentrate(
    obs: &DMatrix<f64>,
    cfg: &KernelConfig,
    gamma: f64,
    mut mu: DVector<f64>,
    mut shape: DMatrix<f64>,
    mut sigma: f64,
    max_steps: usize,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    for _ in 0..max_steps {
        if sigma <= 0.0 {
            break;
        }
        let Some(dists) = mahalanobis_all(obs, &mu, &shape) else {
            break;
        };
        let weights: Vec<f64> = dists
            .iter()
            .map(|d| weight_bisquare(d.max(0.0).sqrt() / sigma, cfg.c0))
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut mu_new = DVector::zeros(obs.ncols());
        for (i, w) in weights.iter().enumerate() {
            mu_new += obs.row(i).transpose() * *w;
        }
        mu_new /= total;
        let cov_new = scatter_about(obs, &mu_new, Some(&weights));
        let Some(shape_new) = det_normalize(&cov_new) else {
            break;
        };
        let Some(dists_new) = mahalanobis_all(obs, &mu_new, &shape_new) else {
            break;
        };
        let roots: Vec<f64> = dists_new.iter().map(|d| d.max(0.0).sqrt()).collect();
        let scale = m_scale(&roots, cfg.c0, gamma)?;
        let sigma_new = if scale.degenerate { 0.0 } else { scale.sigma };
        if sigma_new >= sigma {
            break;
        }
        mu = mu_new;
        shape = shape_new;
        sigma = sigma_new;
    }
    Ok((sigma, mu, shape))
}

/// Rescales a det-1 scatter shape to covariance size:
/// `Sigma_0 = median_i{d_i} / median(chi^2_p) * Sigma_tilde`, where `d_i`
/// are the squared Mahalanobis distances of the data under the shape.
pub fn consistency_rescale(
    obs: &DMatrix<f64>,
    mu0: &DVector<f64>,
    sigma_tilde: &DMatrix<f64>,
) -> Result<LocationScatter> {
    let p = mu0.len();
    if obs.ncols() != p || sigma_tilde.nrows() != p || !sigma_tilde.is_square() {
        return Err(Error::InvalidInput(
            "observation, location, and shape dimensions disagree".into(),
        ));
    }
    let dists = mahalanobis_all(obs, mu0, sigma_tilde)
        .ok_or_else(|| Error::NotPositiveDefinite("shape matrix is not SPD".into()))?;
    let med = median(&dists)?;
    if !(med > 0.0) {
        return Err(Error::DegenerateData(
            "median Mahalanobis distance is zero".into(),
        ));
    }
    let factor = med / chi_square_median(p)?;
    LocationScatter::new(mu0.clone(), sigma_tilde * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_cloud(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn sample_mean_cov_uses_the_ml_denominator() {
        let obs = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let ls = sample_mean_cov(&obs).unwrap();
        assert_eq!(ls.mu()[0], 1.0);
        assert_eq!(ls.sigma_mat()[(0, 0)], 1.0);
    }

    #[test]
    fn sample_mean_cov_rejects_identical_rows() {
        let obs = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            sample_mean_cov(&obs),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn sample_mean_cov_is_affine_equivariant() {
        let obs = gaussian_cloud(1, 200, 3);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.3, 1.0, 0.2, 0.0, 0.5, 1.5]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut transformed = DMatrix::zeros(200, 3);
        for i in 0..200 {
            let row = &a * obs.row(i).transpose() + &b;
            transformed.row_mut(i).copy_from(&row.transpose());
        }
        let base = sample_mean_cov(&obs).unwrap();
        let mapped = sample_mean_cov(&transformed).unwrap();
        let expect_mu = &a * base.mu() + &b;
        let expect_sigma = &a * base.sigma_mat() * a.transpose();
        assert!((mapped.mu() - expect_mu).amax() < 1e-10);
        assert!((mapped.sigma_mat() - expect_sigma).amax() < 1e-10);
    }

    #[test]
    fn mahalanobis_matches_hand_arithmetic() {
        let ls = LocationScatter::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![2.0, 1.0]);
        assert_relative_eq!(mahalanobis_sq(&x, &ls).unwrap(), 2.0, max_relative = 1e-12);
        assert_eq!(mahalanobis_sq(&DVector::zeros(2), &ls).unwrap(), 0.0);

        let eye = LocationScatter::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let v = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(mahalanobis_sq(&v, &eye).unwrap(), 25.0, max_relative = 1e-12);
    }

    #[test]
    fn location_scatter_validates_spd() {
        assert!(LocationScatter::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        )
        .is_err());
        assert!(LocationScatter::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        )
        .is_err());
        assert!(LocationScatter::new(DVector::zeros(2), DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn chi_square_median_hits_reference_values() {
        // p = 1: square of the normal upper quartile; p = 2: 2 ln 2 exactly.
        assert_relative_eq!(
            chi_square_median(1).unwrap(),
            0.454936423119573,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            chi_square_median(2).unwrap(),
            2.0 * std::f64::consts::LN_2,
            max_relative = 1e-12
        );
        assert!(chi_square_median(0).is_err());
        for p in 1..30 {
            let m = chi_square_median(p).unwrap();
            // The median of chi-square_p lies between p - 2/3 and p.
            assert!(m > p as f64 - 0.67 && m < p as f64);
        }
    }

    #[test]
    fn s_multivariate_recovers_a_clean_gaussian() {
        let obs = gaussian_cloud(7, 500, 5);
        let cfg = KernelConfig::default();
        let (ls, sigma) = s_multivariate(&obs, &cfg, 500, 11).unwrap();
        assert!(sigma > 0.0);
        assert!(ls.mu().norm() < 0.2);
        let det = ls.sigma_mat().clone().cholesky().unwrap().determinant();
        assert_relative_eq!(det, 1.0, epsilon = 1e-9);

        let rescaled = consistency_rescale(&obs, ls.mu(), ls.sigma_mat()).unwrap();
        let diff = rescaled.sigma_mat() - DMatrix::identity(5, 5);
        let op_norm = diff.clone().svd(false, false).singular_values[0];
        assert!(op_norm < 0.3, "scatter off identity by {op_norm}");
    }

    #[test]
    fn s_multivariate_scale_dominates_raw_candidates() {
        let obs = gaussian_cloud(8, 100, 3);
        let cfg = KernelConfig::default();
        let seed = 3;
        let n_sub = 100;
        let (ls, sigma) = s_multivariate(&obs, &cfg, n_sub, seed).unwrap();
        let gamma = 0.5 * (1.0 - 3.0 / 100.0);
        let d = mahalanobis_all(&obs, ls.mu(), ls.sigma_mat()).unwrap();
        let roots: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        let check = m_scale(&roots, cfg.c0, gamma).unwrap();
        assert_relative_eq!(check.sigma, sigma, max_relative = 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_sub {
            let idx = rand::seq::index::sample(&mut rng, 100, 4);
            let mut subset = DMatrix::zeros(4, 3);
            for (k, i) in idx.iter().enumerate() {
                subset.row_mut(k).copy_from(&obs.row(i));
            }
            let mu = mean_vector(&subset);
            let cov = scatter_about(&subset, &mu, None);
            let Some(shape) = det_normalize(&cov) else {
                continue;
            };
            let Some(dists) = mahalanobis_all(&obs, &mu, &shape) else {
                continue;
            };
            let roots: Vec<f64> = dists.iter().map(|v| v.max(0.0).sqrt()).collect();
            let cand = m_scale(&roots, cfg.c0, gamma).unwrap();
            assert!(sigma <= cand.sigma + 1e-12);
        }
    }

    #[test]
    fn s_multivariate_is_affine_equivariant() {
        let obs = gaussian_cloud(9, 150, 3);
        let cfg = KernelConfig::default();
        let seed = 17;
        let a = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, -0.1, 0.9, 0.3, 0.2, 0.0, 1.2]);
        let b = DVector::from_vec(vec![4.0, -1.0, 2.0]);
        let mut transformed = DMatrix::zeros(150, 3);
        for i in 0..150 {
            let row = &a * obs.row(i).transpose() + &b;
            transformed.row_mut(i).copy_from(&row.transpose());
        }
        let (base, _) = s_multivariate(&obs, &cfg, 300, seed).unwrap();
        let (mapped, _) = s_multivariate(&transformed, &cfg, 300, seed).unwrap();
        let expect_mu = &a * base.mu() + &b;
        assert!((mapped.mu() - expect_mu).amax() < 1e-6);
        let pushed = &a * base.sigma_mat() * a.transpose();
        let expect_shape = det_normalize(&pushed).unwrap();
        assert!((mapped.sigma_mat() - expect_shape).amax() < 1e-6);
    }

    #[test]
    fn consistency_rescale_is_invariant_to_input_scaling() {
        let obs = gaussian_cloud(10, 80, 2);
        let cfg = KernelConfig::default();
        let (ls, _) = s_multivariate(&obs, &cfg, 200, 5).unwrap();
        let once = consistency_rescale(&obs, ls.mu(), ls.sigma_mat()).unwrap();
        let doubled = consistency_rescale(&obs, ls.mu(), &(ls.sigma_mat() * 2.0)).unwrap();
        assert!((once.sigma_mat() - doubled.sigma_mat()).amax() < 1e-10);
    }

    #[test]
    fn consistency_rescale_matches_the_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = DMatrix::from_fn(101, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = DVector::zeros(1);
        let shape = DMatrix::identity(1, 1);
        let rescaled = consistency_rescale(&obs, &mu, &shape).unwrap();
        let mut squares: Vec<f64> = obs.iter().map(|v| v * v).collect();
        squares.sort_by(f64::total_cmp);
        let med = squares[50];
        assert_relative_eq!(
            rescaled.sigma_mat()[(0, 0)],
            med / chi_square_median(1).unwrap(),
            max_relative = 1e-10
        );
    }
}
