//! Weighted precision-matrix distance to a human reference cohort.
//!
//! An FRF is expanded to 22 reals `[Re_1..Re_11, Im_1..Im_11]`, compared to
//! the cohort mean `mu`, reweighted per band by the stimulus power profile
//! `S = diag([w, w])` and measured with the cohort precision matrix:
//!
//! ```text
//! D = sqrt((S (x - mu))^T Sigma^-1 (S (x - mu)))
//! ```
//!
//! With `S = I` this is the Mahalanobis distance.

use nalgebra::{Cholesky, SMatrix, SVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{BandSpec, Frf11, SpectralWeights, NUM_BANDS};

pub const DIM: usize = 2 * NUM_BANDS;

pub type Vec22 = SVector<f64, DIM>;
pub type Mat22 = SMatrix<f64, DIM, DIM>;

/// Real/imaginary expansion of an [`Frf11`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrfVector22(pub Vec22);

pub fn expand(frf: &Frf11) -> FrfVector22 {
    let mut v = Vec22::zeros();
    for (k, z) in frf.values.iter().enumerate() {
        v[k] = z.re;
        v[k + NUM_BANDS] = z.im;
    }
    FrfVector22(v)
}

pub fn collapse(v: &FrfVector22, centers_hz: [f64; NUM_BANDS]) -> Frf11 {
    let values = std::array::from_fn(|k| Complex64::new(v.0[k], v.0[k + NUM_BANDS]));
    Frf11 { values, centers_hz }
}

/// Diagonal of `S`: the band weights repeated for the real and imaginary halves.
pub fn weight_diagonal(w: &SpectralWeights) -> Vec22 {
    Vec22::from_fn(|i, _| w.w[i % NUM_BANDS])
}

/// Where a reference cohort came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Synthetic,
}

/// Cohort statistics defining the score. Immutable once built.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    mu: FrfVector22,
    sigma: Mat22,
    precision: Mat22,
    precision_sqrt: Mat22,
    weights: SpectralWeights,
    bands: BandSpec,
    n_subjects: usize,
    lambda: f64,
    cohort_scores: Vec<f64>,
}

impl ReferenceModel {
    /// Validates `sigma` (symmetric, positive definite) and derives the precision.
    pub fn new(
        mu: FrfVector22,
        sigma: Mat22,
        weights: SpectralWeights,
        bands: BandSpec,
        n_subjects: usize,
        lambda: f64,
    ) -> Result<Self> {
        if mu.0.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidReference("non-finite mu or sigma".into()));
        }
        if weights.w.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidReference(
                "weights must be finite and >= 0".into(),
            ));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        if (sigma - sigma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidReference("sigma is not symmetric".into()));
        }
        let sigma = (sigma + sigma.transpose()) * 0.5;
        let precision = Cholesky::new(sigma)
            .ok_or_else(|| Error::InvalidReference("sigma is not positive definite".into()))?
            .inverse();
        let precision = (precision + precision.transpose()) * 0.5;
        if Cholesky::new(precision).is_none() {
            return Err(Error::InvalidReference(
                "precision is not positive definite".into(),
            ));
        }
        let residual = (precision * sigma - Mat22::identity()).amax();
        if residual > 1e-8 {
            return Err(Error::InvalidReference(format!(
                "sigma is too ill-conditioned: |P Sigma - I| = {residual:e}"
            )));
        }
        let eig = precision.symmetric_eigen();
        let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let precision_sqrt =
            eig.eigenvectors * Mat22::from_diagonal(&root) * eig.eigenvectors.transpose();
        Ok(Self {
            mu,
            sigma,
            precision,
            precision_sqrt,
            weights,
            bands,
            n_subjects,
            lambda,
            cohort_scores: Vec::new(),
        })
    }

    /// Attaches the cohort's own scores, used for CDF percentiles.
    pub fn with_cohort_scores(mut self, scores: Vec<f64>) -> Self {
        self.cohort_scores = scores;
        self
    }

    pub fn mu(&self) -> &FrfVector22 {
        &self.mu
    }

    pub fn sigma(&self) -> &Mat22 {
        &self.sigma
    }

    pub fn precision(&self) -> &Mat22 {
        &self.precision
    }

    pub fn weights(&self) -> &SpectralWeights {
        &self.weights
    }

    pub fn bands(&self) -> &BandSpec {
        &self.bands
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cohort_scores(&self) -> &[f64] {
        &self.cohort_scores
    }

    pub fn mean_frf(&self) -> Frf11 {
        collapse(&self.mu, self.bands.centers_array())
    }

    fn check_centers(&self, frf: &Frf11) -> Result<()> {
        let same = frf
            .centers_hz
            .iter()
            .zip(self.bands.centers())
            .all(|(a, b)| (a - b).abs() <= 1e-9);
        if !same {
            return Err(Error::ReferenceMismatch(format!(
                "FRF centres {:?} differ from reference centres {:?}",
                frf.centers_hz,
                self.bands.centers()
            )));
        }
        Ok(())
    }

    fn weighted_delta(&self, frf: &Frf11, weighted: bool) -> Vec22 {
        let delta = expand(frf).0 - self.mu.0;
        if weighted {
            delta.component_mul(&weight_diagonal(&self.weights))
        } else {
            delta
        }
    }
}

/// Score of one FRF against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(rename = "D")]
    pub d: f64,
    pub mahalanobis: f64,
    /// Fraction of the reference cohort scoring strictly below `d`.
    pub cdf_percentile: Option<f64>,
    /// Quadratic-form mass per band (real + imaginary component); sums to `d^2`.
    pub per_band_contribution: [f64; NUM_BANDS],
}

pub fn likeness_score(frf: &Frf11, reference: &ReferenceModel) -> Result<ScoreReport> {
    reference.check_centers(frf)?;
    let x = reference.weighted_delta(frf, true);
    // Split D^2 = |P^(1/2) x|^2 over components of the whitened vector.
    let z = reference.precision_sqrt * x;
    let per_band_contribution =
        std::array::from_fn(|k| z[k] * z[k] + z[k + NUM_BANDS] * z[k + NUM_BANDS]);
    let d = quadratic_form(&reference.precision, &x).sqrt();
    let mahalanobis = mahalanobis_score(frf, reference)?;
    let cdf_percentile = if reference.cohort_scores.is_empty() {
        None
    } else {
        Some(empirical_cdf(d, &reference.cohort_scores)?)
    };
    Ok(ScoreReport {
        d,
        mahalanobis,
        cdf_percentile,
        per_band_contribution,
    })
}

pub fn mahalanobis_score(frf: &Frf11, reference: &ReferenceModel) -> Result<f64> {
    reference.check_centers(frf)?;
    let x = reference.weighted_delta(frf, false);
    Ok(quadratic_form(&reference.precision, &x).sqrt())
}

fn quadratic_form(p: &Mat22, x: &Vec22) -> f64 {
    x.dot(&(p * x)).max(0.0)
}

/// `|{s in cohort : s < score}| / |cohort|`.
pub fn empirical_cdf(score: f64, cohort_scores: &[f64]) -> Result<f64> {
    if cohort_scores.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let below = cohort_scores.iter().filter(|&&s| s < score).count();
    Ok(below as f64 / cohort_scores.len() as f64)
}

/// Pointwise mean and variance of the empirical CDF over bootstrap resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCdf {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_boot: usize,
    pub seed: u64,
}

pub fn bootstrap_cdf(
    cohort_scores: &[f64],
    n_boot: usize,
    grid: &[f64],
    seed: u64,
) -> Result<BootstrapCdf> {
    if cohort_scores.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be >= 1".into()));
    }
    let n = cohort_scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; grid.len()];
    let mut sum_sq = vec![0.0; grid.len()];
    let mut sample = vec![0.0; n];
    for _ in 0..n_boot {
        for s in sample.iter_mut() {
            *s = cohort_scores[rng.random_range(0..n)];
        }
        sample.sort_by(f64::total_cmp);
        for (j, &g) in grid.iter().enumerate() {
            let f = sample.partition_point(|&s| s < g) as f64 / n as f64;
            sum[j] += f;
            sum_sq[j] += f * f;
        }
    }
    let b = n_boot as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / b).collect();
    let variance = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / b - m * m).max(0.0))
        .collect();
    Ok(BootstrapCdf {
        grid: grid.to_vec(),
        mean,
        variance,
        n_boot,
        seed,
    })
}

/// Scores every cohort member against the full-cohort reference.
pub fn cohort_scores(reference: &ReferenceModel, cohort_frfs: &[Frf11]) -> Result<Vec<f64>> {
    cohort_frfs
        .iter()
        .map(|f| likeness_score(f, reference).map(|r| r.d))
        .collect()
}

/// Sample mean and unbiased covariance of expanded FRFs, with diagonal
/// shrinkage `Sigma <- (1 - lambda) Sigma + lambda diag(Sigma)`.
pub fn mean_and_covariance(vectors: &[FrfVector22], lambda: f64) -> Result<(FrfVector22, Mat22)> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            vectors.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let n = vectors.len() as f64;
    let mu = vectors.iter().fold(Vec22::zeros(), |acc, v| acc + v.0) / n;
    let mut sigma = Mat22::zeros();
    for v in vectors {
        let d = v.0 - mu;
        sigma += d * d.transpose();
    }
    sigma /= n - 1.0;
    if lambda > 0.0 {
        let diag = Mat22::from_diagonal(&sigma.diagonal());
        sigma = sigma * (1.0 - lambda) + diag * lambda;
    }
    Ok((FrfVector22(mu), sigma))
}

/// Scores each member against a reference rebuilt without it.
pub fn cohort_scores_leave_one_out(
    cohort_frfs: &[Frf11],
    weights: &SpectralWeights,
    bands: &BandSpec,
    lambda: f64,
) -> Result<Vec<f64>> {
    if cohort_frfs.len() < 3 {
        return Err(Error::InvalidArgument(
            "leave-one-out scoring needs at least 3 members".into(),
        ));
    }
    let vectors: Vec<FrfVector22> = cohort_frfs.iter().map(expand).collect();
    (0..vectors.len())
        .map(|i| {
            let rest: Vec<FrfVector22> = vectors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| *v)
                .collect();
            let (mu, sigma) = mean_and_covariance(&rest, lambda)?;
            let reference =
                ReferenceModel::new(mu, sigma, *weights, bands.clone(), rest.len(), lambda)?;
            likeness_score(&cohort_frfs[i], &reference).map(|r| r.d)
        })
        .collect()
}
