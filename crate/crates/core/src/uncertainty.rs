//! Empirical Fisher information, posterior coefficient draws and credible
//! bands for fitted shape functions.

use crate::data::FeatureMatrix;
use crate::model::{AdditiveModel, Family, ModelError};
use crate::spline::sorted_quantile;
use crate::training::design_matrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use std::io::Write;
use std::ops::Range;
use thiserror::Error;

/// Largest coefficient count for which the dense p×p covariance is formed.
pub const MAX_PARAMETERS: usize = 4096;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("{p} coefficients exceed the dense covariance limit of {max}")]
    TooManyParameters { p: usize, max: usize },

    #[error("precision matrix not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("no observations")]
    Empty,

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Positions of each unit's β in the coefficient layout `[β₀, β_1, …]`.
pub fn coefficient_ranges(model: &AdditiveModel) -> Vec<Range<usize>> {
    let mut at = 1;
    model
        .units()
        .iter()
        .map(|u| {
            let r = at..at + u.dim();
            at += u.dim();
            r
        })
        .collect()
}

/// `[β₀, β_1, …]` without knot, center or bandwidth parameters.
pub fn coefficient_vector(model: &AdditiveModel) -> Vec<f64> {
    let mut out = vec![model.intercept()];
    for u in model.units() {
        out.extend_from_slice(u.coefficients());
    }
    out
}

fn check_size(p: usize) -> Result<(), UncertaintyError> {
    if p > MAX_PARAMETERS {
        return Err(UncertaintyError::TooManyParameters { p, max: MAX_PARAMETERS });
    }
    Ok(())
}

/// Gaussian: MLE residual variance. Bernoulli: 1.
pub fn dispersion(model: &AdditiveModel, x: &FeatureMatrix, y: &[f64]) -> Result<f64, UncertaintyError> {
    if x.n_rows() != y.len() {
        return Err(UncertaintyError::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    match model.family() {
        Family::BernoulliLogit => Ok(1.0),
        Family::Gaussian => {
            if y.is_empty() {
                return Err(UncertaintyError::Empty);
            }
            let ss: f64 = (0..y.len()).map(|i| (y[i] - model.predict_eta(x.row(i))).powi(2)).sum();
            Ok((ss / y.len() as f64).max(f64::MIN_POSITIVE))
        }
    }
}

/// Row i is `∇_β log p(y_i | x_i)`: `(y_i − μ_i)/φ` times the centered
/// design row.
pub fn per_example_gradients(
    model: &AdditiveModel,
    x: &FeatureMatrix,
    y: &[f64],
    dispersion: f64,
) -> Result<DMatrix<f64>, UncertaintyError> {
    if x.n_rows() != y.len() {
        return Err(UncertaintyError::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    let mut g = design_matrix(model, x);
    check_size(g.ncols())?;
    for i in 0..y.len() {
        let r = (y[i] - model.predict_mu(x.row(i))) / dispersion;
        g.row_mut(i).scale_mut(r);
    }
    Ok(g)
}

/// `F̃ = GᵀG/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherEstimate {
    pub matrix: DMatrix<f64>,
    pub n: usize,
}

pub fn empirical_fisher(grads: &DMatrix<f64>) -> Result<FisherEstimate, UncertaintyError> {
    let n = grads.nrows();
    if n == 0 {
        return Err(UncertaintyError::Empty);
    }
    check_size(grads.ncols())?;
    let mut f = grads.tr_mul(grads) / n as f64;
    f = (&f + f.transpose()) * 0.5;
    Ok(FisherEstimate { matrix: f, n })
}

/// Prior precision of the coefficient layout: `2nλ_u·S_u/φ` per unit block,
/// matching the scale of the fitted penalized objective.
pub fn penalty_precision(model: &AdditiveModel, n: usize, dispersion: f64) -> DMatrix<f64> {
    crate::training::penalty_blocks(model) * (2.0 * n as f64 / dispersion)
}

#[derive(Clone, Debug)]
pub struct PosteriorCovariance {
    pub matrix: DMatrix<f64>,
    /// Diagonal jitter that was needed (0 when none).
    pub jitter: f64,
}

/// `Σ = (n·F̃ + Λ)⁻¹`, adding `jitter·I` (1e-8, ×10 up to 1e-4) when the
/// precision is not numerically positive definite.
pub fn posterior_covariance(
    fisher: &FisherEstimate,
    precision: &DMatrix<f64>,
) -> Result<PosteriorCovariance, UncertaintyError> {
    let p = fisher.matrix.nrows();
    if precision.shape() != (p, p) {
        return Err(UncertaintyError::DimensionMismatch {
            expected: p,
            found: precision.nrows(),
        });
    }
    let mut a = &fisher.matrix * fisher.n as f64 + precision;
    a = (&a + a.transpose()) * 0.5;
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut jitter = 0.0;
    loop {
        let aj = &a + DMatrix::identity(p, p) * (jitter * scale);
        if let Some(ch) = aj.cholesky() {
            let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
            if min_pivot > 1e-13 * scale {
                let mut inv = ch.inverse();
                inv = (&inv + inv.transpose()) * 0.5;
                return Ok(PosteriorCovariance { matrix: inv, jitter });
            }
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        if jitter > 1e-4 * (1.0 + 1e-9) {
            return Err(UncertaintyError::NotPositiveDefinite { jitter: 1e-4 });
        }
    }
}

/// Lower-triangular `L` with `LLᵀ = Σ`; falls back to a clipped
/// eigen-decomposition for semi-definite input.
fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// `M` draws from `N(β̂, Σ)`, one per row.
pub fn sample_coefficients(
    beta_hat: &[f64],
    cov: &DMatrix<f64>,
    m: usize,
    seed: u64,
) -> Result<DMatrix<f64>, UncertaintyError> {
    let p = beta_hat.len();
    if cov.shape() != (p, p) {
        return Err(UncertaintyError::DimensionMismatch {
            expected: p,
            found: cov.nrows(),
        });
    }
    check_size(p)?;
    let l = covariance_factor(cov);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let z = DMatrix::from_fn(p, m, |_, _| standard_normal(&mut rng));
    let draws = &l * z;
    Ok(DMatrix::from_fn(m, p, |i, j| beta_hat[j] + draws[(j, i)]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CredibleBand {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub samples: usize,
}

/// Pointwise `α/2` and `1 − α/2` quantiles of the sampled shape functions
/// of a univariate unit; `mean` is the fitted curve.
pub fn credible_band(
    model: &AdditiveModel,
    unit: usize,
    grid: &[f64],
    samples: &DMatrix<f64>,
    alpha: f64,
) -> Result<CredibleBand, UncertaintyError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(UncertaintyError::InvalidAlpha(alpha));
    }
    let ranges = coefficient_ranges(model);
    let range = ranges.get(unit).cloned().ok_or(ModelError::NoSuchUnit(unit))?;
    let expected = 1 + model.units().iter().map(|u| u.dim()).sum::<usize>();
    if samples.ncols() != expected {
        return Err(UncertaintyError::DimensionMismatch {
            expected,
            found: samples.ncols(),
        });
    }
    let mean = model.shape_curve(unit, grid)?;
    let u = model.unit(unit)?;
    let means = DVector::from_column_slice(u.centering().means());
    let block = samples.columns(range.start, range.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut raw = vec![0.0; u.dim()];
    let mut values = vec![0.0; samples.nrows()];
    for (g, &x) in grid.iter().enumerate() {
        u.raw_scalar_into(x, &mut raw);
        let row = DVector::from_column_slice(&raw) - &means;
        for (m, v) in values.iter_mut().enumerate() {
            *v = block.row(m).transpose().dot(&row);
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let lo = sorted_quantile(&values, alpha / 2.0);
        let hi = sorted_quantile(&values, 1.0 - alpha / 2.0);
        lower.push(lo.min(mean[g]));
        upper.push(hi.max(mean[g]));
    }
    Ok(CredibleBand {
        grid: grid.to_vec(),
        lower,
        mean,
        upper,
        alpha,
        samples: samples.nrows(),
    })
}

/// Posterior of the coefficients of a fitted model on its training data.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub beta_hat: Vec<f64>,
    pub covariance: PosteriorCovariance,
    pub dispersion: f64,
}

impl Posterior {
    pub fn from_fit(model: &AdditiveModel, x: &FeatureMatrix, y: &[f64]) -> Result<Self, UncertaintyError> {
        let phi = dispersion(model, x, y)?;
        let grads = per_example_gradients(model, x, y, phi)?;
        let fisher = empirical_fisher(&grads)?;
        let precision = penalty_precision(model, y.len(), phi);
        let covariance = posterior_covariance(&fisher, &precision)?;
        Ok(Self {
            beta_hat: coefficient_vector(model),
            covariance,
            dispersion: phi,
        })
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<DMatrix<f64>, UncertaintyError> {
        sample_coefficients(&self.beta_hat, &self.covariance.matrix, m, seed)
    }
}

/// Appends band rows as CSV `feature,x,mean,lower,upper,alpha`.
pub fn write_band_csv<W: Write>(out: &mut W, feature: &str, band: &CredibleBand, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "feature,x,mean,lower,upper,alpha")?;
    }
    for i in 0..band.grid.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            feature, band.grid[i], band.mean[i], band.lower[i], band.upper[i], band.alpha
        )?;
    }
    Ok(())
}
