//! Additive predictors built from spline units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

use crate::activations::{ActivationError, SilvermanBasis, TruncatedPowerBasis};
use crate::data::FeatureMatrix;
use crate::spline::{CubicBasisSystem, KnotVector, SplineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unit references feature {index} but the model has {n_features} features")]
    FeatureOutOfRange { index: usize, n_features: usize },

    #[error("feature set {0:?} already has a unit")]
    DuplicateFeatureSet(Vec<usize>),

    #[error("operation needs a {expected} unit, unit {unit} is {found}")]
    WrongUnitKind {
        unit: usize,
        expected: &'static str,
        found: UnitKind,
    },

    #[error("no unit with index {0}")]
    NoSuchUnit(usize),

    #[error("smoothing weight must be finite and non-negative, got {0}")]
    InvalidLambda(f64),

    #[error("centering statistics are frozen")]
    CenteringFrozen,

    #[error("knots collapsed: gap {gap:e} is below the tolerance {tolerance:e}")]
    KnotCollapse { gap: f64, tolerance: f64 },

    #[error("invalid model document: {0}")]
    Document(String),

    #[error(transparent)]
    Spline(#[from] SplineError),

    #[error(transparent)]
    Activation(#[from] ActivationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[default]
    Gaussian,
    BernoulliLogit,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl Family {
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::BernoulliLogit => logistic(eta),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::BernoulliLogit => "bernoulli-logit",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Cubic,
    Silverman,
    Truncated,
    Linear,
    Tensor,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnitKind::Cubic => "cubic",
            UnitKind::Silverman => "silverman",
            UnitKind::Truncated => "truncated",
            UnitKind::Linear => "linear",
            UnitKind::Tensor => "tensor",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UnitBasis {
    Cubic {
        knots: CubicBasisSystem,
        #[serde(default)]
        learnable_knots: bool,
        /// Knot parameters written by the optimizer, not yet sorted.
        #[serde(skip)]
        pending_knots: Option<Vec<f64>>,
    },
    Silverman(SilvermanBasis),
    Truncated(TruncatedPowerBasis),
    Linear,
    Tensor {
        first: CubicBasisSystem,
        second: CubicBasisSystem,
    },
}

/// Column means subtracted from the basis expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    means: Vec<f64>,
    frozen: bool,
}

impl Centering {
    fn zeros(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_means(&mut self, means: Vec<f64>) -> Result<(), ModelError> {
        if self.frozen {
            return Err(ModelError::CenteringFrozen);
        }
        if means.len() != self.means.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.means.len(),
                found: means.len(),
            });
        }
        self.means = means;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Starts a new fit: statistics become mutable again.
    pub(crate) fn thaw(&mut self) {
        self.frozen = false;
    }
}

/// Flattened row-major outer product `a ⊗ b`.
pub fn tensor_expand(a: &[f64], b: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    if out.len() != a.len() * b.len() {
        return Err(ModelError::DimensionMismatch {
            expected: a.len() * b.len(),
            found: out.len(),
        });
    }
    for (l, &al) in a.iter().enumerate() {
        for (r, &br) in b.iter().enumerate() {
            out[l * b.len() + r] = al * br;
        }
    }
    Ok(())
}

/// One additive component `f(x) = (B(x) − means)·β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureUnit {
    #[serde(flatten)]
    basis: UnitBasis,
    features: Vec<usize>,
    coefficients: Vec<f64>,
    lambda: f64,
    centering: Centering,
}

impl FeatureUnit {
    fn with_basis(basis: UnitBasis, features: Vec<usize>, lambda: f64) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        let mut unit = Self {
            basis,
            features,
            coefficients: Vec::new(),
            lambda,
            centering: Centering::zeros(0),
        };
        let dim = unit.dim();
        unit.coefficients = vec![0.0; dim];
        unit.centering = Centering::zeros(dim);
        Ok(unit)
    }

    pub fn cubic(feature: usize, knots: KnotVector, lambda: f64) -> Result<Self, ModelError> {
        let system = CubicBasisSystem::new(knots)?;
        Self::with_basis(
            UnitBasis::Cubic {
                knots: system,
                learnable_knots: false,
                pending_knots: None,
            },
            vec![feature],
            lambda,
        )
    }

    pub fn cubic_learnable(feature: usize, knots: KnotVector, lambda: f64) -> Result<Self, ModelError> {
        let mut unit = Self::cubic(feature, knots, lambda)?;
        if let UnitBasis::Cubic { learnable_knots, .. } = &mut unit.basis {
            *learnable_knots = true;
        }
        Ok(unit)
    }

    pub fn silverman(feature: usize, basis: SilvermanBasis) -> Result<Self, ModelError> {
        Self::with_basis(UnitBasis::Silverman(basis), vec![feature], 0.0)
    }

    pub fn truncated(feature: usize, basis: TruncatedPowerBasis) -> Result<Self, ModelError> {
        Self::with_basis(UnitBasis::Truncated(basis), vec![feature], 0.0)
    }

    pub fn linear(feature: usize) -> Self {
        Self::with_basis(UnitBasis::Linear, vec![feature], 0.0).expect("zero lambda is valid")
    }

    pub fn tensor(
        features: (usize, usize),
        first: KnotVector,
        second: KnotVector,
        lambda: f64,
    ) -> Result<Self, ModelError> {
        let first = CubicBasisSystem::new(first)?;
        let second = CubicBasisSystem::new(second)?;
        Self::with_basis(
            UnitBasis::Tensor { first, second },
            vec![features.0, features.1],
            lambda,
        )
    }

    pub fn kind(&self) -> UnitKind {
        match self.basis {
            UnitBasis::Cubic { .. } => UnitKind::Cubic,
            UnitBasis::Silverman(_) => UnitKind::Silverman,
            UnitBasis::Truncated(_) => UnitKind::Truncated,
            UnitBasis::Linear => UnitKind::Linear,
            UnitBasis::Tensor { .. } => UnitKind::Tensor,
        }
    }

    pub fn basis(&self) -> &UnitBasis {
        &self.basis
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn set_coefficients(&mut self, beta: Vec<f64>) -> Result<(), ModelError> {
        if beta.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: beta.len(),
            });
        }
        self.coefficients = beta;
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), ModelError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn centering(&self) -> &Centering {
        &self.centering
    }

    pub fn centering_mut(&mut self) -> &mut Centering {
        &mut self.centering
    }

    pub fn learnable_knots(&self) -> bool {
        matches!(
            self.basis,
            UnitBasis::Cubic {
                learnable_knots: true,
                ..
            }
        )
    }

    /// The cubic system of a univariate cubic unit.
    pub fn cubic_system(&self) -> Option<&CubicBasisSystem> {
        match &self.basis {
            UnitBasis::Cubic { knots, .. } => Some(knots),
            _ => None,
        }
    }

    /// Basis dimension (length of β).
    pub fn dim(&self) -> usize {
        match &self.basis {
            UnitBasis::Cubic { knots, .. } => knots.dim(),
            UnitBasis::Silverman(b) => b.dim(),
            UnitBasis::Truncated(b) => b.dim(),
            UnitBasis::Linear => 1,
            UnitBasis::Tensor { first, second } => first.dim() * second.dim(),
        }
    }

    /// Trainable scalars besides β (knots, centers, bandwidths).
    pub fn extra_param_count(&self) -> usize {
        match &self.basis {
            UnitBasis::Cubic {
                knots,
                learnable_knots: true,
                ..
            } => knots.dim(),
            UnitBasis::Silverman(b) => 2 * b.dim(),
            _ => 0,
        }
    }

    /// Whether the raw basis of a fixed input can change during training.
    pub fn has_moving_basis(&self) -> bool {
        self.extra_param_count() > 0
    }

    pub(crate) fn is_univariate(&self) -> bool {
        self.features.len() == 1
    }

    /// Uncentered basis expansion of a univariate unit at `x`.
    pub fn raw_scalar_into(&self, x: f64, out: &mut [f64]) {
        match &self.basis {
            UnitBasis::Cubic { knots, .. } => knots.eval_into(x, out),
            UnitBasis::Silverman(b) => b.eval_into(x, out),
            UnitBasis::Truncated(b) => b.eval_into(x, out),
            UnitBasis::Linear => out[0] = x,
            UnitBasis::Tensor { .. } => unreachable!("tensor units take two inputs"),
        }
    }

    fn raw_pair_into(&self, xi: f64, xj: f64, out: &mut [f64]) {
        if let UnitBasis::Tensor { first, second } = &self.basis {
            let a = first.eval_basis(xi);
            let b = second.eval_basis(xj);
            tensor_expand(&a, &b, out).expect("sizes agree by construction");
        }
    }

    /// Uncentered basis expansion of the unit's features in `row`.
    pub fn raw_into(&self, row: &[f64], out: &mut [f64]) {
        if self.is_univariate() {
            self.raw_scalar_into(row[self.features[0]], out);
        } else {
            self.raw_pair_into(row[self.features[0]], row[self.features[1]], out);
        }
    }

    pub fn raw_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.raw_into(row, &mut out);
        out
    }

    fn center_in_place(&self, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.centering.means) {
            *o -= m;
        }
    }

    fn dot(&self, basis_row: &[f64]) -> f64 {
        basis_row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Centered basis row and contribution `dot(row, β)`.
    pub fn forward(&self, row: &[f64]) -> (f64, Vec<f64>) {
        let mut b = self.raw_row(row);
        self.center_in_place(&mut b);
        (self.dot(&b), b)
    }

    pub fn contribution(&self, row: &[f64]) -> f64 {
        self.forward(row).0
    }

    /// `S` for this unit (zero matrix when the basis has no penalty).
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        match &self.basis {
            UnitBasis::Cubic { knots, .. } => knots.penalty().clone(),
            UnitBasis::Tensor { first, second } => {
                let (p, q) = (first.dim(), second.dim());
                first.penalty().kronecker(&DMatrix::identity(q, q))
                    + DMatrix::identity(p, p).kronecker(second.penalty())
            }
            _ => DMatrix::zeros(self.dim(), self.dim()),
        }
    }

    /// `βᵀSβ`.
    pub fn wiggliness(&self) -> f64 {
        match &self.basis {
            UnitBasis::Cubic { knots, .. } => knots.wiggliness(&self.coefficients).unwrap_or(0.0),
            UnitBasis::Tensor { .. } => {
                let b = DVector::from_column_slice(&self.coefficients);
                (b.transpose() * self.penalty_matrix() * &b)[(0, 0)]
            }
            _ => 0.0,
        }
    }

    /// `λ·βᵀSβ`.
    pub fn penalty_value(&self) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * self.wiggliness()
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.coefficients);
        match &self.basis {
            UnitBasis::Cubic {
                knots,
                learnable_knots: true,
                pending_knots,
            } => match pending_knots {
                Some(p) => out.extend_from_slice(p),
                None => out.extend_from_slice(knots.knots().as_slice()),
            },
            UnitBasis::Silverman(b) => b.write_params(out),
            _ => {}
        }
    }

    pub(crate) fn read_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        let dim = self.dim();
        self.coefficients.copy_from_slice(&params[..dim]);
        let rest = &params[dim..];
        match &mut self.basis {
            UnitBasis::Cubic {
                learnable_knots: true,
                pending_knots,
                ..
            } => *pending_knots = Some(rest.to_vec()),
            UnitBasis::Silverman(b) => b.set_from_params(rest)?,
            _ => {}
        }
        Ok(())
    }

    /// Sorts pending knot parameters and rebuilds the cubic system.
    fn sort_knots(&mut self) -> Result<(), ModelError> {
        if let UnitBasis::Cubic {
            knots, pending_knots, ..
        } = &mut self.basis
        {
            if let Some(mut p) = pending_knots.take() {
                p.sort_by(|a, b| a.total_cmp(b));
                let range = p[p.len() - 1] - p[0];
                let tolerance = 1e-8 * range;
                let min_gap = p.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                if !(min_gap >= tolerance && min_gap > 0.0) || !range.is_finite() {
                    return Err(ModelError::KnotCollapse {
                        gap: min_gap,
                        tolerance,
                    });
                }
                *knots = CubicBasisSystem::new(KnotVector::new(p)?)?;
            }
        }
        Ok(())
    }

    fn check_univariate(&self, unit: usize) -> Result<(), ModelError> {
        if !self.is_univariate() {
            return Err(ModelError::WrongUnitKind {
                unit,
                expected: "univariate",
                found: self.kind(),
            });
        }
        Ok(())
    }
}

/// `η = β₀ + Σ f_u`, `μ = g⁻¹(η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    family: Family,
    intercept: f64,
    feature_names: Vec<String>,
    units: Vec<FeatureUnit>,
}

impl AdditiveModel {
    pub fn new(family: Family, feature_names: Vec<String>) -> Self {
        Self {
            family,
            intercept: 0.0,
            feature_names,
            units: Vec::new(),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn set_intercept(&mut self, v: f64) {
        self.intercept = v;
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn units(&self) -> &[FeatureUnit] {
        &self.units
    }

    pub fn unit(&self, idx: usize) -> Result<&FeatureUnit, ModelError> {
        self.units.get(idx).ok_or(ModelError::NoSuchUnit(idx))
    }

    pub fn unit_mut(&mut self, idx: usize) -> Result<&mut FeatureUnit, ModelError> {
        self.units.get_mut(idx).ok_or(ModelError::NoSuchUnit(idx))
    }

    pub fn add_unit(&mut self, unit: FeatureUnit) -> Result<usize, ModelError> {
        self.check_unit(&unit, &self.units)?;
        self.units.push(unit);
        Ok(self.units.len() - 1)
    }

    fn check_unit(&self, unit: &FeatureUnit, existing: &[FeatureUnit]) -> Result<(), ModelError> {
        for &index in &unit.features {
            if index >= self.n_features() {
                return Err(ModelError::FeatureOutOfRange {
                    index,
                    n_features: self.n_features(),
                });
            }
        }
        let key: HashSet<usize> = unit.features.iter().copied().collect();
        if existing
            .iter()
            .any(|u| u.features.iter().copied().collect::<HashSet<_>>() == key)
        {
            return Err(ModelError::DuplicateFeatureSet(unit.features.clone()));
        }
        Ok(())
    }

    pub fn predict_eta(&self, row: &[f64]) -> f64 {
        self.intercept + self.units.iter().map(|u| u.contribution(row)).sum::<f64>()
    }

    pub fn predict_mu(&self, row: &[f64]) -> f64 {
        self.family.mean(self.predict_eta(row))
    }

    pub fn predict_eta_batch(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_eta(x.row(i))).collect()
    }

    pub fn predict_mu_batch(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_mu(x.row(i))).collect()
    }

    /// Intercept, every β and every learnable knot/center/bandwidth.
    pub fn count_params(&self) -> usize {
        1 + self
            .units
            .iter()
            .map(|u| u.dim() + u.extra_param_count())
            .sum::<usize>()
    }

    /// Flat trainable parameter vector: `[β₀, unit₀ β, unit₀ extras, unit₁ …]`.
    /// Bandwidths appear as `ln σ`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count_params());
        out.push(self.intercept);
        for u in &self.units {
            u.write_params(&mut out);
        }
        out
    }

    /// Inverse of [`parameters`](Self::parameters). Learnable knots are held
    /// pending until [`sort_knots`](Self::sort_knots) runs.
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.count_params() {
            return Err(ModelError::DimensionMismatch {
                expected: self.count_params(),
                found: params.len(),
            });
        }
        self.intercept = params[0];
        let mut at = 1;
        for u in &mut self.units {
            let n = u.dim() + u.extra_param_count();
            u.read_params(&params[at..at + n])?;
            at += n;
        }
        Ok(())
    }

    /// Sorts every learnable knot vector and rebuilds its system.
    pub fn sort_knots(&mut self) -> Result<(), ModelError> {
        self.units.iter_mut().try_for_each(|u| u.sort_knots())
    }

    pub fn is_frozen(&self) -> bool {
        self.units.iter().all(|u| u.centering.is_frozen())
    }

    /// Fitted effect of a univariate unit along `grid`.
    pub fn shape_curve(&self, unit: usize, grid: &[f64]) -> Result<Vec<f64>, ModelError> {
        let u = self.unit(unit)?;
        u.check_univariate(unit)?;
        let mut row = vec![0.0; u.dim()];
        Ok(grid
            .iter()
            .map(|&x| {
                u.raw_scalar_into(x, &mut row);
                u.center_in_place(&mut row);
                u.dot(&row)
            })
            .collect())
    }

    /// Fitted effect of a tensor unit on the Cartesian grid (rows follow `grid_i`).
    pub fn shape_surface(&self, unit: usize, grid_i: &[f64], grid_j: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let u = self.unit(unit)?;
        if u.kind() != UnitKind::Tensor {
            return Err(ModelError::WrongUnitKind {
                unit,
                expected: "tensor",
                found: u.kind(),
            });
        }
        let mut out = DMatrix::zeros(grid_i.len(), grid_j.len());
        let mut row = vec![0.0; u.dim()];
        for (a, &xi) in grid_i.iter().enumerate() {
            for (b, &xj) in grid_j.iter().enumerate() {
                u.raw_pair_into(xi, xj, &mut row);
                u.center_in_place(&mut row);
                out[(a, b)] = u.dot(&row);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let raw: AdditiveModel = serde_json::from_str(s).map_err(|e| ModelError::Document(e.to_string()))?;
        raw.validated()
    }

    fn validated(self) -> Result<Self, ModelError> {
        let mut checked = AdditiveModel {
            units: Vec::with_capacity(self.units.len()),
            ..self.clone()
        };
        for u in self.units {
            if u.coefficients.len() != u.dim() || u.centering.means.len() != u.dim() {
                return Err(ModelError::DimensionMismatch {
                    expected: u.dim(),
                    found: u.coefficients.len().max(u.centering.means.len()),
                });
            }
            if u.features.len() != if u.kind() == UnitKind::Tensor { 2 } else { 1 } {
                return Err(ModelError::Document(format!(
                    "{} unit with {} features",
                    u.kind(),
                    u.features.len()
                )));
            }
            if !(u.lambda.is_finite() && u.lambda >= 0.0) {
                return Err(ModelError::InvalidLambda(u.lambda));
            }
            checked.check_unit(&u, &checked.units)?;
            checked.units.push(u);
        }
        Ok(checked)
    }
}
