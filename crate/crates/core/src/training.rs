//! Penalized likelihood fitting with Adam, early stopping and a closed-form
//! Gaussian oracle.

use crate::data::FeatureMatrix;
use crate::model::{AdditiveModel, Family, FeatureUnit, ModelError, UnitBasis};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },

    #[error("binary target expected, row {row} has {value}")]
    NonBinaryTarget { row: usize, value: f64 },

    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedFit { epoch: usize },

    #[error("gradient component {index} is not finite")]
    NonFiniteGradient { index: usize },

    #[error("normal equations are singular")]
    SingularNormalEquations,

    #[error("{0} has no closed-form fit")]
    UnsupportedByOracle(String),

    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    1024
}
fn default_epochs() -> usize {
    1000
}
fn default_patience() -> usize {
    100
}
fn default_decay() -> f64 {
    0.995
}
fn default_plateau_patience() -> usize {
    10
}
fn default_plateau_delta() -> f64 {
    1e-6
}
fn default_rho() -> f64 {
    2e-6
}
fn default_true() -> bool {
    true
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_decay")]
    pub plateau_decay: f64,
    #[serde(default = "default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_plateau_delta")]
    pub plateau_min_delta: f64,
    /// Per-unit λ overriding the values stored on the units.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Knot-distance penalty weight ρ.
    #[serde(default = "default_rho")]
    pub knot_penalty: f64,
    /// Start the intercept at the link of the mean target when β is all zero.
    #[serde(default = "default_true")]
    pub init_intercept: bool,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            plateau_decay: default_decay(),
            plateau_patience: default_plateau_patience(),
            plateau_min_delta: default_plateau_delta(),
            lambdas: None,
            knot_penalty: default_rho(),
            init_intercept: true,
            shuffle: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if self.patience == 0 || self.plateau_patience == 0 {
            return bad("patience must be ≥ 1");
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay <= 1.0) {
            return bad("plateau_decay must lie in (0, 1]");
        }
        if !(self.knot_penalty >= 0.0 && self.knot_penalty.is_finite()) {
            return bad("knot_penalty must be ≥ 0");
        }
        if let Some(ls) = &self.lambdas {
            if ls.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return bad("lambdas must be ≥ 0");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: AdditiveModel,
    /// Full-training-set total loss after each epoch.
    pub train_history: Vec<f64>,
    /// Validation NLL after each epoch (empty without a validation set).
    pub valid_history: Vec<f64>,
    pub epochs_run: usize,
    /// Epoch whose parameters were returned (0-based).
    pub best_epoch: usize,
    /// `λ_u·β_uᵀS_uβ_u` of the returned model.
    pub unit_penalties: Vec<f64>,
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn observation_nll(family: Family, eta: f64, y: f64) -> f64 {
    match family {
        Family::Gaussian => 0.5 * (y - eta) * (y - eta),
        Family::BernoulliLogit => softplus(eta) - y * eta,
    }
}

fn check_targets(family: Family, y: &[f64]) -> Result<(), TrainingError> {
    if family == Family::BernoulliLogit {
        if let Some(row) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(TrainingError::NonBinaryTarget { row, value: y[row] });
        }
    }
    Ok(())
}

fn check_shapes(x: &FeatureMatrix, y: &[f64]) -> Result<(), TrainingError> {
    if x.n_rows() != y.len() {
        return Err(TrainingError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    Ok(())
}

/// Mean per-observation negative log-likelihood.
pub fn negative_log_likelihood(model: &AdditiveModel, x: &FeatureMatrix, y: &[f64]) -> Result<f64, TrainingError> {
    check_shapes(x, y)?;
    check_targets(model.family(), y)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = (0..y.len())
        .map(|i| observation_nll(model.family(), model.predict_eta(x.row(i)), y[i]))
        .sum();
    Ok(s / y.len() as f64)
}

/// `Σ_j 1/h_j` over the gaps of a learnable knot vector.
pub fn knot_distance_penalty(unit: &FeatureUnit) -> f64 {
    match (unit.learnable_knots(), unit.cubic_system()) {
        (true, Some(sys)) => sys.gaps().iter().map(|h| 1.0 / h).sum(),
        _ => 0.0,
    }
}

fn regularizer(model: &AdditiveModel, rho: f64) -> f64 {
    model
        .units()
        .iter()
        .map(|u| u.penalty_value() + rho * knot_distance_penalty(u))
        .sum()
}

/// NLL plus wiggliness and knot-distance penalties.
pub fn total_loss(
    model: &AdditiveModel,
    x: &FeatureMatrix,
    y: &[f64],
    config: &FitConfig,
) -> Result<f64, TrainingError> {
    Ok(negative_log_likelihood(model, x, y)? + regularizer(model, config.knot_penalty))
}

/// Gradient of [`total_loss`] over the flat parameter vector of
/// [`AdditiveModel::parameters`]. Centering means are held constant.
pub fn gradients(
    model: &AdditiveModel,
    x: &FeatureMatrix,
    y: &[f64],
    config: &FitConfig,
) -> Result<Vec<f64>, TrainingError> {
    check_shapes(x, y)?;
    check_targets(model.family(), y)?;
    let engine = Engine::new(model, x, y, false);
    let rows: Vec<usize> = (0..y.len()).collect();
    let mut grad = vec![0.0; model.count_params()];
    engine.evaluate(model, &rows, config.knot_penalty, Some(&mut grad))?;
    Ok(grad)
}

/// Sorts learnable knots and rebuilds their systems.
pub fn sort_knots(model: &mut AdditiveModel) -> Result<(), TrainingError> {
    Ok(model.sort_knots()?)
}

/// Positions of each unit's β inside the flat parameter vector.
pub fn parameter_ranges(model: &AdditiveModel) -> Vec<Range<usize>> {
    let mut at = 1;
    model
        .units()
        .iter()
        .map(|u| {
            let r = at..at + u.dim();
            at += u.dim() + u.extra_param_count();
            r
        })
        .collect()
}

/// Raw basis rows of fixed-basis units, cached once per fit.
struct Engine<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    cache: Vec<Option<Vec<f64>>>,
}

impl<'a> Engine<'a> {
    fn new(model: &AdditiveModel, x: &'a FeatureMatrix, y: &'a [f64], cache: bool) -> Self {
        let cache = model
            .units()
            .iter()
            .map(|u| {
                if !cache || u.has_moving_basis() {
                    return None;
                }
                let d = u.dim();
                let mut buf = vec![0.0; x.n_rows() * d];
                for i in 0..x.n_rows() {
                    u.raw_into(x.row(i), &mut buf[i * d..(i + 1) * d]);
                }
                Some(buf)
            })
            .collect();
        Self { x, y, cache }
    }

    fn raw<'b>(&'b self, unit: &FeatureUnit, u: usize, i: usize, scratch: &'b mut [f64]) -> &'b [f64] {
        match &self.cache[u] {
            Some(c) => {
                let d = unit.dim();
                &c[i * d..(i + 1) * d]
            }
            None => {
                unit.raw_into(self.x.row(i), scratch);
                scratch
            }
        }
    }

    /// Exact column means of every unit's raw basis over all rows.
    fn column_means(&self, model: &AdditiveModel) -> Vec<Vec<f64>> {
        let n = self.x.n_rows().max(1) as f64;
        model
            .units()
            .iter()
            .enumerate()
            .map(|(u, unit)| {
                let mut scratch = vec![0.0; unit.dim()];
                let mut acc = vec![0.0; unit.dim()];
                for i in 0..self.x.n_rows() {
                    let r = self.raw(unit, u, i, &mut scratch);
                    for (a, v) in acc.iter_mut().zip(r) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / n).collect()
            })
            .collect()
    }

    /// Sets exact means and moves the intercept so that η is unchanged.
    fn recenter(&self, model: &mut AdditiveModel) -> Result<(), ModelError> {
        let means = self.column_means(model);
        let mut shift = 0.0;
        for (u, m) in means.into_iter().enumerate() {
            let unit = model.unit_mut(u)?;
            shift += m
                .iter()
                .zip(unit.centering().means())
                .zip(unit.coefficients())
                .map(|((new, old), b)| (new - old) * b)
                .sum::<f64>();
            unit.centering_mut().set_means(m)?;
        }
        model.set_intercept(model.intercept() + shift);
        Ok(())
    }

    /// Mean NLL over `rows` plus the regularizer; accumulates the gradient
    /// of that batch loss into `grad` when given.
    fn evaluate(
        &self,
        model: &AdditiveModel,
        rows: &[usize],
        rho: f64,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64, TrainingError> {
        let family = model.family();
        let units = model.units();
        let m = rows.len().max(1) as f64;
        let offsets: Vec<usize> = parameter_ranges(model).iter().map(|r| r.start).collect();
        let center_dot: Vec<f64> = units
            .iter()
            .map(|u| {
                u.centering()
                    .means()
                    .iter()
                    .zip(u.coefficients())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let mut scratch: Vec<Vec<f64>> = units.iter().map(|u| vec![0.0; u.dim()]).collect();
        // learnable cubic units: (x, dL/df) pairs for the knot gradient
        let mut knot_terms: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); units.len()];
        let mut sum_r = 0.0;
        let mut nll = 0.0;
        for &i in rows {
            let mut eta = model.intercept();
            for (u, unit) in units.iter().enumerate() {
                let raw = self.raw(unit, u, i, &mut scratch[u]);
                let c: f64 = raw.iter().zip(unit.coefficients()).map(|(a, b)| a * b).sum();
                eta += c - center_dot[u];
            }
            let yi = self.y[i];
            nll += observation_nll(family, eta, yi);
            let Some(g) = grad.as_deref_mut() else { continue };
            let r = (family.mean(eta) - yi) / m;
            sum_r += r;
            for (u, unit) in units.iter().enumerate() {
                let off = offsets[u];
                let d = unit.dim();
                let raw: &[f64] = match &self.cache[u] {
                    Some(c) => &c[i * d..(i + 1) * d],
                    None => &scratch[u],
                };
                for (gj, bj) in g[off..off + d].iter_mut().zip(raw) {
                    *gj += r * bj;
                }
                match unit.basis() {
                    UnitBasis::Silverman(sb) => {
                        let xg = self.x.row(i)[unit.features()[0]];
                        let sg = sb.gradients(xg);
                        let beta = unit.coefficients();
                        for j in 0..d {
                            g[off + d + j] += r * beta[j] * sg.d_center[j];
                            g[off + 2 * d + j] += r * beta[j] * sg.d_bandwidth[j] * sb.bandwidths()[j];
                        }
                    }
                    UnitBasis::Cubic {
                        learnable_knots: true, ..
                    } => {
                        knot_terms[u].0.push(self.x.row(i)[unit.features()[0]]);
                        knot_terms[u].1.push(r);
                    }
                    _ => {}
                }
            }
        }
        let nll = nll / m;
        let loss = nll + regularizer(model, rho);
        if let Some(g) = grad {
            g[0] += sum_r;
            for (u, unit) in units.iter().enumerate() {
                let off = offsets[u];
                let d = unit.dim();
                for (gj, mj) in g[off..off + d].iter_mut().zip(unit.centering().means()) {
                    *gj -= sum_r * mj;
                }
                if unit.lambda() > 0.0 {
                    let s = unit.penalty_matrix();
                    let b = DVector::from_column_slice(unit.coefficients());
                    let sb = s * b;
                    for j in 0..d {
                        g[off + j] += 2.0 * unit.lambda() * sb[j];
                    }
                }
                if let (true, Some(sys)) = (unit.learnable_knots(), unit.cubic_system()) {
                    let (xs, ws) = &knot_terms[u];
                    let kg = sys
                        .knot_gradient(unit.coefficients(), xs, ws, unit.lambda())
                        .map_err(ModelError::from)?;
                    let h = sys.gaps();
                    for j in 0..d {
                        g[off + d + j] += kg[j];
                    }
                    for (j, hj) in h.iter().enumerate() {
                        let dg = -rho / (hj * hj);
                        g[off + d + j + 1] += dg;
                        g[off + d + j] -= dg;
                    }
                }
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainingError::NonFiniteGradient { index });
            }
        }
        Ok(loss)
    }
}

/// First-order optimizer with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn link(family: Family, mean: f64) -> f64 {
    match family {
        Family::Gaussian => mean,
        Family::BernoulliLogit => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    }
}

/// Mini-batch Adam on [`total_loss`]. With a validation set the returned
/// model is the best-validation snapshot. Centering is frozen on return.
pub fn fit(
    mut model: AdditiveModel,
    x: &FeatureMatrix,
    y: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
    config: &FitConfig,
) -> Result<FitResult, TrainingError> {
    config.validate()?;
    check_shapes(x, y)?;
    if y.is_empty() {
        return Err(TrainingError::EmptyTrainingSet);
    }
    check_targets(model.family(), y)?;
    if let Some((vx, vy)) = valid {
        check_shapes(vx, vy)?;
        check_targets(model.family(), vy)?;
    }
    let valid = valid.filter(|(_, vy)| !vy.is_empty());
    if let Some(ls) = &config.lambdas {
        if ls.len() != model.units().len() {
            return Err(TrainingError::InvalidConfig(format!(
                "{} lambdas for {} units",
                ls.len(),
                model.units().len()
            )));
        }
        for (u, l) in ls.iter().enumerate() {
            model.unit_mut(u)?.set_lambda(*l)?;
        }
    }
    model.sort_knots()?;
    for u in 0..model.units().len() {
        model.unit_mut(u)?.centering_mut().thaw();
    }
    if config.init_intercept && model.units().iter().all(|u| u.coefficients().iter().all(|b| *b == 0.0)) {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        model.set_intercept(link(model.family(), mean));
    }

    let engine = Engine::new(&model, x, y, true);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut adam = Adam::new(model.count_params(), config.learning_rate);
    let mut grad = vec![0.0; model.count_params()];
    let all_rows: Vec<usize> = (0..y.len()).collect();

    let mut train_history = Vec::new();
    let mut valid_history = Vec::new();
    let mut best: Option<(f64, usize, AdditiveModel)> = None;
    let mut since_best = 0;
    let mut plateau_best = f64::INFINITY;
    let mut stall = 0;

    for epoch in 0..config.max_epochs {
        engine.recenter(&mut model)?;
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            engine.evaluate(&model, batch, config.knot_penalty, Some(&mut grad))?;
            let mut params = model.parameters();
            adam.step(&mut params, &grad);
            model.set_parameters(&params)?;
            model.sort_knots()?;
        }
        let train_loss = engine.evaluate(&model, &all_rows, config.knot_penalty, None)?;
        if !train_loss.is_finite() {
            return Err(TrainingError::DivergedFit { epoch });
        }
        train_history.push(train_loss);
        let monitored = match valid {
            Some((vx, vy)) => {
                let v = negative_log_likelihood(&model, vx, vy)?;
                valid_history.push(v);
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, epoch, model.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                v
            }
            None => train_loss,
        };
        if monitored < plateau_best - config.plateau_min_delta {
            plateau_best = monitored;
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.plateau_patience {
                adam.lr *= config.plateau_decay;
                stall = 0;
            }
        }
        if valid.is_some() && since_best >= config.patience {
            break;
        }
    }

    let epochs_run = train_history.len();
    let best_epoch = match best {
        Some((_, e, snapshot)) => {
            model = snapshot;
            e
        }
        None => epochs_run.saturating_sub(1),
    };
    engine.recenter(&mut model)?;
    for u in 0..model.units().len() {
        model.unit_mut(u)?.centering_mut().freeze();
    }
    let unit_penalties = model.units().iter().map(|u| u.penalty_value()).collect();
    Ok(FitResult {
        model,
        train_history,
        valid_history,
        epochs_run,
        best_epoch,
        unit_penalties,
    })
}

/// Default λ search grid.
pub const LAMBDA_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Fits once per grid value (shared by every penalized unit) and keeps the
/// fit with the lowest validation NLL. Ties go to the larger λ.
pub fn tune_lambda(
    model: &AdditiveModel,
    x: &FeatureMatrix,
    y: &[f64],
    valid: (&FeatureMatrix, &[f64]),
    grid: &[f64],
    config: &FitConfig,
) -> Result<(f64, FitResult), TrainingError> {
    let mut best: Option<(f64, f64, FitResult)> = None;
    for &lambda in grid {
        let mut candidate = model.clone();
        for u in 0..candidate.units().len() {
            let unit = candidate.unit_mut(u)?;
            if unit.lambda() > 0.0 || unit.penalty_matrix().iter().any(|v| *v != 0.0) {
                unit.set_lambda(lambda)?;
            }
        }
        let cfg = FitConfig {
            lambdas: None,
            ..config.clone()
        };
        let result = fit(candidate, x, y, Some(valid), &cfg)?;
        let score = negative_log_likelihood(&result.model, valid.0, valid.1)?;
        if best.as_ref().is_none_or(|b| score <= b.1) {
            best = Some((lambda, score, result));
        }
    }
    let (lambda, _, result) = best.ok_or_else(|| TrainingError::InvalidConfig("empty lambda grid".into()))?;
    Ok((lambda, result))
}

/// `[1, centered unit rows…]` for every observation.
pub fn design_matrix(model: &AdditiveModel, x: &FeatureMatrix) -> DMatrix<f64> {
    let p = 1 + model.units().iter().map(|u| u.dim()).sum::<usize>();
    let mut out = DMatrix::zeros(x.n_rows(), p);
    for i in 0..x.n_rows() {
        out[(i, 0)] = 1.0;
        let mut at = 1;
        for u in model.units() {
            let (_, row) = u.forward(x.row(i));
            for (j, v) in row.iter().enumerate() {
                out[(i, at + j)] = *v;
            }
            at += u.dim();
        }
    }
    out
}

/// Block-diagonal `λ_u·S_u` on the layout of [`design_matrix`].
pub fn penalty_blocks(model: &AdditiveModel) -> DMatrix<f64> {
    let p = 1 + model.units().iter().map(|u| u.dim()).sum::<usize>();
    let mut out = DMatrix::zeros(p, p);
    let mut at = 1;
    for u in model.units() {
        let d = u.dim();
        if u.lambda() > 0.0 {
            let s = u.penalty_matrix() * u.lambda();
            out.view_mut((at, at), (d, d)).copy_from(&s);
        }
        at += d;
    }
    out
}

/// Minimizer of `(1/2n)‖y − Xβ‖² + λβᵀSβ`, i.e. the solution of
/// `(XᵀX + 2nλS)β = Xᵀy`. A singular system is retried once with a ridge of
/// 1e-10 times its largest diagonal entry.
pub fn penalized_least_squares_oracle(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    s: &DMatrix<f64>,
) -> Result<DVector<f64>, TrainingError> {
    if x.nrows() != y.len() {
        return Err(TrainingError::LengthMismatch {
            rows: x.nrows(),
            targets: y.len(),
        });
    }
    let n = x.nrows() as f64;
    let yv = DVector::from_column_slice(y);
    let xt = x.transpose();
    let mut a = &xt * x + s * (2.0 * n * lambda);
    a = (&a + a.transpose()) * 0.5;
    let rhs = &xt * yv;
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    let p = a.nrows();
    let scale = a.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let jittered = a + DMatrix::identity(p, p) * (1e-10 * scale);
    jittered
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(TrainingError::SingularNormalEquations)
}

/// Closed-form fit of a Gaussian model whose bases are all fixed. Centering
/// is set to the exact training means and frozen.
pub fn fit_closed_form(mut model: AdditiveModel, x: &FeatureMatrix, y: &[f64]) -> Result<AdditiveModel, TrainingError> {
    check_shapes(x, y)?;
    if model.family() != Family::Gaussian {
        return Err(TrainingError::UnsupportedByOracle(model.family().to_string()));
    }
    if let Some(u) = model.units().iter().find(|u| u.has_moving_basis()) {
        return Err(TrainingError::UnsupportedByOracle(format!(
            "{} unit with moving basis",
            u.kind()
        )));
    }
    for u in 0..model.units().len() {
        model.unit_mut(u)?.centering_mut().thaw();
    }
    let engine = Engine::new(&model, x, y, false);
    engine.recenter(&mut model)?;
    let xd = design_matrix(&model, x);
    let beta = penalized_least_squares_oracle(&xd, y, 1.0, &penalty_blocks(&model))?;
    let mut params = model.parameters();
    params.copy_from_slice(beta.as_slice());
    model.set_parameters(&params)?;
    for u in 0..model.units().len() {
        model.unit_mut(u)?.centering_mut().freeze();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{SilvermanBasis, TruncatedPowerBasis};
    use crate::spline::KnotVector;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn one_unit(family: Family, unit: FeatureUnit) -> AdditiveModel {
        let mut m = AdditiveModel::new(family, vec!["a".into(), "b".into()]);
        m.add_unit(unit).unwrap();
        m
    }

    fn uniform(k: usize) -> KnotVector {
        KnotVector::new((0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect()).unwrap()
    }

    #[test]
    fn nll_examples() {
        let x = FeatureMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4]]);
        let m = one_unit(Family::BernoulliLogit, FeatureUnit::linear(0));
        let v = negative_log_likelihood(&m, &x, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matches!(
            negative_log_likelihood(&m, &x, &[0.0, 2.0]),
            Err(TrainingError::NonBinaryTarget { row: 1, .. })
        ));
        assert!(observation_nll(Family::BernoulliLogit, 500.0, 1.0).abs() < 1e-200);
        assert!(observation_nll(Family::BernoulliLogit, -500.0, 0.0).abs() < 1e-200);
        let mut g = one_unit(Family::Gaussian, FeatureUnit::linear(0));
        g.set_intercept(0.5);
        assert_eq!(negative_log_likelihood(&g, &x, &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let x = FeatureMatrix::from_rows(&[vec![0.1, 0.0], vec![0.7, 0.0]]);
        let y = [0.3, -0.2];
        let unit = FeatureUnit::cubic_learnable(0, KnotVector::new(vec![0.0, 0.5, 1.0]).unwrap(), 1.0).unwrap();
        let mut m = one_unit(Family::Gaussian, unit);
        m.unit_mut(0).unwrap().set_coefficients(vec![2.0; 3]).unwrap();
        let nll = negative_log_likelihood(&m, &x, &y).unwrap();
        let cfg = FitConfig {
            knot_penalty: 1.0,
            ..FitConfig::default()
        };
        assert_abs_diff_eq!(total_loss(&m, &x, &y, &cfg).unwrap(), nll + 4.0, epsilon = 1e-12);
        let cfg0 = FitConfig {
            knot_penalty: 0.0,
            ..FitConfig::default()
        };
        assert_abs_diff_eq!(total_loss(&m, &x, &y, &cfg0).unwrap(), nll, epsilon = 1e-12);
    }

    #[test]
    fn beta_gradient_matches_linear_model_calculus() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-1.0..1.0), 0.0]).collect();
        let x = FeatureMatrix::from_rows(&rows);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = one_unit(Family::Gaussian, FeatureUnit::cubic(0, uniform(6), 0.3).unwrap());
        let beta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.unit_mut(0).unwrap().set_coefficients(beta.clone()).unwrap();
        m.unit_mut(0).unwrap().centering_mut().set_means(vec![0.1; 6]).unwrap();
        let cfg = FitConfig::default();
        let g = gradients(&m, &x, &y, &cfg).unwrap();
        let xd = design_matrix(&m, &x);
        let eta = DVector::from(m.predict_eta_batch(&x));
        let resid = eta - DVector::from(y.clone());
        let expect = xd.transpose() * resid / 40.0;
        let sb = m.unit(0).unwrap().penalty_matrix() * DVector::from(beta);
        for j in 0..6 {
            assert_abs_diff_eq!(g[1 + j], expect[1 + j] + 0.6 * sb[j], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g[0], expect[0], epsilon = 1e-12);
    }

    fn finite_difference(m: &AdditiveModel, x: &FeatureMatrix, y: &[f64], cfg: &FitConfig) -> Vec<f64> {
        let p0 = m.parameters();
        let mut out = vec![0.0; p0.len()];
        for i in 0..p0.len() {
            let h = 1e-6 * p0[i].abs().max(1.0);
            let eval = |d: f64| {
                let mut mm = m.clone();
                let mut p = p0.clone();
                p[i] += d;
                mm.set_parameters(&p).unwrap();
                mm.sort_knots().unwrap();
                total_loss(&mm, x, y, cfg).unwrap()
            };
            out[i] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-1.2..1.2), rng.random_range(-1.0..1.0)])
            .collect();
        let x = FeatureMatrix::from_rows(&rows);
        for family in [Family::Gaussian, Family::BernoulliLogit] {
            let y: Vec<f64> = (0..30)
                .map(|_| match family {
                    Family::Gaussian => rng.random_range(-1.0..1.0),
                    Family::BernoulliLogit => f64::from(rng.random_bool(0.5)),
                })
                .collect();
            let mut m = AdditiveModel::new(family, vec!["a".into(), "b".into()]);
            m.add_unit(FeatureUnit::cubic_learnable(0, uniform(5), 0.2).unwrap())
                .unwrap();
            m.add_unit(FeatureUnit::silverman(1, SilvermanBasis::from_knots(&uniform(4))).unwrap())
                .unwrap();
            m.add_unit(FeatureUnit::tensor((0, 1), uniform(3), uniform(4), 0.1).unwrap())
                .unwrap();
            let mut p = m.parameters();
            for (i, v) in p.iter_mut().enumerate() {
                if i < 6 || (10..14).contains(&i) || i >= 22 {
                    *v += rng.random_range(-0.5..0.5);
                }
            }
            m.set_parameters(&p).unwrap();
            m.sort_knots().unwrap();
            let cfg = FitConfig {
                knot_penalty: 0.01,
                ..FitConfig::default()
            };
            let a = gradients(&m, &x, &y, &cfg).unwrap();
            let f = finite_difference(&m, &x, &y, &cfg);
            for (i, (ai, fi)) in a.iter().zip(&f).enumerate() {
                assert!(
                    (ai - fi).abs() <= 1e-4 * ai.abs().max(fi.abs()) + 1e-7,
                    "{family} param {i}: {ai} vs {fi}"
                );
            }
        }
    }

    #[test]
    fn truncated_unit_gradient() {
        let x = FeatureMatrix::from_rows(&(0..20).map(|i| vec![i as f64 / 10.0 - 1.0]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 / 5.0).collect();
        let mut m = AdditiveModel::new(Family::Gaussian, vec!["a".into()]);
        m.add_unit(FeatureUnit::truncated(0, TruncatedPowerBasis::new(uniform(4), 2).unwrap()).unwrap())
            .unwrap();
        m.unit_mut(0)
            .unwrap()
            .set_coefficients(vec![0.3, -0.2, 0.5, 0.1, -0.4])
            .unwrap();
        let cfg = FitConfig::default();
        let a = gradients(&m, &x, &y, &cfg).unwrap();
        let f = finite_difference(&m, &x, &y, &cfg);
        for (ai, fi) in a.iter().zip(&f) {
            assert!((ai - fi).abs() <= 1e-4 * ai.abs().max(fi.abs()) + 1e-7);
        }
    }

    #[test]
    fn zero_residual_fit_has_zero_beta_gradient() {
        let x = FeatureMatrix::from_rows(&(0..15).map(|i| vec![i as f64 / 7.0 - 1.0]).collect::<Vec<_>>());
        let mut m = AdditiveModel::new(Family::Gaussian, vec!["a".into()]);
        m.add_unit(FeatureUnit::cubic(0, uniform(5), 0.0).unwrap()).unwrap();
        m.unit_mut(0)
            .unwrap()
            .set_coefficients(vec![0.2, -0.1, 0.4, 0.0, 0.3])
            .unwrap();
        let y = m.predict_eta_batch(&x);
        let g = gradients(&m, &x, &y, &FitConfig::default()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn oracle_limits() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.5 * x + 0.3 + (4.0 * x).sin() * 0.4).collect();
        let sys = crate::spline::CubicBasisSystem::new(uniform(8)).unwrap();
        let xb = sys.eval_basis_matrix(&xs);
        let beta = penalized_least_squares_oracle(&xb, &y, 1e6, sys.penalty()).unwrap();
        // ordinary least-squares line
        let n = 200.0;
        let mx = xs.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        for &t in &[-0.9, -0.2, 0.5, 1.0] {
            let line = my + slope * (t - mx);
            assert_abs_diff_eq!(sys.value(beta.as_slice(), t).unwrap(), line, epsilon = 1e-3);
        }
        let sq = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 * (i + j) as f64 / 6.0 });
        let b = penalized_least_squares_oracle(&sq, &[1.0, -2.0, 0.5, 3.0], 0.0, &DMatrix::zeros(4, 4)).unwrap();
        let fitted = &sq * b;
        for (f, t) in fitted.iter().zip([1.0, -2.0, 0.5, 3.0]) {
            assert_abs_diff_eq!(*f, t, epsilon = 1e-8);
        }
    }

    #[test]
    fn oracle_is_a_stationary_point_of_total_loss() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let x = FeatureMatrix::from_rows(&rows);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (3.0 * r[0]).sin() + r[1] * r[1] + rng.random_range(-0.1..0.1))
            .collect();
        let mut m = AdditiveModel::new(Family::Gaussian, vec!["a".into(), "b".into()]);
        m.add_unit(FeatureUnit::cubic(0, uniform(7), 1e-3).unwrap()).unwrap();
        m.add_unit(FeatureUnit::cubic(1, uniform(5), 1e-2).unwrap()).unwrap();
        let fitted = fit_closed_form(m, &x, &y).unwrap();
        let g = gradients(&fitted, &x, &y, &FitConfig::default()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
        for u in fitted.units() {
            let s: f64 = (0..150).map(|i| u.contribution(x.row(i))).sum();
            assert!(s.abs() < 1e-8 * 150.0);
        }
    }

    #[test]
    fn constant_target() {
        let x = FeatureMatrix::from_rows(&(0..100).map(|i| vec![i as f64 / 50.0 - 1.0]).collect::<Vec<_>>());
        let y = vec![2.5; 100];
        let m = one_unit(Family::Gaussian, FeatureUnit::cubic(0, uniform(6), 1e-3).unwrap());
        let cfg = FitConfig {
            max_epochs: 20,
            batch_size: 16,
            ..FitConfig::default()
        };
        let r = fit(m, &x, &y, None, &cfg).unwrap();
        assert_abs_diff_eq!(r.model.intercept(), 2.5, epsilon = 1e-3);
        let shape = r.model.shape_curve(0, &[-1.0, 0.0, 1.0]).unwrap();
        assert!(shape.iter().all(|v| v.abs() < 1e-2));
        assert!(r.model.is_frozen());
        assert_eq!(r.train_history.len(), r.epochs_run);
    }

    #[test]
    fn sine_fit_and_determinism() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        let gen = |rng: &mut Xoshiro256PlusPlus, n: usize| {
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| 3.0 * (2.0 * std::f64::consts::PI * x).sin() + 0.1 * crate::uncertainty::standard_normal(rng))
                .collect();
            (FeatureMatrix::from_column(&xs), ys)
        };
        let (x, y) = gen(&mut rng, 2000);
        let (vx, vy) = gen(&mut rng, 500);
        let (tx, ty) = gen(&mut rng, 1000);
        let knots = crate::spline::place_knots(crate::spline::KnotPlacement::Quantile, &x.column(0), 20).unwrap();
        let m = one_unit(Family::Gaussian, FeatureUnit::cubic(0, knots, 1e-3).unwrap());
        let cfg = FitConfig {
            learning_rate: 1e-2,
            batch_size: 64,
            max_epochs: 400,
            patience: 40,
            seed: 4,
            ..FitConfig::default()
        };
        let (lambda, r) = tune_lambda(&m, &x, &y, (&vx, &vy), &[1e-7, 1e-6, 1e-5, 1e-4], &cfg).unwrap();
        let m = {
            let mut m = m;
            m.unit_mut(0).unwrap().set_lambda(lambda).unwrap();
            m
        };
        let pred = r.model.predict_eta_batch(&tx);
        let rmse = crate::data::rmse(&pred, &ty).unwrap();
        assert!(rmse <= 0.12, "{rmse}");
        let r2 = fit(m, &x, &y, Some((&vx, &vy)), &cfg).unwrap();
        assert_eq!(r.train_history, r2.train_history);
        let final_valid = *r.valid_history.last().unwrap();
        let returned = negative_log_likelihood(&r.model, &vx, &vy).unwrap();
        assert!(returned <= final_valid + 1e-12);
    }

    #[test]
    fn knot_collapse_is_reported() {
        let mut m = one_unit(
            Family::Gaussian,
            FeatureUnit::cubic_learnable(0, KnotVector::new(vec![0.0, 0.5, 1.0]).unwrap(), 0.0).unwrap(),
        );
        let mut p = m.parameters();
        p[4] = 0.1;
        p[5] = 0.1 + 1e-12;
        p[6] = 0.9;
        m.set_parameters(&p).unwrap();
        assert!(matches!(
            sort_knots(&mut m),
            Err(TrainingError::Model(ModelError::KnotCollapse { .. }))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: Result<FitConfig, _> = serde_json::from_str(r#"{"learning_rat": 0.1}"#);
        assert!(parsed.is_err());
    }
}
