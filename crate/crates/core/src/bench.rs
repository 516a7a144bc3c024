//! Run configuration, model assembly from a spec, single fits and the
//! cross-validated benchmark protocol.

use crate::activations::{SilvermanBasis, TruncatedPowerBasis};
use crate::data::{
    auc, kfold_split, load_csv, rmse, ColumnKind, DataError, Dataset, DatasetManifest, EncodedKind, PreprocessState,
    RawTable, Schema, TargetTransform, Task,
};
use crate::model::{AdditiveModel, Family, FeatureUnit, ModelError};
use crate::spline::{place_knots, KnotPlacement};
use crate::training::{fit, tune_lambda, FitConfig, FitResult, TrainingError};
use crate::uncertainty::UncertaintyError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Training(#[from] TrainingError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<BenchError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl BenchError {
    /// Innermost error, looking through fold wrappers.
    pub fn root(&self) -> &BenchError {
        match self {
            BenchError::Fold { source, .. } => source.root(),
            e => e,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn default_k() -> usize {
    20
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_placement() -> KnotPlacement {
    KnotPlacement::Quantile
}
fn default_degree() -> u32 {
    1
}

/// Basis for one source column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum UnitSpec {
    Cubic {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        learnable_knots: bool,
        #[serde(default = "default_placement")]
        placement: KnotPlacement,
    },
    Silverman {
        #[serde(default = "default_k")]
        k: usize,
    },
    Truncated {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_degree")]
        degree: u32,
    },
    Linear,
    /// Leaves the column out of the model.
    None,
}

impl Default for UnitSpec {
    fn default() -> Self {
        UnitSpec::Cubic {
            k: default_k(),
            lambda: default_lambda(),
            learnable_knots: false,
            placement: default_placement(),
        }
    }
}

fn default_tensor_k() -> [usize; 2] {
    [20, 20]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub features: [String; 2],
    #[serde(default = "default_tensor_k")]
    pub k: [usize; 2],
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Unit used for numeric columns without an override.
    #[serde(default)]
    pub default: UnitSpec,
    /// Per-source-column overrides.
    #[serde(default)]
    pub overrides: BTreeMap<String, UnitSpec>,
    #[serde(default)]
    pub tensors: Vec<TensorSpec>,
    /// When set, λ is tuned on the first fold over this grid and reused.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
}

fn default_folds() -> usize {
    5
}
fn default_seed() -> u64 {
    101
}
fn default_valid_fraction() -> f64 {
    0.1
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Dataset manifest, relative to the config file.
    pub dataset: PathBuf,
    /// Directory holding the data files named by manifests.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Share of each training split held out for early stopping.
    #[serde(default = "default_valid_fraction")]
    pub validation_fraction: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates `path`; relative dataset and data paths are
    /// resolved against its directory.
    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if let Some(d) = &cfg.data_dir {
            if d.is_relative() {
                cfg.data_dir = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.fit.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if self.folds < 2 {
            return Err(BenchError::Config("folds must be ≥ 2".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(BenchError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        let check_k = |k: usize, what: &str| {
            if k < 3 {
                Err(BenchError::Config(format!("{what}: k must be ≥ 3")))
            } else {
                Ok(())
            }
        };
        for (name, spec) in std::iter::once(("default", &self.model.default))
            .chain(self.model.overrides.iter().map(|(n, s)| (n.as_str(), s)))
        {
            match spec {
                UnitSpec::Cubic { k, lambda, .. } => {
                    check_k(*k, name)?;
                    if !(lambda.is_finite() && *lambda >= 0.0) {
                        return Err(BenchError::Config(format!("{name}: lambda must be ≥ 0")));
                    }
                }
                UnitSpec::Silverman { k } => check_k(*k, name)?,
                UnitSpec::Truncated { k, degree } => {
                    check_k(*k, name)?;
                    if *degree > 3 {
                        return Err(BenchError::Config(format!("{name}: degree must be ≤ 3")));
                    }
                }
                UnitSpec::Linear | UnitSpec::None => {}
            }
        }
        for t in &self.model.tensors {
            check_k(t.k[0], "tensor")?;
            check_k(t.k[1], "tensor")?;
            if t.features[0] == t.features[1] {
                return Err(BenchError::Config("tensor features must differ".into()));
            }
        }
        if let Some(g) = &self.model.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(BenchError::Config("lambda_grid must hold values ≥ 0".into()));
            }
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn manifest(&self) -> Result<DatasetManifest, BenchError> {
        Ok(DatasetManifest::from_path(&self.dataset)?)
    }

    pub fn run_name(&self, manifest: &DatasetManifest) -> String {
        self.name.clone().unwrap_or_else(|| manifest.name.clone())
    }
}

/// Loads the manifest's data file from the configured data directory.
pub fn load_dataset(cfg: &RunConfig) -> Result<(DatasetManifest, RawTable), BenchError> {
    let manifest = cfg.manifest()?;
    let path = cfg.data_dir().join(&manifest.file);
    if !path.exists() {
        return Err(BenchError::Data(DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
        }));
    }
    let table = load_csv(&path, &manifest.schema())?;
    Ok((manifest, table))
}

pub fn family_for(task: Task) -> Family {
    match task {
        Task::Regression => Family::Gaussian,
        Task::Classification => Family::BernoulliLogit,
    }
}

/// Builds an untrained model for encoded data `ds` following `spec`.
/// Knots are placed on the training columns.
pub fn build_model(spec: &ModelSpec, ds: &Dataset, family: Family) -> Result<AdditiveModel, BenchError> {
    let sources: Vec<&str> = ds.columns.iter().map(|c| c.source.as_str()).collect();
    for name in spec.overrides.keys() {
        if !sources.contains(&name.as_str()) {
            return Err(BenchError::Config(format!("override for unknown column '{name}'")));
        }
    }
    let mut model = AdditiveModel::new(family, ds.feature_names());
    for (j, meta) in ds.columns.iter().enumerate() {
        if let EncodedKind::OneHot { .. } = meta.kind {
            if spec.overrides.get(&meta.source) != Some(&UnitSpec::None) {
                model.add_unit(FeatureUnit::linear(j))?;
            }
            continue;
        }
        let unit_spec = spec.overrides.get(&meta.source).unwrap_or(&spec.default);
        let col = ds.features.column(j);
        let unit = match unit_spec {
            UnitSpec::None => continue,
            UnitSpec::Linear => FeatureUnit::linear(j),
            UnitSpec::Cubic {
                k,
                lambda,
                learnable_knots,
                placement,
            } => match place_knots(*placement, &col, *k) {
                Ok(knots) if *learnable_knots => FeatureUnit::cubic_learnable(j, knots, *lambda)?,
                Ok(knots) => FeatureUnit::cubic(j, knots, *lambda)?,
                Err(e) => {
                    log::warn!("column '{}' gets no spline unit: {e}", meta.name);
                    continue;
                }
            },
            UnitSpec::Silverman { k } => match SilvermanBasis::from_data(&col, *k) {
                Ok(b) => FeatureUnit::silverman(j, b)?,
                Err(e) => {
                    log::warn!("column '{}' gets no kernel unit: {e}", meta.name);
                    continue;
                }
            },
            UnitSpec::Truncated { k, degree } => match place_knots(KnotPlacement::Quantile, &col, *k) {
                Ok(knots) => {
                    FeatureUnit::truncated(j, TruncatedPowerBasis::new(knots, *degree).map_err(ModelError::from)?)?
                }
                Err(e) => {
                    log::warn!("column '{}' gets no truncated unit: {e}", meta.name);
                    continue;
                }
            },
        };
        model.add_unit(unit)?;
    }
    for t in &spec.tensors {
        let mut idx = [0usize; 2];
        for (slot, name) in t.features.iter().enumerate() {
            idx[slot] = ds
                .columns
                .iter()
                .position(|c| &c.name == name && c.kind == EncodedKind::Numeric)
                .ok_or_else(|| BenchError::Config(format!("tensor feature '{name}' is not a numeric column")))?;
        }
        let k0 = place_knots(KnotPlacement::Quantile, &ds.features.column(idx[0]), t.k[0]).map_err(ModelError::from)?;
        let k1 = place_knots(KnotPlacement::Quantile, &ds.features.column(idx[1]), t.k[1]).map_err(ModelError::from)?;
        model.add_unit(FeatureUnit::tensor((idx[0], idx[1]), k0, k1, t.lambda)?)?;
    }
    Ok(model)
}

/// Deterministic hold-out of `fraction` of `0..n` (ascending index lists).
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_valid = ((n as f64) * fraction).round() as usize;
    let n_valid = if n_valid >= n { 0 } else { n_valid };
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut valid = idx[..n_valid].to_vec();
    let mut train = idx[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    (train, valid)
}

/// Fit-ready pieces of one training split.
pub struct PreparedSplit {
    pub preprocess: PreprocessState,
    pub fit_set: Dataset,
    pub valid_set: Dataset,
    pub model: AdditiveModel,
}

/// Fits preprocessing on `train`, holds out a validation share and builds
/// the untrained model.
pub fn prepare_split(cfg: &RunConfig, train: &RawTable, seed: u64) -> Result<PreparedSplit, BenchError> {
    let preprocess = PreprocessState::fit(train)?;
    let encoded = preprocess.transform(train)?;
    let (fit_rows, valid_rows) = validation_split(encoded.n_rows(), cfg.validation_fraction, seed);
    let fit_set = encoded.select(&fit_rows);
    let valid_set = encoded.select(&valid_rows);
    let model = build_model(&cfg.model, &fit_set, family_for(train.task))?;
    Ok(PreparedSplit {
        preprocess,
        fit_set,
        valid_set,
        model,
    })
}

fn with_lambda(model: &AdditiveModel, lambda: Option<f64>) -> Result<AdditiveModel, BenchError> {
    let mut m = model.clone();
    if let Some(l) = lambda {
        for u in 0..m.units().len() {
            let unit = m.unit_mut(u)?;
            if unit.penalty_matrix().iter().any(|v| *v != 0.0) {
                unit.set_lambda(l)?;
            }
        }
    }
    Ok(m)
}

fn run_fit(split: &PreparedSplit, cfg: &RunConfig, seed: u64, lambda: Option<f64>) -> Result<FitResult, BenchError> {
    let model = with_lambda(&split.model, lambda)?;
    let fit_cfg = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let valid = (!split.valid_set.targets.is_empty())
        .then_some((&split.valid_set.features, split.valid_set.targets.as_slice()));
    Ok(fit(
        model,
        &split.fit_set.features,
        &split.fit_set.targets,
        valid,
        &fit_cfg,
    )?)
}

/// Metric values of one cross-validation fold. Timing is kept out so that
/// reruns serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// RMSE on the standardized target, or AUC.
    pub value: f64,
    /// RMSE in original target units (regression only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_rmse: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub dataset: String,
    pub model: String,
    pub metric: String,
    pub lambda: Option<f64>,
    pub count_params: usize,
    pub folds: Vec<FoldMetrics>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

/// Externally produced metrics merged into the rendered table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub model: String,
    pub dataset: String,
    pub metric: String,
    pub folds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub summary: MetricsSummary,
    pub fold_seconds: Vec<f64>,
    pub config: RunConfig,
    #[serde(default)]
    pub baselines: Vec<BaselineMetrics>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn inverse_target(manifest: &DatasetManifest, pre: &PreprocessState, z: f64) -> f64 {
    let y = pre.target.map_or(z, |s| s.invert(z));
    match manifest.target_transform {
        TargetTransform::None => y,
        TargetTransform::Log => y.exp(),
    }
}

/// Test-set metrics of a fitted model.
pub fn score(
    manifest: &DatasetManifest,
    pre: &PreprocessState,
    model: &AdditiveModel,
    test: &Dataset,
) -> Result<(f64, Option<f64>), BenchError> {
    match manifest.task {
        Task::Regression => {
            let eta = model.predict_eta_batch(&test.features);
            let z = rmse(&eta, &test.targets)?;
            let raw_pred: Vec<f64> = eta.iter().map(|v| inverse_target(manifest, pre, *v)).collect();
            let raw_true: Vec<f64> = test.targets.iter().map(|v| inverse_target(manifest, pre, *v)).collect();
            Ok((z, Some(rmse(&raw_pred, &raw_true)?)))
        }
        Task::Classification => Ok((auc(&model.predict_mu_batch(&test.features), &test.targets)?, None)),
    }
}

/// Cross-validated benchmark. Folds run on up to `jobs` threads; λ is tuned
/// on fold 0 when the spec carries a grid.
pub fn benchmark(cfg: &RunConfig, jobs: usize) -> Result<BenchmarkReport, BenchError> {
    cfg.validate()?;
    let (manifest, table) = load_dataset(cfg)?;
    let splits = kfold_split(table.n_rows(), cfg.folds, cfg.seed, true)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;

    let lambda = match &cfg.model.lambda_grid {
        Some(grid) => {
            let (train, _) = &splits[0];
            let split = prepare_split(cfg, &table.select(train), cfg.seed)?;
            if split.valid_set.targets.is_empty() {
                return Err(BenchError::Config("lambda_grid needs validation_fraction > 0".into()));
            }
            let fit_cfg = FitConfig {
                seed: cfg.seed,
                ..cfg.fit.clone()
            };
            let grid_result = pool.install(|| {
                tune_lambda(
                    &split.model,
                    &split.fit_set.features,
                    &split.fit_set.targets,
                    (&split.valid_set.features, &split.valid_set.targets),
                    grid,
                    &fit_cfg,
                )
            });
            Some(
                grid_result
                    .map_err(|e| BenchError::Fold {
                        fold: 0,
                        source: Box::new(e.into()),
                    })?
                    .0,
            )
        }
        None => None,
    };

    let run_fold = |fold: usize| -> Result<(FoldMetrics, usize, f64), BenchError> {
        let started = Instant::now();
        let (train_idx, test_idx) = &splits[fold];
        let seed = cfg.seed.wrapping_add(fold as u64);
        let split = prepare_split(cfg, &table.select(train_idx), seed)?;
        let result = run_fit(&split, cfg, seed, lambda)?;
        let test = split.preprocess.transform(&table.select(test_idx))?;
        let (value, raw_rmse) = score(&manifest, &split.preprocess, &result.model, &test)?;
        Ok((
            FoldMetrics {
                fold,
                n_train: split.fit_set.n_rows(),
                n_valid: split.valid_set.n_rows(),
                n_test: test.n_rows(),
                value,
                raw_rmse,
                epochs_run: result.epochs_run,
                best_epoch: result.best_epoch,
            },
            result.model.count_params(),
            started.elapsed().as_secs_f64(),
        ))
    };
    let outcomes: Vec<Result<_, BenchError>> = pool.install(|| (0..cfg.folds).into_par_iter().map(run_fold).collect());
    let mut folds = Vec::new();
    let mut seconds = Vec::new();
    let mut count_params = 0;
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        let (m, p, s) = outcome.map_err(|e| BenchError::Fold {
            fold,
            source: Box::new(e),
        })?;
        folds.push(m);
        seconds.push(s);
        count_params = count_params.max(p);
    }
    let values: Vec<f64> = folds.iter().map(|f| f.value).collect();
    let (mean, std) = mean_std(&values);
    Ok(BenchmarkReport {
        summary: MetricsSummary {
            dataset: manifest.name.clone(),
            model: cfg.run_name(&manifest),
            metric: match manifest.task {
                Task::Regression => "rmse".into(),
                Task::Classification => "auc".into(),
            },
            lambda,
            count_params,
            folds,
            mean,
            std,
        },
        fold_seconds: seconds,
        config: cfg.clone(),
        baselines: Vec::new(),
    })
}

/// Reads every `*.json` baseline in `dir` whose dataset matches.
pub fn load_baselines(dir: &Path, dataset: &str) -> Result<Vec<BaselineMetrics>, BenchError> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for p in entries {
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        let b: BaselineMetrics =
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
        if b.dataset == dataset {
            out.push(b);
        }
    }
    Ok(out)
}

/// Markdown comparison table.
pub fn render_table(report: &BenchmarkReport) -> String {
    let s = &report.summary;
    let mut out = format!(
        "| model | {} (mean ± std, {} folds) | parameters |\n|---|---|---|\n",
        s.metric,
        s.folds.len()
    );
    out.push_str(&format!(
        "| {} | {:.3} ± {:.3} | {} |\n",
        s.model, s.mean, s.std, s.count_params
    ));
    for b in &report.baselines {
        let (m, sd) = mean_std(&b.folds);
        out.push_str(&format!("| {} | {:.3} ± {:.3} | |\n", b.model, m, sd));
    }
    out
}

/// Writes each `(name, bytes)` into `dir` through a temporary file and a
/// rename, after every payload has been produced.
pub fn write_atomic(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
        if let Err(e) = std::fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(io_err(&tmp)(e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dest) in &staged {
        std::fs::rename(tmp, dest).map_err(io_err(dest))?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Writes `metrics.json`, `report.json` and `table.md`.
pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> Result<(), BenchError> {
    write_atomic(
        dir,
        &[
            ("metrics.json", to_json(&report.summary)),
            ("report.json", to_json(report)),
            ("table.md", render_table(report).into_bytes()),
        ],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub dataset: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_valid_loss: Option<f64>,
    pub count_params: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub unit_penalties: Vec<f64>,
}

/// A single fit on the whole dataset with its artifacts.
pub struct FitArtifacts {
    pub manifest: DatasetManifest,
    pub preprocess: PreprocessState,
    pub result: FitResult,
    pub summary: FitSummary,
    pub config: RunConfig,
}

pub fn fit_run(cfg: &RunConfig) -> Result<FitArtifacts, BenchError> {
    cfg.validate()?;
    let (manifest, table) = load_dataset(cfg)?;
    let split = prepare_split(cfg, &table, cfg.seed)?;
    let result = run_fit(&split, cfg, cfg.seed, None)?;
    let summary = FitSummary {
        dataset: manifest.name.clone(),
        epochs_run: result.epochs_run,
        best_epoch: result.best_epoch,
        final_train_loss: *result.train_history.last().unwrap_or(&f64::NAN),
        final_valid_loss: result.valid_history.last().copied(),
        count_params: result.model.count_params(),
        n_train: split.fit_set.n_rows(),
        n_valid: split.valid_set.n_rows(),
        unit_penalties: result.unit_penalties.clone(),
    };
    Ok(FitArtifacts {
        manifest,
        preprocess: split.preprocess,
        result,
        summary,
        config: cfg.clone(),
    })
}

pub fn loss_history_csv(result: &FitResult) -> String {
    let mut s = String::from("epoch,train_loss,valid_loss\n");
    for (e, t) in result.train_history.iter().enumerate() {
        let v = result.valid_history.get(e).map_or(String::new(), |v| v.to_string());
        s.push_str(&format!("{},{},{}\n", e + 1, t, v));
    }
    s
}

/// Writes `model.json`, `preprocess.json`, `config.json`, `manifest.json`,
/// `loss_history.csv` and `fit_summary.json`.
pub fn write_fit(dir: &Path, art: &FitArtifacts) -> Result<(), BenchError> {
    write_atomic(
        dir,
        &[
            ("model.json", art.result.model.to_json().into_bytes()),
            ("preprocess.json", to_json(&art.preprocess)),
            ("config.json", to_json(&art.config)),
            ("manifest.json", to_json(&art.manifest)),
            ("loss_history.csv", loss_history_csv(&art.result).into_bytes()),
            ("fit_summary.json", to_json(&art.summary)),
        ],
    )
}

/// A fitted model directory loaded back.
pub struct SavedModel {
    pub model: AdditiveModel,
    pub preprocess: PreprocessState,
    pub config: RunConfig,
    pub manifest: DatasetManifest,
}

impl SavedModel {
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(io_err(&p))
        };
        let model = AdditiveModel::from_json(&read("model.json")?)?;
        let preprocess: PreprocessState = serde_json::from_str(&read("preprocess.json")?)
            .map_err(|e| BenchError::Config(format!("preprocess.json: {e}")))?;
        let config: RunConfig =
            serde_json::from_str(&read("config.json")?).map_err(|e| BenchError::Config(format!("config.json: {e}")))?;
        let manifest: DatasetManifest = serde_json::from_str(&read("manifest.json")?)
            .map_err(|e| BenchError::Config(format!("manifest.json: {e}")))?;
        Ok(Self {
            model,
            preprocess,
            config,
            manifest,
        })
    }

    /// Schema for new input; the target column is optional.
    pub fn input_schema(&self) -> Schema {
        let mut s = self.manifest.schema();
        if let Some(t) = s.target.as_mut() {
            t.required = false;
        }
        s
    }

    pub fn load_input(&self, path: &Path) -> Result<Dataset, BenchError> {
        let raw = load_csv(path, &self.input_schema())?;
        Ok(self.preprocess.transform(&raw)?)
    }

    /// CSV `row,eta,mu[,prediction]`; the last column is in original target
    /// units for regression.
    pub fn predictions_csv(&self, ds: &Dataset) -> String {
        let regression = self.manifest.task == Task::Regression;
        let mut s = String::from(if regression {
            "row,eta,mu,prediction\n"
        } else {
            "row,eta,mu\n"
        });
        for i in 0..ds.n_rows() {
            let eta = self.model.predict_eta(ds.features.row(i));
            let mu = self.model.family().mean(eta);
            if regression {
                let raw = inverse_target(&self.manifest, &self.preprocess, eta);
                s.push_str(&format!("{i},{eta},{mu},{raw}\n"));
            } else {
                s.push_str(&format!("{i},{eta},{mu}\n"));
            }
        }
        s
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Evaluation, BenchError> {
        if ds.targets.is_empty() && ds.n_rows() > 0 {
            return Err(BenchError::Data(DataError::MissingColumn(self.manifest.target.clone())));
        }
        let (value, raw_rmse) = score(&self.manifest, &self.preprocess, &self.model, ds)?;
        Ok(Evaluation {
            n: ds.n_rows(),
            metric: match self.manifest.task {
                Task::Regression => "rmse".into(),
                Task::Classification => "auc".into(),
            },
            value,
            raw_rmse,
        })
    }

    /// Rows the model was fitted on, re-derived from the saved config.
    pub fn training_set(&self) -> Result<Dataset, BenchError> {
        let (_, table) = load_dataset(&self.config)?;
        let encoded = self.preprocess.transform(&table)?;
        let (fit_rows, _) = validation_split(encoded.n_rows(), self.config.validation_fraction, self.config.seed);
        Ok(encoded.select(&fit_rows))
    }

    /// Name of the source column behind an encoded feature.
    pub fn feature_name(&self, j: usize) -> String {
        self.model
            .feature_names()
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("x{j}"))
    }

    /// Original-scale value of encoded numeric column `j` at transformed `t`.
    pub fn raw_value(&self, j: usize, t: f64) -> Option<f64> {
        let mut at = 0;
        for c in &self.preprocess.columns {
            match c {
                crate::data::ColumnTransform::Numeric { quantile, .. } => {
                    if at == j {
                        return Some(quantile.invert(t));
                    }
                    at += 1;
                }
                crate::data::ColumnTransform::Categorical { encoder, .. } => at += encoder.categories().len(),
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_rmse: Option<f64>,
}

/// Column kinds of a manifest, in order.
pub fn column_kinds(manifest: &DatasetManifest) -> Vec<(String, ColumnKind)> {
    manifest.columns.iter().map(|c| (c.name.clone(), c.kind)).collect()
}
