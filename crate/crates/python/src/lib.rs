//! Python bindings: spline bases, saved models, fitting and credible bands.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use snam_core::activations;
use snam_core::bench::{self, BenchError, RunConfig, SavedModel};
use snam_core::data::FeatureMatrix;
use snam_core::model::AdditiveModel;
use snam_core::spline::{self, CubicBasisSystem, KnotPlacement};
use snam_core::uncertainty::{credible_band, Posterior};
use std::path::{Path, PathBuf};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bench_err(e: BenchError) -> PyErr {
    match e.root() {
        BenchError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn matrix(rows: &[Vec<f64>], n_cols: usize) -> PyResult<FeatureMatrix> {
    if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
        return Err(value_err(format!(
            "row {bad} has {} values, expected {n_cols}",
            rows[bad].len()
        )));
    }
    Ok(FeatureMatrix::new(rows.concat(), n_cols.max(1)))
}

#[pyfunction]
fn silverman_kernel(u: f64) -> f64 {
    activations::silverman_kernel(u)
}

/// Knot locations for `data`; `placement` is "uniform" or "quantile".
#[pyfunction]
#[pyo3(signature = (data, k, placement = "uniform"))]
fn place_knots(data: Vec<f64>, k: usize, placement: &str) -> PyResult<Vec<f64>> {
    let strategy = match placement {
        "uniform" => KnotPlacement::Uniform,
        "quantile" => KnotPlacement::Quantile,
        other => return Err(value_err(format!("unknown placement '{other}'"))),
    };
    Ok(spline::place_knots(strategy, &data, k)
        .map_err(value_err)?
        .as_slice()
        .to_vec())
}

/// Natural cubic regression spline basis on fixed knots.
#[pyclass(module = "snam")]
struct CubicSpline {
    system: CubicBasisSystem,
}

#[pymethods]
impl CubicSpline {
    #[new]
    fn new(knots: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            system: CubicBasisSystem::from_knots(knots).map_err(value_err)?,
        })
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.system.knots().as_slice().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn basis(&self, x: f64) -> Vec<f64> {
        self.system.eval_basis(x)
    }

    fn value(&self, beta: Vec<f64>, x: f64) -> PyResult<f64> {
        self.system.value(&beta, x).map_err(value_err)
    }

    fn penalty(&self) -> Vec<Vec<f64>> {
        let s = self.system.penalty();
        s.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn wiggliness(&self, beta: Vec<f64>) -> PyResult<f64> {
        self.system.wiggliness(&beta).map_err(value_err)
    }
}

/// A fitted additive model, optionally with the preprocessing it was trained with.
#[pyclass(module = "snam")]
struct Model {
    model: AdditiveModel,
    dir: Option<PathBuf>,
}

impl Model {
    fn saved(&self) -> PyResult<SavedModel> {
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| value_err("model was not loaded from a run directory"))?;
        SavedModel::load(dir).map_err(bench_err)
    }
}

#[pymethods]
impl Model {
    /// Loads `model.json` and its preprocessing from a `fit` output directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let saved = SavedModel::load(&dir).map_err(bench_err)?;
        Ok(Self {
            model: saved.model,
            dir: Some(dir),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            model: AdditiveModel::from_json(text).map_err(value_err)?,
            dir: None,
        })
    }

    fn to_json(&self) -> String {
        self.model.to_json()
    }

    fn count_params(&self) -> usize {
        self.model.count_params()
    }

    #[getter]
    fn family(&self) -> String {
        self.model.family().to_string()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.model.feature_names().to_vec()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.model.intercept()
    }

    /// `(kind, feature indices)` for every unit.
    fn units(&self) -> Vec<(String, Vec<usize>)> {
        self.model
            .units()
            .iter()
            .map(|u| (u.kind().to_string(), u.features().to_vec()))
            .collect()
    }

    /// Linear predictor for rows of encoded features.
    fn predict_eta(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.model.predict_eta_batch(&matrix(&rows, self.model.n_features())?))
    }

    /// Mean response for rows of encoded features.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.model.predict_mu_batch(&matrix(&rows, self.model.n_features())?))
    }

    /// Predictions for a CSV file with the training columns; returns `eta` per row.
    fn predict_csv(&self, path: PathBuf) -> PyResult<Vec<f64>> {
        let saved = self.saved()?;
        let ds = saved.load_input(&path).map_err(bench_err)?;
        Ok(saved.model.predict_eta_batch(&ds.features))
    }

    fn shape_curve(&self, unit: usize, grid: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.shape_curve(unit, &grid).map_err(value_err)
    }

    fn shape_surface(&self, unit: usize, grid_i: Vec<f64>, grid_j: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let s = self.model.shape_surface(unit, &grid_i, &grid_j).map_err(value_err)?;
        Ok(s.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Pointwise credible band `(lower, mean, upper)` of a univariate unit,
    /// using the posterior on the model's training data.
    #[pyo3(signature = (unit, grid, alpha = 0.05, samples = 1000, seed = 0))]
    fn band(
        &self,
        unit: usize,
        grid: Vec<f64>,
        alpha: f64,
        samples: usize,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let saved = self.saved()?;
        let train = saved.training_set().map_err(bench_err)?;
        let post = Posterior::from_fit(&self.model, &train.features, &train.targets).map_err(value_err)?;
        let draws = post.sample(samples, seed).map_err(value_err)?;
        let b = credible_band(&self.model, unit, &grid, &draws, alpha).map_err(value_err)?;
        Ok((b.lower, b.mean, b.upper))
    }
}

/// Fits the run described by a config file and writes artifacts to `out`.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn fit(config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<Model> {
    let mut cfg = RunConfig::from_path(&config).map_err(bench_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let art = bench::fit_run(&cfg).map_err(bench_err)?;
    bench::write_fit(&out, &art).map_err(bench_err)?;
    Ok(Model {
        model: art.result.model,
        dir: Some(out),
    })
}

/// Runs cross-validation and returns `metrics.json` as a string.
#[pyfunction]
#[pyo3(signature = (config, out = None, jobs = 1))]
fn benchmark(config: PathBuf, out: Option<PathBuf>, jobs: usize) -> PyResult<String> {
    let cfg = RunConfig::from_path(&config).map_err(bench_err)?;
    let report = bench::benchmark(&cfg, jobs).map_err(bench_err)?;
    if let Some(dir) = out.as_deref() {
        bench::write_benchmark(Path::new(dir), &report).map_err(bench_err)?;
    }
    serde_json::to_string_pretty(&report.summary).map_err(value_err)
}

#[pymodule]
fn snam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(silverman_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(place_knots, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_class::<CubicSpline>()?;
    m.add_class::<Model>()?;
    Ok(())
}
