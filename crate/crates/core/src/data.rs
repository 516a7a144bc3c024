//! Dataset ingestion, preprocessing, fold splitting and metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("column '{0}' is absent")]
    MissingColumn(String),

    #[error("binary target expected, found {0}")]
    NonBinaryTarget(String),

    #[error("target has zero variance")]
    ZeroVariance,

    #[error("{n} rows cannot be split into {k} folds")]
    TooFewRows { n: usize, k: usize },

    #[error("AUC needs both classes present")]
    SingleClassAuc,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid dataset manifest: {0}")]
    Manifest(String),
}

/// Dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_cols: usize) -> Self {
        assert!(n_cols > 0 && data.len() % n_cols == 0, "ragged feature matrix");
        Self { data, n_cols }
    }

    pub fn empty(n_cols: usize) -> Self {
        Self {
            data: Vec::new(),
            n_cols,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(1, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged feature matrix");
            data.extend_from_slice(r);
        }
        Self { data, n_cols }
    }

    /// Single-feature matrix.
    pub fn from_column(col: &[f64]) -> Self {
        Self {
            data: col.to_vec(),
            n_cols: 1,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.data[i * self.n_cols + j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            n_cols: self.n_cols,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    None,
    Log,
}

fn default_transform() -> TargetTransform {
    TargetTransform::None
}

/// Dataset registry entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub file: String,
    pub target: String,
    pub task: Task,
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_transform")]
    pub target_transform: TargetTransform,
    /// Label mapped to 1 when the classification target is textual.
    #[serde(default)]
    pub positive_class: Option<String>,
    /// Public download location, if the dataset can be fetched.
    #[serde(default)]
    pub source_url: Option<String>,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if m.columns.is_empty() {
            return Err(DataError::Manifest("no feature columns".into()));
        }
        Ok(m)
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self.columns.clone(),
            target: Some(TargetSpec {
                name: self.target.clone(),
                task: self.task,
                transform: self.target_transform,
                positive_class: self.positive_class.clone(),
                required: true,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub name: String,
    pub task: Task,
    pub transform: TargetTransform,
    pub positive_class: Option<String>,
    /// When false, a file without the target column loads with no targets.
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub target: Option<TargetSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            RawColumn::Numeric(v) => v.len(),
            RawColumn::Categorical(v) => v.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            RawColumn::Numeric(v) => RawColumn::Numeric(idx.iter().map(|&i| v[i]).collect()),
            RawColumn::Categorical(v) => RawColumn::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// Typed columns as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<RawColumn>,
    pub target: Option<Vec<f64>>,
    pub task: Task,
    /// Rows dropped because of a missing cell.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
            target: self.target.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
            task: self.task,
            dropped_rows: 0,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_target(cell: &str, spec: &TargetSpec, row: usize) -> Result<f64, DataError> {
    let cell = cell.trim();
    match spec.task {
        Task::Regression => {
            let v: f64 = cell.parse().map_err(|_| {
                DataError::SchemaMismatch(format!("row {row}, column '{}': '{cell}' is not numeric", spec.name))
            })?;
            match spec.transform {
                TargetTransform::None => Ok(v),
                TargetTransform::Log if v > 0.0 => Ok(v.ln()),
                TargetTransform::Log => Err(DataError::SchemaMismatch(format!(
                    "row {row}, column '{}': log target needs positive values, got {v}",
                    spec.name
                ))),
            }
        }
        Task::Classification => {
            if let Some(pos) = &spec.positive_class {
                return Ok(if cell == pos { 1.0 } else { 0.0 });
            }
            match cell.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
                _ => Err(DataError::NonBinaryTarget(format!(
                    "row {row}, column '{}': '{cell}'",
                    spec.name
                ))),
            }
        }
    }
}

/// Reads a headed CSV file against `schema`. Rows with a missing target or
/// feature cell are dropped and counted.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_csv_from_reader(file, schema, &path.display().to_string())
}

pub fn load_csv_from_reader<R: std::io::Read>(reader: R, schema: &Schema, label: &str) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(DataError::EmptyFile(label.to_string()));
    }
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        col_idx.push(find(&c.name).ok_or_else(|| DataError::MissingColumn(c.name.clone()))?);
    }
    let target_idx = match &schema.target {
        Some(t) => match find(&t.name) {
            Some(i) => Some((i, t)),
            None if t.required => return Err(DataError::MissingColumn(t.name.clone())),
            None => None,
        },
        None => None,
    };
    let mut columns: Vec<RawColumn> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => RawColumn::Numeric(Vec::new()),
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut target = target_idx.map(|_| Vec::new());
    let mut dropped = 0;
    'rows: for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if let Some((ti, _)) = target_idx {
            if is_missing(rec.get(ti).unwrap_or("")) {
                dropped += 1;
                continue;
            }
        }
        let mut numeric = Vec::with_capacity(col_idx.len());
        for (c, &ci) in schema.columns.iter().zip(&col_idx) {
            let cell = rec.get(ci).unwrap_or("");
            if is_missing(cell) {
                dropped += 1;
                continue 'rows;
            }
            if c.kind == ColumnKind::Numeric {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    DataError::SchemaMismatch(format!(
                        "row {row}, column '{}': '{}' is not numeric",
                        c.name,
                        cell.trim()
                    ))
                })?;
                if !v.is_finite() {
                    return Err(DataError::SchemaMismatch(format!(
                        "row {row}, column '{}': non-finite value",
                        c.name
                    )));
                }
                numeric.push(Some(v));
            } else {
                numeric.push(None);
            }
        }
        if let (Some((ti, spec)), Some(t)) = (target_idx, target.as_mut()) {
            t.push(parse_target(rec.get(ti).unwrap_or(""), spec, row)?);
        }
        for ((col, &ci), v) in columns.iter_mut().zip(&col_idx).zip(numeric) {
            match col {
                RawColumn::Numeric(vals) => vals.push(v.expect("parsed above")),
                RawColumn::Categorical(vals) => vals.push(rec.get(ci).unwrap_or("").trim().to_string()),
            }
        }
    }
    if dropped > 0 {
        log::warn!("{label}: dropped {dropped} rows with missing cells");
    }
    Ok(RawTable {
        names: schema.columns.iter().map(|c| c.name.clone()).collect(),
        columns,
        target,
        task: schema.target.as_ref().map_or(Task::Regression, |t| t.task),
        dropped_rows: dropped,
    })
}

/// Rank-based map of a numeric column onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Distinct training values with their mid-rank empirical CDF.
    points: Vec<(f64, f64)>,
}

impl QuantileTransform {
    /// A column with a single distinct value maps to zeros.
    pub fn fit(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len() as f64;
        let mut points = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // ties occupy ranks i+1 ..= j+1
            points.push((sorted[i], (i + j + 1) as f64 / (2.0 * n)));
            i = j + 1;
        }
        if points.len() < 2 {
            log::warn!("constant column mapped to zeros");
        }
        Self { points }
    }

    pub fn is_constant(&self) -> bool {
        self.points.len() < 2
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        let pts = &self.points;
        if v < pts[0].0 {
            return -1.0;
        }
        if v > pts[pts.len() - 1].0 {
            return 1.0;
        }
        let j = pts.partition_point(|p| p.0 < v);
        let cdf = if pts[j].0 == v {
            pts[j].1
        } else {
            let (x0, c0) = pts[j - 1];
            let (x1, c1) = pts[j];
            c0 + (v - x0) / (x1 - x0) * (c1 - c0)
        };
        2.0 * cdf - 1.0
    }
}

impl QuantileTransform {
    /// Training-scale value whose transform is `t` (piecewise-linear inverse).
    pub fn invert(&self, t: f64) -> f64 {
        let pts = &self.points;
        match pts.len() {
            0 => return f64::NAN,
            1 => return pts[0].0,
            _ => {}
        }
        let c = ((t + 1.0) / 2.0).clamp(pts[0].1, pts[pts.len() - 1].1);
        let j = pts.partition_point(|p| p.1 < c).min(pts.len() - 1);
        if j == 0 || pts[j].1 == c {
            return pts[j].0;
        }
        let (x0, c0) = pts[j - 1];
        let (x1, c1) = pts[j];
        x0 + (c - c0) / (c1 - c0) * (x1 - x0)
    }
}

/// `z = (y − μ)/σ` with training statistics (population variance).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(y: &[f64]) -> Result<Self, DataError> {
        if y.is_empty() {
            return Err(DataError::ZeroVariance);
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) || !var.is_finite() {
            return Err(DataError::ZeroVariance);
        }
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One indicator column per training category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    categories: Vec<String>,
}

impl OneHotEncoder {
    pub fn fit(values: &[String]) -> Self {
        let set: BTreeSet<&String> = values.iter().collect();
        Self {
            categories: set.into_iter().cloned().collect(),
        }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Unseen values give the all-zeros row and `false`.
    pub fn apply(&self, value: &str) -> (Vec<f64>, bool) {
        let mut row = vec![0.0; self.categories.len()];
        match self.categories.iter().position(|c| c == value) {
            Some(i) => {
                row[i] = 1.0;
                (row, true)
            }
            None => (row, false),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Numeric { name: String, quantile: QuantileTransform },
    Categorical { name: String, encoder: OneHotEncoder },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncodedKind {
    Numeric,
    OneHot { category: String },
}

/// Encoded feature column description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub source: String,
    #[serde(flatten)]
    pub kind: EncodedKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Continuous,
    Binary,
}

/// Encoded, model-ready data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
    pub columns: Vec<ColumnMeta>,
    pub target_kind: TargetKind,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            columns: self.columns.clone(),
            target_kind: self.target_kind,
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// Statistics fitted once on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub columns: Vec<ColumnTransform>,
    pub target: Option<TargetScaler>,
    pub task: Task,
}

impl PreprocessState {
    /// Fits quantile maps, one-hot dictionaries and (for regression) the
    /// target scaler on `train`.
    pub fn fit(train: &RawTable) -> Result<Self, DataError> {
        let columns = train
            .names
            .iter()
            .zip(&train.columns)
            .map(|(name, col)| match col {
                RawColumn::Numeric(v) => ColumnTransform::Numeric {
                    name: name.clone(),
                    quantile: QuantileTransform::fit(v),
                },
                RawColumn::Categorical(v) => ColumnTransform::Categorical {
                    name: name.clone(),
                    encoder: OneHotEncoder::fit(v),
                },
            })
            .collect();
        let target = match (train.task, &train.target) {
            (Task::Regression, Some(y)) => Some(TargetScaler::fit(y)?),
            _ => None,
        };
        Ok(Self {
            columns,
            target,
            task: train.task,
        })
    }

    pub fn column_meta(&self) -> Vec<ColumnMeta> {
        let mut out = Vec::new();
        for c in &self.columns {
            match c {
                ColumnTransform::Numeric { name, .. } => out.push(ColumnMeta {
                    name: name.clone(),
                    source: name.clone(),
                    kind: EncodedKind::Numeric,
                }),
                ColumnTransform::Categorical { name, encoder } => {
                    for cat in encoder.categories() {
                        out.push(ColumnMeta {
                            name: format!("{name}={cat}"),
                            source: name.clone(),
                            kind: EncodedKind::OneHot { category: cat.clone() },
                        })
                    }
                }
            }
        }
        out
    }

    pub fn n_encoded(&self) -> usize {
        self.column_meta().len()
    }

    /// Encodes `raw`. Targets are standardized for regression; missing
    /// targets become an empty vector.
    pub fn transform(&self, raw: &RawTable) -> Result<Dataset, DataError> {
        if raw.columns.len() != self.columns.len() {
            return Err(DataError::SchemaMismatch(format!(
                "expected {} columns, found {}",
                self.columns.len(),
                raw.columns.len()
            )));
        }
        let n = raw.n_rows();
        let meta = self.column_meta();
        let width = meta.len().max(1);
        let mut data = vec![0.0; n * width];
        let mut unseen = 0usize;
        let mut at = 0;
        for (t, col) in self.columns.iter().zip(&raw.columns) {
            match (t, col) {
                (ColumnTransform::Numeric { quantile, .. }, RawColumn::Numeric(v)) => {
                    for (i, x) in v.iter().enumerate() {
                        data[i * width + at] = quantile.apply(*x);
                    }
                    at += 1;
                }
                (ColumnTransform::Categorical { encoder, .. }, RawColumn::Categorical(v)) => {
                    let w = encoder.categories().len();
                    for (i, x) in v.iter().enumerate() {
                        let (row, seen) = encoder.apply(x);
                        if !seen {
                            unseen += 1;
                        }
                        data[i * width + at..i * width + at + w].copy_from_slice(&row);
                    }
                    at += w;
                }
                (t, _) => {
                    let name = match t {
                        ColumnTransform::Numeric { name, .. } | ColumnTransform::Categorical { name, .. } => name,
                    };
                    return Err(DataError::SchemaMismatch(format!("column '{name}' changed kind")));
                }
            }
        }
        if unseen > 0 {
            log::warn!("{unseen} unseen category values encoded as all zeros");
        }
        let targets = match (&raw.target, &self.target) {
            (Some(y), Some(s)) => y.iter().map(|v| s.apply(*v)).collect(),
            (Some(y), None) => y.clone(),
            (None, _) => Vec::new(),
        };
        Ok(Dataset {
            features: FeatureMatrix::new(data, width),
            targets,
            columns: meta,
            target_kind: match self.task {
                Task::Regression => TargetKind::Continuous,
                Task::Classification => TargetKind::Binary,
            },
        })
    }
}

/// Shuffled k-fold partition. Indices are permuted with Xoshiro256++ seeded
/// from `seed`, then cut into `k` contiguous chunks; the first `n mod k`
/// chunks get one extra row. Train indices are returned in ascending order.
pub fn kfold_split(n: usize, k: usize, seed: u64, shuffle: bool) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DataError> {
    if k < 2 || n < k {
        return Err(DataError::TooFewRows { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        idx.shuffle(&mut rng);
    }
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test: Vec<usize> = idx[start..start + size].to_vec();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + size..]).copied().collect();
        train.sort_unstable();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, DataError> {
    if predictions.len() != targets.len() {
        return Err(DataError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    if scores.len() != labels.len() {
        return Err(DataError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let (mut n_pos, mut n_neg) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            if labels[o] > 0.5 {
                rank_sum_pos += avg_rank;
                n_pos += 1.0;
            } else {
                n_neg += 1.0;
            }
        }
        i = j + 1;
    }
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(DataError::SingleClassAuc);
    }
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}
