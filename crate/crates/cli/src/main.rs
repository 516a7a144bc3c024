mod fetch;

use clap::{Parser, Subcommand};
use snam_core::bench::{
    benchmark, fit_run, load_baselines, render_table, write_atomic, write_benchmark, write_fit, BenchError, RunConfig,
    SavedModel,
};
use snam_core::data::{DataError, EncodedKind};
use snam_core::model::UnitKind;
use snam_core::nalgebra::DMatrix;
use snam_core::training::TrainingError;
use snam_core::uncertainty::{credible_band, write_band_csv, Posterior};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "snam", version, about = "Structural neural additive models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download the publicly available datasets.
    FetchData {
        /// Datasets to fetch (default: all fetchable).
        names: Vec<String>,
        /// Target directory.
        #[arg(long, env = "SNAM_DATA_DIR", default_value = "data")]
        out: PathBuf,
    },
    /// Fit one model on a whole dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict with a fitted model directory.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a fitted model on a labelled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shape curves with credible bands and tensor heatmaps.
    Curves {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Credible bands of every univariate unit as a single CSV.
    Bands {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated benchmark.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent folds (default: logical processors).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory of external baseline metric JSONs.
        #[arg(long)]
        baselines: Option<PathBuf>,
    },
}

enum Failure {
    Bench(BenchError),
    Fetch(fetch::FetchError),
    Usage(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Bench(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Fetch(fetch::FetchError::Unknown(_)) => 2,
            Failure::Fetch(_) => 3,
            Failure::Bench(e) => match e.root() {
                BenchError::Config(_) => 2,
                BenchError::Data(DataError::MissingColumn(_)) => 2,
                BenchError::Data(_) | BenchError::Io { .. } => 3,
                BenchError::Training(TrainingError::InvalidConfig(_)) => 2,
                BenchError::Training(TrainingError::NonBinaryTarget { .. } | TrainingError::LengthMismatch { .. }) => 3,
                _ => 4,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Bench(e) => e.to_string(),
            Failure::Fetch(e) => e.to_string(),
            Failure::Usage(m) => m.clone(),
        }
    }
}

fn env_path(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(d) = env_path("SNAM_DATA_DIR") {
        cfg.data_dir = Some(d);
    }
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.fit.seed = s;
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&RunConfig>, fallback: &str) -> PathBuf {
    flag.or_else(|| env_path("SNAM_OUT_DIR"))
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Univariate units on numeric columns, with their display names.
fn curve_units(saved: &SavedModel) -> Vec<(usize, usize, String)> {
    saved
        .model
        .units()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.kind() != UnitKind::Tensor)
        .filter_map(|(i, u)| {
            let j = u.features()[0];
            let numeric = saved
                .preprocess
                .column_meta()
                .get(j)
                .is_some_and(|m| m.kind == EncodedKind::Numeric);
            numeric.then(|| (i, j, saved.feature_name(j)))
        })
        .collect()
}

fn posterior_samples(saved: &SavedModel, samples: usize, seed: u64) -> Result<DMatrix<f64>, Failure> {
    let train = saved.training_set()?;
    let post = Posterior::from_fit(&saved.model, &train.features, &train.targets).map_err(BenchError::from)?;
    Ok(post.sample(samples, seed).map_err(BenchError::from)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::FetchData { names, out } => {
            let names: Vec<String> = if names.is_empty() {
                fetch::FETCHABLE.iter().map(|s| s.to_string()).collect()
            } else {
                names
            };
            for n in &names {
                let path = fetch::fetch(n, &out).map_err(Failure::Fetch)?;
                println!("{n}: {}", path.display());
            }
        }
        Command::Fit { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let art = fit_run(&cfg)?;
            let dir = out_dir(out, Some(&cfg), "runs/fit");
            write_fit(&dir, &art)?;
            println!(
                "{}: {} epochs, {} parameters, train loss {:.6} -> {}",
                art.summary.dataset,
                art.summary.epochs_run,
                art.summary.count_params,
                art.summary.final_train_loss,
                dir.display()
            );
        }
        Command::Predict { model, input, out } => {
            let saved = SavedModel::load(&model)?;
            let ds = saved.load_input(&input)?;
            let csv = saved.predictions_csv(&ds);
            match out {
                Some(p) => {
                    let dir = p
                        .parent()
                        .filter(|d| !d.as_os_str().is_empty())
                        .unwrap_or(Path::new("."));
                    let name = p
                        .file_name()
                        .and_then(|n| n.to_str())
                        .ok_or_else(|| Failure::Usage("bad --out".into()))?;
                    write_atomic(dir, &[(name, csv.into_bytes())])?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Evaluate { model, input, out } => {
            let saved = SavedModel::load(&model)?;
            let ds = saved.load_input(&input)?;
            let ev = saved.evaluate(&ds)?;
            let json = serde_json::to_string_pretty(&ev).expect("serializable");
            if let Some(dir) = out {
                write_atomic(&dir, &[("evaluation.json", format!("{json}\n").into_bytes())])?;
            }
            println!("{json}");
        }
        Command::Curves {
            model,
            grid: n,
            alpha,
            samples,
            seed,
            out,
        } => {
            let saved = SavedModel::load(&model)?;
            let draws = posterior_samples(&saved, samples, seed)?;
            let xs = grid(n);
            let mut files: Vec<(String, Vec<u8>)> = Vec::new();
            for (u, j, name) in curve_units(&saved) {
                let band = credible_band(&saved.model, u, &xs, &draws, alpha).map_err(BenchError::from)?;
                let mut s = String::from("x,x_raw,mean,lower,upper\n");
                for i in 0..xs.len() {
                    let raw = saved.raw_value(j, xs[i]).unwrap_or(f64::NAN);
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        xs[i], raw, band.mean[i], band.lower[i], band.upper[i]
                    ));
                }
                files.push((format!("curve_{}.csv", safe_name(&name)), s.into_bytes()));
            }
            for (u, unit) in saved.model.units().iter().enumerate() {
                if unit.kind() != UnitKind::Tensor {
                    continue;
                }
                let (a, b) = (unit.features()[0], unit.features()[1]);
                let surface = saved.model.shape_surface(u, &xs, &xs).map_err(BenchError::from)?;
                let mut s = String::from("x_i,x_j,effect\n");
                for (p, xi) in xs.iter().enumerate() {
                    for (q, xj) in xs.iter().enumerate() {
                        s.push_str(&format!("{xi},{xj},{}\n", surface[(p, q)]));
                    }
                }
                let fname = format!(
                    "heatmap_{}_{}.csv",
                    safe_name(&saved.feature_name(a)),
                    safe_name(&saved.feature_name(b))
                );
                files.push((fname, s.into_bytes()));
            }
            let dir = out_dir(out, None, "curves");
            let refs: Vec<(&str, Vec<u8>)> = files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
            write_atomic(&dir, &refs)?;
            println!("{} files -> {}", refs.len(), dir.display());
        }
        Command::Bands {
            model,
            grid: n,
            alpha,
            samples,
            seed,
            out,
        } => {
            let saved = SavedModel::load(&model)?;
            let draws = posterior_samples(&saved, samples, seed)?;
            let xs = grid(n);
            let mut buf = Vec::new();
            for (k, (u, _, name)) in curve_units(&saved).into_iter().enumerate() {
                let band = credible_band(&saved.model, u, &xs, &draws, alpha).map_err(BenchError::from)?;
                write_band_csv(&mut buf, &name, &band, k == 0).expect("in-memory write");
            }
            if buf.is_empty() {
                buf.extend_from_slice(b"feature,x,mean,lower,upper,alpha\n");
            }
            let dir = out_dir(out, None, "bands");
            write_atomic(&dir, &[("bands.csv", buf)])?;
            println!("{}", dir.join("bands.csv").display());
        }
        Command::Benchmark {
            config,
            seed,
            jobs,
            out,
            baselines,
        } => {
            let cfg = load_config(&config, seed)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            if jobs == 0 {
                return Err(Failure::Usage("--jobs must be ≥ 1".into()));
            }
            let mut report = benchmark(&cfg, jobs)?;
            if let Some(dir) = baselines {
                report.baselines = load_baselines(&dir, &report.summary.dataset)?;
            }
            let dir = out_dir(out, Some(&cfg), "runs/benchmark");
            write_benchmark(&dir, &report)?;
            print!("{}", render_table(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
