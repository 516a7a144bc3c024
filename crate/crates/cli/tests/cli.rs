use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("data")).unwrap();
        let mut csv = String::from("x1,x2,grp,y\n");
        for i in 0..300 {
            let a = ((i * 37) % 300) as f64 / 150.0 - 1.0;
            let b = ((i * 91) % 300) as f64 / 100.0;
            let g = ["north", "south", "east"][i % 3];
            let noise = (((i * 7919) % 101) as f64 / 101.0 - 0.5) * 0.2;
            let y = (2.0 * a).sin() + 0.3 * b * b + if g == "south" { 0.5 } else { 0.0 } + noise;
            csv.push_str(&format!("{a},{b},{g},{y}\n"));
        }
        std::fs::write(root.join("data/toy.csv"), csv).unwrap();
        std::fs::write(
            root.join("toy.json"),
            r#"{"name": "toy", "file": "toy.csv", "target": "y", "task": "regression",
                "columns": [{"name": "x1", "kind": "numeric"}, {"name": "x2", "kind": "numeric"},
                            {"name": "grp", "kind": "categorical"}]}"#,
        )
        .unwrap();
        std::fs::write(
            root.join("run.json"),
            r#"{"dataset": "toy.json", "data_dir": "data", "folds": 3,
                "model": {"default": {"kind": "cubic", "k": 6, "lambda": 1e-4},
                          "tensors": [{"features": ["x1", "x2"], "k": [4, 4], "lambda": 1e-3}]},
                "fit": {"learning_rate": 0.01, "batch_size": 64, "max_epochs": 25, "patience": 10}}"#,
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn snam(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_snam"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("SNAM_DATA_DIR")
            .env_remove("SNAM_OUT_DIR")
            .output()
            .unwrap()
    }

    fn fit(&self, out: &str) -> Output {
        let o = self.snam(&["fit", "--config", "run.json", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        o
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn fit_writes_artifacts_deterministically() {
    let fx = Fixture::new();
    fx.fit("m1");
    fx.fit("m2");
    for f in [
        "model.json",
        "preprocess.json",
        "loss_history.csv",
        "fit_summary.json",
        "config.json",
    ] {
        assert!(fx.path("m1").join(f).exists(), "{f}");
    }
    assert_eq!(
        read(&fx.path("m1/loss_history.csv")),
        read(&fx.path("m2/loss_history.csv"))
    );
    let summary: serde_json::Value = serde_json::from_str(&read(&fx.path("m1/fit_summary.json"))).unwrap();
    // x1, x2 cubic k=6, three one-hot columns, 4×4 tensor, intercept
    assert_eq!(summary["count_params"], 6 + 6 + 3 + 16 + 1);
    let leftovers: Vec<_> = std::fs::read_dir(fx.path("m1"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.'))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn unknown_config_key_exits_2() {
    let fx = Fixture::new();
    std::fs::write(
        fx.path("bad.json"),
        r#"{"dataset": "toy.json", "fit": {"learnin_rate": 0.1}}"#,
    )
    .unwrap();
    let o = fx.snam(&["fit", "--config", "bad.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnin_rate"));
    assert!(!fx.path("x").exists());
    let o = fx.snam(&["fit"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let fx = Fixture::new();
    std::fs::remove_file(fx.path("data/toy.csv")).unwrap();
    let o = fx.snam(&["fit", "--config", "run.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn data_dir_comes_from_environment() {
    let fx = Fixture::new();
    std::fs::rename(fx.path("data"), fx.path("elsewhere")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_snam"))
        .args(["fit", "--config", "run.json", "--out", "m"])
        .current_dir(fx.dir.path())
        .env("SNAM_DATA_DIR", fx.path("elsewhere"))
        .env_remove("SNAM_OUT_DIR")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn predict_and_evaluate_agree() {
    let fx = Fixture::new();
    fx.fit("m");
    let o = fx.snam(&[
        "predict",
        "--model",
        "m",
        "--input",
        "data/toy.csv",
        "--out",
        "pred.csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred = rows(&read(&fx.path("pred.csv")));
    assert_eq!(pred.len(), 300);
    let truth: Vec<f64> = rows(&read(&fx.path("data/toy.csv"))).iter().map(|r| r[3]).collect();
    let mse: f64 = pred.iter().zip(&truth).map(|(p, t)| (p[3] - t).powi(2)).sum::<f64>() / 300.0;
    let o = fx.snam(&["evaluate", "--model", "m", "--input", "data/toy.csv"]);
    assert!(o.status.success());
    let ev: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(ev["n"], 300);
    assert!((ev["raw_rmse"].as_f64().unwrap() - mse.sqrt()).abs() < 1e-12);
    assert!(ev["value"].as_f64().unwrap() < 0.6);
}

#[test]
fn predict_edge_cases() {
    let fx = Fixture::new();
    fx.fit("m");
    std::fs::write(fx.path("empty.csv"), "x1,x2,grp\n").unwrap();
    let o = fx.snam(&["predict", "--model", "m", "--input", "empty.csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);
    std::fs::write(fx.path("nox2.csv"), "x1,grp\n0.1,north\n").unwrap();
    let o = fx.snam(&["predict", "--model", "m", "--input", "nox2.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("x2"));
    std::fs::write(fx.path("unseen.csv"), "x1,x2,grp\n0.1,0.5,west\n").unwrap();
    let o = fx.snam(&["predict", "--model", "m", "--input", "unseen.csv"]);
    assert!(o.status.success());
}

#[test]
fn curves_and_bands() {
    let fx = Fixture::new();
    fx.fit("m");
    let o = fx.snam(&[
        "curves",
        "--model",
        "m",
        "--grid",
        "50",
        "--samples",
        "200",
        "--out",
        "curves",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let heat = read(&fx.path("curves/heatmap_x1_x2.csv"));
    assert_eq!(heat.lines().count(), 1 + 2500);
    for f in ["curve_x1.csv", "curve_x2.csv"] {
        for r in rows(&read(&fx.path("curves").join(f))) {
            assert!(r[3] <= r[2] && r[2] <= r[4], "{f}: {r:?}");
        }
    }
    let o = fx.snam(&[
        "bands",
        "--model",
        "m",
        "--grid",
        "20",
        "--alpha",
        "0.1",
        "--samples",
        "300",
        "--out",
        "bands",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&fx.path("bands/bands.csv"));
    assert!(text.starts_with("feature,x,mean,lower,upper,alpha\n"));
    assert_eq!(text.lines().count(), 1 + 40);
}

#[test]
fn benchmark_reruns_are_identical() {
    let fx = Fixture::new();
    for out in ["b1", "b2"] {
        let o = fx.snam(&["benchmark", "--config", "run.json", "--jobs", "2", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read(&fx.path("b1/metrics.json"));
    assert_eq!(a, read(&fx.path("b2/metrics.json")));
    let m: serde_json::Value = serde_json::from_str(&a).unwrap();
    let folds: Vec<f64> = m["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["value"].as_f64().unwrap())
        .collect();
    assert_eq!(folds.len(), 3);
    let mean = folds.iter().sum::<f64>() / 3.0;
    assert!((mean - m["mean"].as_f64().unwrap()).abs() < 1e-12);
    assert!(read(&fx.path("b1/table.md")).contains("rmse"));
}

#[test]
fn benchmark_merges_baselines() {
    let fx = Fixture::new();
    std::fs::create_dir_all(fx.path("base")).unwrap();
    std::fs::write(
        fx.path("base/gbm.json"),
        r#"{"model": "GBM", "dataset": "toy", "metric": "rmse", "folds": [0.5, 0.6, 0.55]}"#,
    )
    .unwrap();
    let o = fx.snam(&[
        "benchmark",
        "--config",
        "run.json",
        "--jobs",
        "1",
        "--out",
        "b",
        "--baselines",
        "base",
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("| GBM | 0.550 ± 0.050 |"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        let cfg = snam_core::bench::RunConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.manifest().unwrap();
        n += 1;
    }
    assert!(n >= 6);
}
