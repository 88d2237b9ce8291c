use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wal::report::read_metrics;

const FAST: &str = r#"
methods = ["wal", "bwa", "bt"]
seeds = [0, 1]

[data]
n_source = 200
n_target = 40
n_validation = 100

[data.synth]
num_classes = 4
dim = 6
per_class_count = 100

[annotator]
kind = "noise"
accuracy = 0.6

[train]
ep1 = 2
ep2 = 1
ep3 = 3
ep4 = 2
bt_epochs = 3
bf_source_epochs = 2
bf_target_epochs = 2

[train.arch]
phi0_hidden = [8]
feature_width = 8
phi1_hidden = [8, 8]
phi2_hidden = [8]
"#;

fn wal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wal")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn run_in(dir: &Path, sub: &str, config: &str, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out).display().to_string();
    let mut args = vec![sub, "--config", config, "--out", out.as_str()];
    args.extend_from_slice(extra);
    wal(&args)
}

#[test]
fn run_is_reproducible_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", FAST);
    let a = run_in(dir.path(), "run", &cfg, "a", &[]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run_in(dir.path(), "run", &cfg, "b", &["--workers", "3"]);
    assert_eq!(b.status.code(), Some(0));
    let ma = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let mb = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(ma, mb);

    let rows = read_metrics(&ma[..]).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].method, "wal");
    for id in ["wal_seed0", "bwa_seed1", "bt_seed0"] {
        assert!(dir.path().join(format!("a/reports/{id}.json")).exists());
    }
    for f in ["stage1.ckpt", "stage4.ckpt", "relabeled.wds", "annotator.wds", "target.wds"] {
        assert!(dir.path().join("a/cells/wal_seed1").join(f).exists(), "{f}");
    }
}

#[test]
fn accuracy_is_the_count_weighted_per_class_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", FAST);
    assert!(run_in(dir.path(), "run", &cfg, "o", &["--seed", "3"]).status.success());
    let rows = read_metrics(&fs::read(dir.path().join("o/metrics.csv")).unwrap()[..]).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/reports/wal_seed3.json")).unwrap()).unwrap();
    let counts: Vec<f64> = report["run"]["class_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let wal = rows.iter().find(|r| r.method == "wal").unwrap();
    let weighted: f64 = wal
        .per_class_accuracy
        .iter()
        .zip(&counts)
        .filter(|(_, n)| **n > 0.0)
        .map(|(a, n)| a * n)
        .sum::<f64>()
        / counts.iter().sum::<f64>();
    assert!((weighted - wal.accuracy).abs() < 1e-12);
    assert!(rows.iter().all(|r| r.seed == 3));
}

#[test]
fn baseline_with_a_perfect_annotator_scores_one_for_bwa() {
    let dir = tempfile::tempdir().unwrap();
    let text = FAST.replace("kind = \"noise\"", "kind = \"perfect\"");
    let cfg = write_config(dir.path(), "perfect.toml", &text);
    let out = run_in(dir.path(), "baseline", &cfg, "o", &["--seed", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics(&fs::read(dir.path().join("o/metrics.csv")).unwrap()[..]).unwrap();
    assert!(rows.iter().all(|r| r.method != "wal"));
    assert_eq!(rows.iter().find(|r| r.method == "bwa").unwrap().accuracy, 1.0);
}

#[test]
fn sweep_writes_grid_aggregate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FAST}\n[sweep]\naxis = \"annotator_accuracy\"\nvalues = [0.4, 0.8]\n")
        .replace("methods = [\"wal\", \"bwa\", \"bt\"]", "methods = [\"bwa\"]");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let out = run_in(dir.path(), "sweep", &cfg, "o", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics(&fs::read(dir.path().join("o/metrics.csv")).unwrap()[..]).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].axis_value, Some(0.4));
    let sweep = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    assert!(sweep.starts_with("method,axis,axis_value,n_seeds,mean_accuracy,std_accuracy,mean_annotator_accuracy\n"));
    for line in sweep.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[..2], ["bwa", "annotator_accuracy"]);
        assert_eq!(f[3], "2");
        let (level, mean): (f64, f64) = (f[2].parse().unwrap(), f[4].parse().unwrap());
        assert_eq!(f[4], f[6]);
        assert!((mean - level).abs() < 0.05, "{line}");
    }
    let svg = fs::read_to_string(dir.path().join("o/sweep_annotator_accuracy.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn bound_evaluates_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let text = FAST.replace("methods = [\"wal\", \"bwa\", \"bt\"]", "methods = [\"wal\"]");
    let cfg = write_config(dir.path(), "fast.toml", &text);
    assert!(run_in(dir.path(), "run", &cfg, "o", &["--seed", "0"]).status.success());
    let out = run_in(dir.path(), "bound", &cfg, "o", &["--seed", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("o/bound.csv")).unwrap();
    assert!(csv.contains("kl_d_term") && csv.contains("total"));
    assert!(dir.path().join("o/bound.json").exists());
}

#[test]
fn config_errors_exit_two_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "seeds = [0]\n[train]\nep1 = \"many\"\n");
    let out = run_in(dir.path(), "run", &bad, "o", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");

    let unknown = write_config(dir.path(), "unknown.toml", "sedes = [0]\n");
    assert_eq!(run_in(dir.path(), "run", &unknown, "o", &[]).status.code(), Some(2));

    let cfg = write_config(dir.path(), "fast.toml", FAST);
    assert_eq!(run_in(dir.path(), "sweep", &cfg, "o", &[]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), "run", &cfg, "o", &["--workers", "0"]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), "run", &cfg, "o", &["--preset", "nope"]).status.code(), Some(2));
    assert_eq!(wal(&["run"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml").display().to_string();
    assert_eq!(run_in(dir.path(), "run", &missing, "o", &[]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = FAST.replace("n_source = 200", "n_source = 100000");
    let cfg = write_config(dir.path(), "big.toml", &text);
    let out = run_in(dir.path(), "run", &cfg, "o", &["--seed", "0"]);
    assert_eq!(out.status.code(), Some(1));

    let fast = write_config(dir.path(), "fast.toml", FAST);
    let out = run_in(dir.path(), "bound", &fast, "empty", &[]);
    assert_eq!(out.status.code(), Some(1));
}
