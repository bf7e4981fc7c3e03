use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evsi"))
        .args(args)
        .output()
        .expect("run evsi")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const FAST: &str =
    "psa_draws = 4000\nposterior_draws = 500\nmcmc_burn_in = 200\nmcmc_draws = 200\n";

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn bk_curve_writes_six_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bk.cfg",
        &format!("model = bk\nexercise = 1\nq = 50\n{FAST}"),
    );
    let out = dir.path().join("out");
    let o = evsi(&[
        "evsi-curve",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 6);
    for f in [
        "psa_summary.csv",
        "variance_points.csv",
        "posterior_draws.csv",
        "curve.csv",
        "residuals.csv",
    ] {
        assert!(data_rows(&out.join(f)) > 0, "{f}");
    }
    assert_eq!(data_rows(&out.join("variance_points.csv")), 50);
    assert_eq!(data_rows(&out.join("curve.csv")), 191 * 5);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("budget_total_evaluations = 29000"));
}

#[test]
fn same_seed_gives_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "toy.cfg",
        &format!("model = normal-toy\nn_min = 1\nn_max = 40\nq = 20\n{FAST}"),
    );
    let curve = |sub: &str| {
        let out = dir.path().join(sub);
        let o = evsi(&[
            "evsi-curve",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        fs::read(out.join("curve.csv")).unwrap()
    };
    assert_eq!(curve("a"), curve("b"));
}

#[test]
fn unknown_exercise_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = evsi(&["psa", "--exercise", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown exercise"));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "colour = blue\n");
    assert_eq!(evsi(&["psa", "--config", &bad]).status.code(), Some(2));
    let empty = write_config(dir.path(), "empty.cfg", "model = normal-toy\noracle_n =\n");
    let out = dir.path().join("o");
    assert_eq!(
        evsi(&["oracle", "--config", &empty, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(evsi(&["evsi-curve", "--q", "many"]).status.code(), Some(2));
    assert_eq!(evsi(&["psa", "--n-min", "300"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let fitted = dir.path().join("fitted.csv");
    let mut body = String::from("arm2\n");
    for _ in 0..4000 {
        body.push_str("nan\n");
    }
    fs::write(&fitted, body).unwrap();
    let cfg = write_config(
        dir.path(),
        "f.cfg",
        &format!(
            "model = normal-toy\n{FAST}fitted_values = {}\n",
            fitted.display()
        ),
    );
    let out = dir.path().join("o");
    assert_eq!(
        evsi(&["evppi", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn missing_config_file_is_an_io_error() {
    assert_eq!(
        evsi(&["psa", "--config", "/nonexistent/x.cfg"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn oracle_matches_the_toy_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "toy.cfg",
        "model = normal-toy\noracle_outer = 1000\noracle_inner = 200\n",
    );
    let out = dir.path().join("o");
    let o = evsi(&[
        "oracle",
        "--config",
        &cfg,
        "--n",
        "1,4,16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("oracle.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,evsi,se,outer,inner,model_evaluations,closed_form"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r[1] - r[6]).abs() < 3.0 * r[2], "{r:?}");
        assert_eq!(r[5], r[3] * (r[4] + 1.0));
    }
}

#[test]
fn compare_ranks_designs() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!("model = normal-toy\nn_min = 1\nn_max = 60\nq = 20\n{FAST}");
    let cheap = write_config(
        dir.path(),
        "cheap.cfg",
        &format!("{base}per_participant_cost = 0.001\n"),
    );
    let dear = write_config(dir.path(), "dear.cfg", &format!("{base}fixed_cost = 5\n"));
    let out = dir.path().join("cmp");
    let o = evsi(&[
        "compare",
        "--config",
        &dear,
        "--config",
        &cheap,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("comparison_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "design,optimal_n,optimal_net_value,never_worthwhile"
    );
    assert!(lines[1].starts_with("cheap,"));
    assert!(lines[2].starts_with("dear,") && lines[2].ends_with(",1"));
    assert!(out.join("cheap").join("curve.csv").exists());
    assert_eq!(data_rows(&out.join("comparison.csv")), 120);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = evsi::pipeline::RunConfig::from_file(&path).unwrap();
            cfg.validate().unwrap();
            evsi::pipeline::resolve_model(&cfg).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
