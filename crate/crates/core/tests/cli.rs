use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use relgrad_core::model::{self, Network};

fn relgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relgrad"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = relgrad(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("missing {key} in {out}"))
        .parse()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn parse_table(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn missing_data_source_is_a_usage_error() {
    let out = relgrad(&["train", "--out", "/tmp/never"]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_errors_exit_nonzero_on_stderr() {
    let out = relgrad(&["eval", "--model", "/nonexistent/model.bin", "--toy", "mog"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn eval_identity_on_zero_data() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.bin");
    model::io::save(&Network::identity(3, 1), &model_path).unwrap();
    let csv = dir.path().join("zeros.csv");
    std::fs::write(&csv, "0,0,0\n".repeat(20)).unwrap();
    let args = [
        "eval",
        "--model",
        s(&model_path),
        "--data",
        s(&csv),
        "--split",
        "train",
    ];
    let first = ok(&args);
    assert!((field(&first, "log_likelihood") + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
    assert_eq!(first, ok(&args));
}

#[test]
fn train_eval_sample_grid_round() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let report = ok(&[
        "train",
        "--toy",
        "mog",
        "--layers",
        "3",
        "--epochs",
        "12",
        "--eval-every",
        "4",
        "--seed",
        "3",
        "--out",
        s(&run),
    ]);
    for f in [
        "model.bin",
        "metrics.csv",
        "report.json",
        "config.json",
        "standardization.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let best = summary["best_validation_nll"].as_f64().unwrap();
    assert!((field(&report, "best_validation_log_likelihood") + best).abs() < 1e-12);

    let model_path = run.join("model.bin");
    let eval = ok(&[
        "eval",
        "--model",
        s(&model_path),
        "--toy",
        "mog",
        "--split",
        "validation",
        "--seed",
        "3",
    ]);
    assert!((field(&eval, "log_likelihood") + best).abs() < 1e-9);

    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().filter(|l| l.contains(",train,")).count(),
        12
    );
    assert_eq!(
        metrics
            .lines()
            .filter(|l| l.contains(",validation,"))
            .count(),
        3
    );

    let samples = ok(&[
        "sample",
        "--model",
        s(&model_path),
        "--n",
        "7",
        "--seed",
        "1",
    ]);
    let rows = parse_table(&samples);
    assert_eq!(rows.len(), 7);
    assert!(rows
        .iter()
        .all(|r| r.len() == 2 && r.iter().all(|v| v.is_finite())));
    assert_eq!(
        samples,
        ok(&[
            "sample",
            "--model",
            s(&model_path),
            "--n",
            "7",
            "--seed",
            "1"
        ])
    );
    assert_ne!(
        samples,
        ok(&[
            "sample",
            "--model",
            s(&model_path),
            "--n",
            "7",
            "--seed",
            "2"
        ])
    );

    let grid_path = dir.path().join("grid.csv");
    ok(&[
        "grid",
        "--model",
        s(&model_path),
        "--resolution",
        "20",
        "--out",
        s(&grid_path),
    ]);
    let grid = parse_table(&std::fs::read_to_string(&grid_path).unwrap());
    assert_eq!(grid.len(), 400);
    assert!(grid
        .iter()
        .all(|r| r.len() == 3 && r[2].is_finite() && r[2] > 0.0));
}

#[test]
fn training_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train",
            "--toy",
            "half-moons",
            "--layers",
            "2",
            "--epochs",
            "3",
            "--batch",
            "50",
            "--nonlinearity",
            "st:1:0.1",
            "--base",
            "sech",
            "--seed",
            "11",
            "--out",
            s(&out),
        ]);
        (
            std::fs::read(out.join("model.bin")).unwrap(),
            std::fs::read_to_string(out.join("metrics.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn grid_on_identity_model() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.bin");
    model::io::save(&Network::identity(2, 1), &model_path).unwrap();
    let out = ok(&[
        "grid",
        "--model",
        s(&model_path),
        "--xmin",
        "-1",
        "--xmax",
        "1",
        "--ymin",
        "-1",
        "--ymax",
        "1",
        "--resolution",
        "1",
    ]);
    let rows = parse_table(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][..2], &[0.0, 0.0]);
    assert!((rows[0][2] - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert!((rows[0][2] - 0.159_154_9).abs() < 1e-7);

    let model3 = dir.path().join("m3.bin");
    model::io::save(&Network::identity(3, 1), &model3).unwrap();
    let out = relgrad(&["grid", "--model", s(&model3), "--resolution", "4"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_flavor_bench_table() {
    let out = relgrad(&[
        "bench",
        "--dims",
        "8,16",
        "--batch",
        "5",
        "--reps",
        "3",
        "--flavors",
        "relative",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dim,flavor,mean_s,min_s"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 4 && r[1] == "relative"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slope relative"));
}

#[test]
fn delimited_data_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.tsv");
    let mut text = String::new();
    for i in 0..60 {
        let t = i as f64 / 10.0;
        text += &format!("{}\t{}\n", 100.0 + t.sin() * 5.0, 0.01 * t.cos());
    }
    std::fs::write(&csv, text).unwrap();
    let run = dir.path().join("run");
    let report = ok(&[
        "train",
        "--data",
        s(&csv),
        "--delimiter",
        "\t",
        "--layers",
        "2",
        "--epochs",
        "5",
        "--seed",
        "2",
        "--no-bias",
        "--out",
        s(&run),
    ]);
    let std_ll = field(&report, "test_log_likelihood");
    let raw_ll = field(&report, "raw_test_log_likelihood");
    let st = relgrad_core::data::Standardization::load(run.join("standardization.json")).unwrap();
    assert!((raw_ll - (std_ll - st.log_scale())).abs() < 1e-12);
    let net = model::io::load(run.join("model.bin")).unwrap();
    assert!(!net.use_bias());

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,x\n").unwrap();
    let out = relgrad(&["train", "--data", s(&bad), "--out", s(&run)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
}
