use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airsurrogate"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

const SMALL: &[&str] = &[
    "--set", "graph.stations=4",
    "--set", "dataset.steps=240",
    "--set", "dataset.history=6",
    "--set", "dataset.horizon=4",
    "--set", "dataset.stride=4",
    "--set", "model.hidden=6",
    "--set", "train.max_epochs=2",
    "--set", "train.lr=0.001",
];

fn with(base: &[&str], extra: &[&'static str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn data_train_evaluate_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &args(&with(&["gen-data", "-o", "data"], SMALL)));
    for f in ["stations.csv", "series.csv", "resolved_config.toml"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    let files = ["--stations", "data/stations.csv", "--series", "data/series.csv"];
    let train = with(&["train", "-o", "run"], SMALL);
    ok(d, &args(&[train, with(&[], &files)].concat()));
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "epoch,split,l1,dic_spatial,dic_temporal,total");
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    let eval = with(&["evaluate", "--checkpoint", "run/checkpoint.bin", "-o", "eval"], SMALL);
    ok(d, &args(&[eval, with(&[], &files)].concat()));
    let curve = std::fs::read_to_string(d.join("eval/leadtime_curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "lead_hour,model,pollutant,mae,rmse");
    assert!(d.join("eval/report.json").exists() && d.join("eval/report.csv").exists());

    let fc = with(&["forecast", "--checkpoint", "run/checkpoint.bin", "-o", "fc"], SMALL);
    ok(d, &args(&[fc, with(&[], &files)].concat()));
    let rows = std::fs::read_to_string(d.join("fc/forecast.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 4);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(d, &args(&with(&["train", "-o", out, "--seed", "5"], SMALL)));
    }
    for f in ["checkpoint.bin", "metrics.csv", "resolved_config.toml"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn build_graph_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["build-graph", "--set", "graph.stations=6"]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/graph_summary.json")).unwrap()).unwrap();
    assert_eq!(json["stations"], 6);
    let lap = std::fs::read_to_string(dir.path().join("out/laplacian.csv")).unwrap();
    assert_eq!(lap.lines().count(), 7);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["gradcheck"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradcheck passed"));
}

#[test]
fn sweep_writes_status_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let extra = ["--set", "sweep.cells=[\"full\",\"persistence\"]", "--set", "sweep.seeds=[1]", "--jobs", "2"];
    ok(dir.path(), &args(&with(&["sweep"], &[SMALL, &extra].concat())));
    let status = std::fs::read_to_string(dir.path().join("out/sweep_status.csv")).unwrap();
    assert_eq!(status.lines().count(), 3);
    assert!(dir.path().join("out/leadtime_curve.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |a: &[&str]| run(d, a).status.code().unwrap();
    assert_eq!(code(&["train", "--set", "train.learning_rate=1"]), 1);
    assert_eq!(code(&["train", "--set", "model.hidden=0"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["train", "--config", "missing.toml"]), 3);
    assert_eq!(code(&["evaluate", "--checkpoint", "missing.bin"]), 3);
    std::fs::write(d.join("bad.bin"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["evaluate", "--checkpoint", "bad.bin"]), 3);
    // Later overrides win, so the divergent step size goes last.
    let diverge = with(&["train"], &[SMALL, &["--set", "train.lr=1e200", "--set", "train.clip_norm=0"]].concat());
    assert_eq!(code(&args(&diverge)), 2);
}
