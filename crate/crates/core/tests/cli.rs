use std::path::Path;
use std::process::{Command, Output};

fn sysforecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysforecast"))
        .args(args)
        .output()
        .unwrap()
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let out = sysforecast(&["synth", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    let out = sysforecast(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(sysforecast(&["--help"]).status.code(), Some(0));
}

#[test]
fn oversized_cell_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let out = sysforecast(&["synth", "--windows", "60", "--out", d]);
    assert!(out.status.success(), "{}", text(&out));
    let out = sysforecast(&["embed", "--out", d, "--dim", "4"]);
    assert!(out.status.success(), "{}", text(&out));
    // 60 windows leave 12 test windows; (history 10, horizon 5) needs 14.
    let out = sysforecast(&["eval", "--out", d, "--horizons", "1,5", "--histories", "10"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(
        text(&out).contains("history=10, horizon=5"),
        "{}",
        text(&out)
    );
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let steps: [&[&str]; 4] = [
        &["synth", "--windows", "120", "--seed", "3"],
        &["embed", "--dim", "4"],
        &["train", "--hidden", "4", "--history", "3", "--epochs", "2"],
        &[
            "eval",
            "--hidden",
            "4",
            "--epochs",
            "1",
            "--horizons",
            "1,2",
            "--histories",
            "1,3",
            "--sequential",
        ],
    ];
    for step in steps {
        let mut args = step.to_vec();
        args.extend(["--out", d]);
        let out = sysforecast(&args);
        assert!(out.status.success(), "{step:?}: {}", text(&out));
    }
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("history,horizon,rmse,baseline_rmse,n")
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "# small run\nn_windows = 150\ndim = 4\nhidden = 4\nepochs = 2\nhistories = 1, 3\ntelemetry = cpu_util, syscall_rate\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = sysforecast(&[
        "pipeline",
        "--config",
        p(&cfg),
        "--history",
        "3",
        "--out",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    for name in [
        "events.jsonl",
        "telemetry.csv",
        "embeddings.json",
        "model.json",
        "grid.csv",
        "grid.svg",
    ] {
        let meta = std::fs::metadata(out_dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(meta.len() > 0, "{name} is empty");
    }
    let svg = std::fs::read_to_string(out_dir.join("grid.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    let model: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("model.json")).unwrap()).unwrap();
    // Two telemetry columns plus a 4-dimensional embedding.
    assert_eq!(model["input_size"], 6);
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = sysforecast(&["embed", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}
