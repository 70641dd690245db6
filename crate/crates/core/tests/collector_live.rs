#![cfg(target_os = "linux")]

use std::fs::{self, File};
use std::io::BufReader;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::Instant;

use sysforecast::collector::{find_executable, run_collection, CollectError, CollectorConfig};
use sysforecast::ingest::{read_events, read_telemetry};

/// Stand-in for strace: writes one entry line to the `-o` file and runs the
/// command as its own child, so the group holds a tracer and a tracee.
fn fake_tracer(dir: &Path) -> String {
    let path = dir.join("fake-strace");
    fs::write(
        &path,
        "#!/bin/sh\nout=\"$4\"\nshift 5\n\
         printf '%s  %s.000000 nanosleep({tv_sec=2, tv_nsec=0}, NULL) = 0\\n' $$ \"$(date +%s)\" > \"$out\"\n\
         \"$@\"\n",
    )
    .unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path.display().to_string()
}

fn argv(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

fn check_files(out: &Path) -> (usize, usize) {
    let events = read_events(BufReader::new(
        File::open(out.join("events.jsonl")).unwrap(),
    ))
    .unwrap();
    let (host, rows) = read_telemetry(BufReader::new(
        File::open(out.join("telemetry.csv")).unwrap(),
    ))
    .unwrap();
    assert!(host.ticks_per_second > 0 && host.cores > 0);
    assert!(rows.windows(2).all(|w| w[0].ts < w[1].ts));
    assert!(rows
        .windows(2)
        .all(|w| w[0].cpu_jiffies <= w[1].cpu_jiffies));
    (events.len(), rows.len())
}

#[test]
fn sleep_is_sampled_every_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig {
        sample_interval: 0.25,
        tracer: fake_tracer(dir.path()),
        ..CollectorConfig::default()
    };
    let out = dir.path().join("run");
    run_collection(&argv(&["/bin/sleep", "2"]), &cfg, &out).unwrap();
    let (events, rows) = check_files(&out);
    assert_eq!(events, 1);
    assert!((6..=10).contains(&rows), "{rows} rows");
}

#[test]
fn zero_duration_stops_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig {
        duration: Some(0.0),
        tracer: fake_tracer(dir.path()),
        ..CollectorConfig::default()
    };
    let out = dir.path().join("run");
    let started = Instant::now();
    run_collection(&argv(&["/bin/sleep", "30"]), &cfg, &out).unwrap();
    assert!(started.elapsed().as_secs_f64() < 5.0);
    let (_, rows) = check_files(&out);
    assert_eq!(rows, 0);
}

#[test]
fn duration_limit_kills_the_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig {
        sample_interval: 0.1,
        duration: Some(0.5),
        tracer: fake_tracer(dir.path()),
        ..CollectorConfig::default()
    };
    let out = dir.path().join("run");
    let started = Instant::now();
    run_collection(&argv(&["/bin/sleep", "30"]), &cfg, &out).unwrap();
    assert!(started.elapsed().as_secs_f64() < 5.0);
    let (_, rows) = check_files(&out);
    assert!(rows >= 2, "{rows} rows");
}

#[test]
fn missing_command_and_tracer_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig {
        tracer: "/nonexistent/strace".into(),
        ..CollectorConfig::default()
    };
    let err = run_collection(&argv(&["/nonexistent/cmd"]), &cfg, dir.path()).unwrap_err();
    assert!(matches!(err, CollectError::SpawnFailure { .. }), "{err}");
    let err = run_collection(&argv(&["/bin/true"]), &cfg, dir.path()).unwrap_err();
    assert!(matches!(err, CollectError::TracerMissing(_)), "{err}");
}

#[test]
fn real_strace_records_sleep() {
    if find_executable("strace").is_none() {
        eprintln!("strace not installed; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig::default();
    run_collection(&argv(&["/bin/sleep", "2"]), &cfg, dir.path()).unwrap();
    let (events, rows) = check_files(dir.path());
    assert!(events > 0);
    assert!(rows >= 2, "{rows} rows");
}
