//! Live sampling of a process group from procfs, and a driver that runs a
//! command under `strace -f -ttt` while sampling its group.
//!
//! Everything downstream consumes the canonical files this module writes,
//! so none of the modelling code depends on a live host.

use std::collections::HashMap;
use std::env;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ingest::{
    self, aggregate_group, parse_proc_stat, HostInfo, IngestError, ProcStat, TelemetrySample,
    Timestamp,
};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("no process table at {0}")]
    Unsupported(PathBuf),
    #[error("cannot spawn {command:?}: {reason}")]
    SpawnFailure { command: String, reason: String },
    #[error("tracer {0:?} not found in PATH")]
    TracerMissing(String),
    #[error("invalid collector config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CollectError {
    let path = path.to_path_buf();
    move |source| CollectError::Io { path, source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorConfig {
    /// Seconds between telemetry samples.
    pub sample_interval: f64,
    /// Stop after this many seconds; `None` runs until the command exits.
    pub duration: Option<f64>,
    pub host: HostInfo,
    pub proc_root: PathBuf,
    pub tracer: String,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            sample_interval: 1.0,
            duration: None,
            host: host_info(),
            proc_root: PathBuf::from("/proc"),
            tracer: "strace".into(),
        }
    }
}

impl CollectorConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(CollectError::BadConfig(
                "sample_interval must be positive".into(),
            ));
        }
        if matches!(self.duration, Some(d) if !(d >= 0.0)) {
            return Err(CollectError::BadConfig(
                "duration must be non-negative".into(),
            ));
        }
        if self.host.ticks_per_second == 0 || self.host.cores == 0 || self.host.page_size == 0 {
            return Err(CollectError::BadConfig(format!(
                "bad host constants {:?}",
                self.host
            )));
        }
        Ok(())
    }
}

/// Clock ticks per second, page size and online cores of this host.
#[cfg(unix)]
pub fn host_info() -> HostInfo {
    // SAFETY: sysconf has no preconditions.
    let (ticks, page, cores) = unsafe {
        (
            libc::sysconf(libc::_SC_CLK_TCK),
            libc::sysconf(libc::_SC_PAGESIZE),
            libc::sysconf(libc::_SC_NPROCESSORS_ONLN),
        )
    };
    let d = HostInfo::default();
    HostInfo {
        ticks_per_second: if ticks > 0 {
            ticks as u64
        } else {
            d.ticks_per_second
        },
        page_size: if page > 0 { page as u64 } else { d.page_size },
        cores: if cores > 0 { cores as u32 } else { d.cores },
    }
}

#[cfg(not(unix))]
pub fn host_info() -> HostInfo {
    HostInfo::default()
}

/// Stat records of every process whose `pgrp` is `pgid`, in pid order.
/// Processes that vanish or change mid-scan are skipped.
pub fn scan_group(proc_root: &Path, pgid: i64) -> Result<Vec<ProcStat>, CollectError> {
    let entries = match fs::read_dir(proc_root) {
        Ok(e) => e,
        Err(_) => return Err(CollectError::Unsupported(proc_root.to_path_buf())),
    };
    let mut members = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<i64>().ok()) else {
            continue;
        };
        let Ok(text) = fs::read_to_string(entry.path().join("stat")) else {
            continue;
        };
        match parse_proc_stat(&text) {
            Ok(stat) if stat.pgrp == pgid && stat.pid == pid => members.push(stat),
            _ => {}
        }
    }
    members.sort_by_key(|s| s.pid);
    Ok(members)
}

/// Pids currently in process group `pgid`.
pub fn enumerate_group(proc_root: &Path, pgid: i64) -> Result<Vec<i64>, CollectError> {
    Ok(scan_group(proc_root, pgid)?
        .into_iter()
        .map(|s| s.pid)
        .collect())
}

/// One aggregated sample of the group, stamped with the current wall clock.
pub fn sample_group(pgid: i64, config: &CollectorConfig) -> Result<TelemetrySample, CollectError> {
    sample_group_excluding(pgid, config, &[])
}

fn sample_group_excluding(
    pgid: i64,
    config: &CollectorConfig,
    exclude: &[i64],
) -> Result<TelemetrySample, CollectError> {
    let mut stats = scan_group(&config.proc_root, pgid)?;
    stats.retain(|s| !exclude.contains(&s.pid));
    let ts = Timestamp::now();
    Ok(aggregate_group(&stats, ts, pgid, config.host.page_size)?)
}

/// Keeps the group's CPU counter monotone across member exits: each pid
/// contributes the last jiffies it was seen with, even after it is gone.
#[derive(Debug, Default, Clone)]
pub struct GroupAccumulator {
    last_jiffies: HashMap<i64, u64>,
}

impl GroupAccumulator {
    pub fn observe(
        &mut self,
        stats: &[ProcStat],
        ts: Timestamp,
        pgid: i64,
        page_size: u64,
    ) -> TelemetrySample {
        for s in stats {
            let j = self.last_jiffies.entry(s.pid).or_default();
            *j = (*j).max(s.utime + s.stime);
        }
        TelemetrySample {
            ts,
            pgid,
            cpu_jiffies: self.last_jiffies.values().sum::<u64>() as f64,
            rss_bytes: stats.iter().map(|s| s.rss).sum::<u64>() * page_size,
        }
    }
}

/// Searches `PATH` for an executable, the way a shell would.
pub fn find_executable(name: &str) -> Option<PathBuf> {
    let candidate = Path::new(name);
    if name.contains('/') {
        return is_executable(candidate).then(|| candidate.to_path_buf());
    }
    env::var_os("PATH").and_then(|paths| {
        env::split_paths(&paths)
            .map(|dir| dir.join(name))
            .find(|p| is_executable(p))
    })
}

fn is_executable(path: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::metadata(path).is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
    }
    #[cfg(not(unix))]
    {
        path.is_file()
    }
}

/// Paths written by [`run_collection`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionFiles {
    pub events: PathBuf,
    pub telemetry: PathBuf,
    pub raw_trace: PathBuf,
}

/// Runs `command` under `strace -f -ttt` in a fresh process group and
/// samples the group every `sample_interval` until it exits or `duration`
/// elapses. The tracer itself leads the group and is excluded from the
/// telemetry.
#[cfg(unix)]
pub fn run_collection(
    command: &[String],
    config: &CollectorConfig,
    out_dir: &Path,
) -> Result<CollectionFiles, CollectError> {
    use std::os::unix::process::CommandExt;
    use std::process::{Command, Stdio};

    config.validate()?;
    let (program, _) = command
        .split_first()
        .ok_or_else(|| CollectError::SpawnFailure {
            command: String::new(),
            reason: "empty command".into(),
        })?;
    if find_executable(program).is_none() {
        return Err(CollectError::SpawnFailure {
            command: program.clone(),
            reason: "not found or not executable".into(),
        });
    }
    let tracer = find_executable(&config.tracer)
        .ok_or_else(|| CollectError::TracerMissing(config.tracer.clone()))?;
    if !config.proc_root.is_dir() {
        return Err(CollectError::Unsupported(config.proc_root.clone()));
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let raw_trace = out_dir.join("events.raw");
    let mut child = Command::new(&tracer)
        .args(["-f", "-ttt", "-o"])
        .arg(&raw_trace)
        .arg("--")
        .args(command)
        .stdin(Stdio::null())
        .process_group(0)
        .spawn()
        .map_err(|e| CollectError::SpawnFailure {
            command: tracer.display().to_string(),
            reason: e.to_string(),
        })?;
    let tracer_pid = i64::from(child.id());
    let pgid = tracer_pid;

    let started = Instant::now();
    let limit = config.duration.map(Duration::from_secs_f64);
    let interval = Duration::from_secs_f64(config.sample_interval);
    let mut samples: Vec<TelemetrySample> = Vec::new();
    let mut acc = GroupAccumulator::default();
    let mut next = started;

    loop {
        let exited = child.try_wait().map_err(io_err(&tracer))?.is_some();
        if exited {
            break;
        }
        if limit.is_some_and(|l| started.elapsed() >= l) {
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
            }
            let _ = child.wait();
            break;
        }
        let now = Instant::now();
        if now >= next {
            let mut stats = scan_group(&config.proc_root, pgid)?;
            stats.retain(|s| s.pid != tracer_pid);
            let s = acc.observe(&stats, Timestamp::now(), pgid, config.host.page_size);
            if samples.last().is_none_or(|prev| s.ts > prev.ts) {
                samples.push(s);
            }
            next += interval;
        }
        let wake = next.min(now + Duration::from_millis(20));
        std::thread::sleep(wake.saturating_duration_since(Instant::now()));
    }

    let parsed = match File::open(&raw_trace) {
        Ok(f) => ingest::read_strace(BufReader::new(f))?,
        Err(_) => ingest::ParsedStream::default(),
    };
    let events = out_dir.join("events.jsonl");
    let telemetry = out_dir.join("telemetry.csv");
    let f = File::create(&events).map_err(io_err(&events))?;
    ingest::write_events(BufWriter::new(f), &parsed.events)?;
    let f = File::create(&telemetry).map_err(io_err(&telemetry))?;
    ingest::write_telemetry(BufWriter::new(f), &config.host, &samples)?;
    Ok(CollectionFiles {
        events,
        telemetry,
        raw_trace,
    })
}

#[cfg(not(unix))]
pub fn run_collection(
    _command: &[String],
    config: &CollectorConfig,
    _out_dir: &Path,
) -> Result<CollectionFiles, CollectError> {
    Err(CollectError::Unsupported(config.proc_root.clone()))
}
