//! Seeded synthetic traces alternating between an I/O-heavy phase (many
//! syscalls, low CPU) and a CPU-heavy phase (few syscalls, high CPU).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, HostInfo, IngestError, SyscallEvent, TelemetrySample, Timestamp};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Io,
    Cpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    /// Mean syscalls per second.
    pub rate: f64,
    pub names: Vec<String>,
    pub cpu_mean: f64,
    pub cpu_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_windows: usize,
    pub dt: f64,
    /// Per-window probability of switching phase.
    pub switch_prob: f64,
    pub io: PhaseProfile,
    pub cpu: PhaseProfile,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let names = |ns: &[&str]| ns.iter().map(|s| s.to_string()).collect();
        SynthConfig {
            n_windows: 2000,
            dt: 1.0,
            switch_prob: 0.05,
            io: PhaseProfile {
                rate: 200.0,
                names: names(&["read", "write", "poll", "ioctl"]),
                cpu_mean: 0.10,
                cpu_std: 0.02,
            },
            cpu: PhaseProfile {
                rate: 2.0,
                names: names(&["brk", "mmap", "futex"]),
                cpu_mean: 0.90,
                cpu_std: 0.02,
            },
            seed: 0,
        }
    }
}

/// Emitted trace start, seconds since epoch.
pub const START_SECS: i64 = 1_600_000_000;
pub const PID: u32 = 4242;
const RSS_BYTES: u64 = 64 * 1024 * 1024;

/// Host constants written into synthetic telemetry headers.
pub const HOST: HostInfo = HostInfo {
    ticks_per_second: 100,
    page_size: 4096,
    cores: 1,
};

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if !(self.switch_prob > 0.0 && self.switch_prob < 1.0) {
            return bad(format!(
                "switch_prob must lie in (0, 1), got {}",
                self.switch_prob
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) || (self.dt * 1e6).round() < 1.0 {
            return bad(format!("dt must be at least 1µs, got {}", self.dt));
        }
        for (label, p) in [("io", &self.io), ("cpu", &self.cpu)] {
            if p.names.is_empty() || p.names.iter().any(|n| !ingest::is_syscall_name(n)) {
                return bad(format!("{label} phase needs valid syscall names"));
            }
            if !(p.rate.is_finite() && p.rate >= 0.0)
                || !(p.cpu_std.is_finite() && p.cpu_std >= 0.0)
            {
                return bad(format!("{label} phase rate and std must be non-negative"));
            }
            if !(0.0..=1.0).contains(&p.cpu_mean) {
                return bad(format!("{label} phase cpu_mean must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn profile(&self, phase: Phase) -> &PhaseProfile {
        match phase {
            Phase::Io => &self.io,
            Phase::Cpu => &self.cpu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub events: Vec<SyscallEvent>,
    pub telemetry: Vec<TelemetrySample>,
    pub host: HostInfo,
    /// Ground truth per window.
    pub phases: Vec<Phase>,
    pub cpu_util: Vec<f64>,
}

/// Generates a trace from a two-state Markov chain over phases.
///
/// Per window: a Poisson number of events with names uniform over the
/// phase's set and microsecond timestamps uniform inside the window, and a
/// clamped-normal utilization integrated into the cumulative jiffy counter.
/// Telemetry is sampled at every window boundary.
pub fn generate(config: &SynthConfig) -> Result<SyntheticTrace, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dt_us = (config.dt * 1e6).round() as i64;
    let t0 = START_SECS * 1_000_000;
    let ticks_per_window = HOST.ticks_per_second as f64 * config.dt * f64::from(HOST.cores);

    let mut phase = if rng.random::<bool>() {
        Phase::Io
    } else {
        Phase::Cpu
    };
    let mut phases = Vec::with_capacity(config.n_windows);
    let mut cpu_util = Vec::with_capacity(config.n_windows);
    let mut events = Vec::new();
    let mut telemetry = Vec::with_capacity(config.n_windows + 1);
    let mut jiffies = 0.0;

    let sample = |k: usize, jiffies: f64| TelemetrySample {
        ts: Timestamp::from_micros(t0 + k as i64 * dt_us),
        pgid: i64::from(PID),
        cpu_jiffies: jiffies,
        rss_bytes: RSS_BYTES,
    };
    telemetry.push(sample(0, 0.0));

    for k in 0..config.n_windows {
        if k > 0 && rng.random::<f64>() < config.switch_prob {
            phase = match phase {
                Phase::Io => Phase::Cpu,
                Phase::Cpu => Phase::Io,
            };
        }
        let prof = config.profile(phase);

        let lambda = prof.rate * config.dt;
        let count = if lambda > 0.0 {
            Poisson::new(lambda).map_or(0, |d| d.sample(&mut rng) as usize)
        } else {
            0
        };
        let start = t0 + k as i64 * dt_us;
        let mut offsets: Vec<i64> = (0..count).map(|_| rng.random_range(0..dt_us)).collect();
        offsets.sort_unstable();
        for off in offsets {
            let name = &prof.names[rng.random_range(0..prof.names.len())];
            events.push(SyscallEvent {
                ts: Timestamp::from_micros(start + off),
                pid: PID,
                name: name.clone(),
            });
        }

        let util = if prof.cpu_std > 0.0 {
            Normal::new(prof.cpu_mean, prof.cpu_std).map_or(prof.cpu_mean, |d| d.sample(&mut rng))
        } else {
            prof.cpu_mean
        }
        .clamp(0.0, 1.0);
        jiffies += util * ticks_per_window;
        telemetry.push(sample(k + 1, jiffies));
        phases.push(phase);
        cpu_util.push(util);
    }

    Ok(SyntheticTrace {
        events,
        telemetry,
        host: HOST,
        phases,
        cpu_util,
    })
}

impl SyntheticTrace {
    /// Writes `events.jsonl` and `telemetry.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(PathBuf, PathBuf), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let events_path = dir.join("events.jsonl");
        let telemetry_path = dir.join("telemetry.csv");
        let f = File::create(&events_path).map_err(io(&events_path))?;
        ingest::write_events(BufWriter::new(f), &self.events)?;
        let f = File::create(&telemetry_path).map_err(io(&telemetry_path))?;
        ingest::write_telemetry(BufWriter::new(f), &self.host, &self.telemetry)?;
        Ok((events_path, telemetry_path))
    }
}
