//! Discretization of event and telemetry streams into fixed-length windows,
//! and assembly of per-window feature vectors.

use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::ingest::{HostInfo, SyscallEvent, TelemetrySample};

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("need at least 2 telemetry samples, got {0}")]
    InsufficientTelemetry(usize),
    #[error("window length must be positive, got {0}s")]
    BadInterval(f64),
    #[error("invalid host constants: {0}")]
    BadHost(String),
    #[error("telemetry timestamps must be strictly increasing")]
    UnsortedTelemetry,
}

/// Telemetry columns that can precede the embedding part of a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TelemetryFeature {
    CpuUtil,
    RssFrac,
    SyscallRate,
}

impl TelemetryFeature {
    pub const ALL: [TelemetryFeature; 3] = [
        TelemetryFeature::CpuUtil,
        TelemetryFeature::RssFrac,
        TelemetryFeature::SyscallRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TelemetryFeature::CpuUtil => "cpu_util",
            TelemetryFeature::RssFrac => "rss_frac",
            TelemetryFeature::SyscallRate => "syscall_rate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn value(self, w: &Window) -> f64 {
        match self {
            TelemetryFeature::CpuUtil => w.cpu_util,
            TelemetryFeature::RssFrac => w.rss_frac,
            TelemetryFeature::SyscallRate => scale_rate(w.syscall_rate),
        }
    }
}

/// Calls/second at which the scaled rate feature saturates.
pub const RATE_SATURATION: f64 = 10_000.0;

/// One fixed-length interval of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub cpu_util: f64,
    pub rss_frac: f64,
    /// Calls per second.
    pub syscall_rate: f64,
    /// Syscall names in timestamp order.
    pub names: Vec<String>,
}

/// Converts a window length in seconds to whole microseconds.
pub fn interval_micros(dt: f64) -> Result<i64, WindowError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(WindowError::BadInterval(dt));
    }
    let us = (dt * 1e6).round() as i64;
    if us <= 0 {
        return Err(WindowError::BadInterval(dt));
    }
    Ok(us)
}

/// Linear interpolation of a cumulative counter at `at` (micros).
/// Clamps to the end values outside the sampled range.
fn interpolate(
    samples: &[TelemetrySample],
    at: i64,
    value: impl Fn(&TelemetrySample) -> f64,
) -> f64 {
    let pos = samples.partition_point(|s| s.ts.as_micros() <= at);
    if pos == 0 {
        return value(&samples[0]);
    }
    let lo = &samples[pos - 1];
    if lo.ts.as_micros() == at || pos == samples.len() {
        return value(lo);
    }
    let hi = &samples[pos];
    let span = (hi.ts.as_micros() - lo.ts.as_micros()) as f64;
    let frac = (at - lo.ts.as_micros()) as f64 / span;
    value(lo) + frac * (value(hi) - value(lo))
}

/// Splits the trace into `[t0 + k·dt, t0 + (k+1)·dt)` windows, where `t0` is
/// the first telemetry timestamp. The trailing partial window is dropped, as
/// are events outside the covered range. Empty windows are kept.
pub fn discretize(
    events: &[SyscallEvent],
    telemetry: &[TelemetrySample],
    dt: f64,
    host: &HostInfo,
) -> Result<Vec<Window>, WindowError> {
    if telemetry.len() < 2 {
        return Err(WindowError::InsufficientTelemetry(telemetry.len()));
    }
    let dt_us = interval_micros(dt)?;
    if host.ticks_per_second == 0 || host.cores == 0 {
        return Err(WindowError::BadHost(format!("{host:?}")));
    }
    if telemetry.windows(2).any(|w| w[0].ts >= w[1].ts) {
        return Err(WindowError::UnsortedTelemetry);
    }

    let t0 = telemetry[0].ts.as_micros();
    let t_last = telemetry[telemetry.len() - 1].ts.as_micros();
    let n = ((t_last - t0) / dt_us) as usize;
    let dt_secs = dt_us as f64 / 1e6;

    let boundary = |k: usize| t0 + k as i64 * dt_us;
    let cpu_at: Vec<f64> = (0..=n)
        .map(|k| interpolate(telemetry, boundary(k), |s| s.cpu_jiffies))
        .collect();
    let rss_at: Vec<f64> = (0..=n)
        .map(|k| interpolate(telemetry, boundary(k), |s| s.rss_bytes as f64))
        .collect();

    let mut names: Vec<Vec<String>> = vec![Vec::new(); n];
    for ev in events {
        let off = ev.ts.as_micros() - t0;
        if off < 0 {
            continue;
        }
        let k = (off / dt_us) as usize;
        if k < n {
            names[k].push(ev.name.clone());
        }
    }

    let rss_mean: Vec<f64> = (0..n).map(|k| 0.5 * (rss_at[k] + rss_at[k + 1])).collect();
    let rss_max = rss_mean.iter().copied().fold(0.0, f64::max);
    let ticks = host.ticks_per_second as f64;
    let capacity = dt_secs * f64::from(host.cores);

    Ok(names
        .into_iter()
        .enumerate()
        .map(|(k, names)| {
            let delta = cpu_at[k + 1] - cpu_at[k];
            let cpu_util = ((delta / ticks) / capacity).clamp(0.0, 1.0);
            let rss_frac = if rss_max > 0.0 {
                (rss_mean[k] / rss_max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            Window {
                index: k,
                cpu_util,
                rss_frac,
                syscall_rate: names.len() as f64 / dt_secs,
                names,
            }
        })
        .collect())
}

/// Unclamped utilization for one window, exposed for checks on the
/// normalization itself.
pub fn raw_utilization(delta_jiffies: f64, dt: f64, host: &HostInfo) -> f64 {
    (delta_jiffies / host.ticks_per_second as f64) / (dt * f64::from(host.cores))
}

/// `log1p(rate) / log1p(RATE_SATURATION)`, clamped to `[0, 1]`.
pub fn scale_rate(rate: f64) -> f64 {
    (rate.max(0.0).ln_1p() / RATE_SATURATION.ln_1p()).clamp(0.0, 1.0)
}

/// The selected telemetry features, in the given order, followed by the mean
/// syscall embedding; one row per window.
pub fn build_features(
    windows: &[Window],
    table: &EmbeddingTable,
    telemetry: &[TelemetryFeature],
) -> Vec<Vec<f64>> {
    windows
        .iter()
        .map(|w| {
            let mut v = Vec::with_capacity(telemetry.len() + table.dim());
            v.extend(telemetry.iter().map(|f| f.value(w)));
            v.extend(table.embed_window(&w.names));
            v
        })
        .collect()
}

/// Window sentences for embedding training.
pub fn corpus(windows: &[Window]) -> Vec<Vec<String>> {
    windows.iter().map(|w| w.names.clone()).collect()
}
