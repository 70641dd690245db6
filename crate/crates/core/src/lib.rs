//! Forecasting a process group's CPU utilization from resource telemetry
//! and system-call traces.
//!
//! The pipeline: strace and procfs records are parsed into canonical
//! event and telemetry streams ([`ingest`], [`collector`]), cut into fixed
//! windows ([`window`]), syscalls are embedded with skip-gram and negative
//! sampling ([`embedding`]), and an LSTM ([`lstm`]) predicts utilization a
//! number of windows ahead. [`eval`] sweeps history and horizon against a
//! persistence baseline.

pub mod cli;
pub mod collector;
pub mod embedding;
pub mod eval;
pub mod ingest;
pub mod lstm;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod window;

pub use embedding::{EmbeddingTable, SgnsConfig, Vocabulary};
pub use eval::{EvalGrid, Split};
pub use ingest::{HostInfo, SyscallEvent, TelemetrySample, Timestamp};
pub use lstm::{LstmParams, Sample, TrainConfig};
pub use par::Execution;
pub use synth::SynthConfig;
pub use window::Window;
