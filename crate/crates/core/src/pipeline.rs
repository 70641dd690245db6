//! Layered run settings and the stages the CLI chains together:
//! synthesize, embed, train, evaluate.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::collector::{self, CollectError, CollectorConfig};
use crate::embedding::{self, EmbedError, EmbeddingTable, SgnsConfig};
use crate::eval::{self, CellResult, EvalError, EvalGrid, Split};
use crate::ingest::{self, HostInfo, IngestError, SyscallEvent, TelemetrySample};
use crate::lstm::{self, LstmError, TrainConfig};
use crate::par::Execution;
use crate::synth::{self, SynthConfig, SynthError};
use crate::window::{self, TelemetryFeature, Window, WindowError};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] LstmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { path, source }
}

/// Every tunable of a run. Defaults come from each module; a config file
/// overrides defaults and command-line flags override the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dt: f64,
    /// Telemetry columns fed to the predictor ahead of the embedding.
    pub telemetry: Vec<TelemetryFeature>,
    pub sgns: SgnsConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub train_fraction: f64,
    pub horizons: Vec<usize>,
    pub histories: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    /// Directory holding the inputs of a stage; defaults to `out`.
    pub input: Option<PathBuf>,
    pub sample_interval: f64,
    pub duration: Option<f64>,
    pub parallel: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dt: 1.0,
            telemetry: TelemetryFeature::ALL.to_vec(),
            sgns: SgnsConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            train_fraction: 0.8,
            horizons: vec![1, 2, 3, 5],
            histories: vec![1, 5, 20],
            seed: 1,
            out: PathBuf::from("out"),
            input: None,
            sample_interval: 1.0,
            duration: None,
            parallel: true,
        }
    }
}

/// Keys accepted by [`Settings::set`].
pub const KEYS: &[&str] = &[
    "dt",
    "telemetry",
    "dim",
    "context_radius",
    "negatives",
    "embed_epochs",
    "embed_learning_rate",
    "min_count",
    "hidden",
    "history",
    "horizon",
    "epochs",
    "learning_rate",
    "batch_size",
    "train_fraction",
    "horizons",
    "histories",
    "n_windows",
    "switch_prob",
    "io_rate",
    "cpu_rate",
    "seed",
    "out",
    "input",
    "sample_interval",
    "duration",
    "parallel",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_features(key: &str, value: &str) -> Result<Vec<TelemetryFeature>, ConfigError> {
    let bad = |reason: String| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason,
    };
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    let mut list = Vec::new();
    for name in value.split(',').map(str::trim) {
        let f = TelemetryFeature::from_name(name).ok_or_else(|| {
            bad(format!(
                "unknown feature {name:?}; expected cpu_util, rss_frac, syscall_rate or none"
            ))
        })?;
        if list.contains(&f) {
            return Err(bad(format!("{name} listed twice")));
        }
        list.push(f);
    }
    Ok(list)
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    let list = value
        .split(',')
        .map(|v| parse::<usize>(key, v.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected a comma-separated list of positive integers".into(),
        });
    }
    Ok(list)
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "dt" => self.dt = parse(key, v)?,
            "telemetry" => self.telemetry = parse_features(key, v)?,
            "dim" => self.sgns.dim = parse(key, v)?,
            "context_radius" => self.sgns.context_radius = parse(key, v)?,
            "negatives" => self.sgns.negatives = parse(key, v)?,
            "embed_epochs" => self.sgns.epochs = parse(key, v)?,
            "embed_learning_rate" => self.sgns.learning_rate = parse(key, v)?,
            "min_count" => self.sgns.min_count = parse(key, v)?,
            "hidden" => self.train.hidden = parse(key, v)?,
            "history" => self.train.history = parse(key, v)?,
            "horizon" => self.train.horizon = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "horizons" => self.horizons = parse_list(key, v)?,
            "histories" => self.histories = parse_list(key, v)?,
            "n_windows" => self.synth.n_windows = parse(key, v)?,
            "switch_prob" => self.synth.switch_prob = parse(key, v)?,
            "io_rate" => self.synth.io.rate = parse(key, v)?,
            "cpu_rate" => self.synth.cpu.rate = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "input" => self.input = Some(PathBuf::from(v)),
            "sample_interval" => self.sample_interval = parse(key, v)?,
            "duration" => self.duration = Some(parse(key, v)?),
            "parallel" => self.parallel = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_path_buf(),
                line: n + 1,
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    pub fn input_dir(&self) -> &Path {
        self.input.as_deref().unwrap_or(&self.out)
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Per-stage seeds: the base seed plus the stage index.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage as u64)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            dt: self.dt,
            seed: self.stage_seed(Stage::Synth),
            ..self.synth.clone()
        }
    }

    pub fn sgns_config(&self) -> SgnsConfig {
        SgnsConfig {
            seed: self.stage_seed(Stage::Embed),
            ..self.sgns.clone()
        }
    }

    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(stage),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth = 0,
    Embed = 1,
    Train = 2,
    Eval = 3,
}

/// Canonical trace files loaded from a directory.
#[derive(Debug, Clone)]
pub struct Trace {
    pub events: Vec<SyscallEvent>,
    pub telemetry: Vec<TelemetrySample>,
    pub host: HostInfo,
}

pub fn load_trace(dir: &Path) -> Result<Trace, PipelineError> {
    let ev_path = dir.join(EVENTS_FILE);
    let tel_path = dir.join(TELEMETRY_FILE);
    let events = ingest::read_events(BufReader::new(
        File::open(&ev_path).map_err(io_err(&ev_path))?,
    ))?;
    let (host, telemetry) = ingest::read_telemetry(BufReader::new(
        File::open(&tel_path).map_err(io_err(&tel_path))?,
    ))?;
    Ok(Trace {
        events,
        telemetry,
        host,
    })
}

pub fn load_windows(dir: &Path, dt: f64) -> Result<Vec<Window>, PipelineError> {
    let trace = load_trace(dir)?;
    Ok(window::discretize(
        &trace.events,
        &trace.telemetry,
        dt,
        &trace.host,
    )?)
}

pub fn load_embeddings(dir: &Path) -> Result<EmbeddingTable, PipelineError> {
    let path = dir.join(EMBEDDINGS_FILE);
    let f = File::open(&path).map_err(io_err(&path))?;
    Ok(EmbeddingTable::read_json(BufReader::new(f))?)
}

pub fn run_synth(settings: &Settings) -> Result<synth::SyntheticTrace, PipelineError> {
    let trace = synth::generate(&settings.synth_config())?;
    trace.write_files(&settings.out)?;
    Ok(trace)
}

pub fn run_collect(settings: &Settings, command: &[String]) -> Result<(), PipelineError> {
    let cfg = CollectorConfig {
        sample_interval: settings.sample_interval,
        duration: settings.duration,
        ..CollectorConfig::default()
    };
    collector::run_collection(command, &cfg, &settings.out)?;
    Ok(())
}

pub fn run_embed(settings: &Settings) -> Result<embedding::TrainedEmbedding, PipelineError> {
    let windows = load_windows(settings.input_dir(), settings.dt)?;
    let trained = embedding::train_skipgram(&window::corpus(&windows), &settings.sgns_config())?;
    fs::create_dir_all(&settings.out).map_err(io_err(&settings.out))?;
    let path = settings.out.join(EMBEDDINGS_FILE);
    let f = File::create(&path).map_err(io_err(&path))?;
    trained.table.write_json(BufWriter::new(f))?;
    Ok(trained)
}

/// Trains the single `(history, horizon)` model on the train split, scores
/// it on the test split, and writes `model.json`.
pub fn run_train(settings: &Settings) -> Result<CellResult, PipelineError> {
    let dir = settings.input_dir();
    let windows = load_windows(dir, settings.dt)?;
    let table = load_embeddings(dir)?;
    let features = window::build_features(&windows, &table, &settings.telemetry);
    let cpu: Vec<f64> = windows.iter().map(|w| w.cpu_util).collect();
    let cfg = settings.train_config(Stage::Train);
    let split = Split::new(windows.len(), settings.train_fraction)?;
    let cell = eval::evaluate_cell(&features, &cpu, &split, &cfg, settings.execution())?;

    fs::create_dir_all(&settings.out).map_err(io_err(&settings.out))?;
    let path = settings.out.join(MODEL_FILE);
    let f = File::create(&path).map_err(io_err(&path))?;
    lstm::write_model(BufWriter::new(f), &cell.params, &cfg)?;
    Ok(cell)
}

pub fn run_eval(settings: &Settings) -> Result<EvalGrid, PipelineError> {
    let dir = settings.input_dir();
    let windows = load_windows(dir, settings.dt)?;
    let table = load_embeddings(dir)?;
    let grid = eval::grid_eval(
        &windows,
        &table,
        &settings.telemetry,
        &settings.horizons,
        &settings.histories,
        settings.train_fraction,
        &settings.train_config(Stage::Eval),
        settings.execution(),
    )?;
    eval::emit_outputs(&grid, &settings.out)?;
    Ok(grid)
}

/// Outputs of a full synthetic run.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub embed_loss: Vec<f64>,
    pub model: CellResult,
    pub grid: EvalGrid,
}

/// synth → embed → train → eval in one directory, reading every
/// intermediate product back from disk.
pub fn run_pipeline(settings: &Settings) -> Result<PipelineReport, PipelineError> {
    let staged = Settings {
        input: Some(settings.out.clone()),
        ..settings.clone()
    };
    run_synth(&staged)?;
    let embedded = run_embed(&staged)?;
    let model = run_train(&staged)?;
    let grid = run_eval(&staged)?;
    Ok(PipelineReport {
        embed_loss: embedded.epoch_loss,
        model,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut s = Settings::default();
        s.apply_text(
            "# comment\nhidden = 8\nhorizons = 1, 3\n\nseed=7 # trailing\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(s.train.hidden, 8);
        assert_eq!(s.horizons, vec![1, 3]);
        assert_eq!(s.seed, 7);
        s.set("hidden", "4").unwrap();
        assert_eq!(s.train.hidden, 4);
    }

    #[test]
    fn telemetry_selection() {
        let mut s = Settings::default();
        assert_eq!(s.telemetry, TelemetryFeature::ALL);
        s.set("telemetry", "syscall_rate, cpu_util").unwrap();
        assert_eq!(
            s.telemetry,
            [TelemetryFeature::SyscallRate, TelemetryFeature::CpuUtil]
        );
        s.set("telemetry", "none").unwrap();
        assert!(s.telemetry.is_empty());
        assert!(s.set("telemetry", "cpu_util,cpu_util").is_err());
        assert!(s.set("telemetry", "load").is_err());
    }

    #[test]
    fn unknown_key_is_error() {
        let mut s = Settings::default();
        assert!(matches!(
            s.apply_text("hiden = 8", Path::new("x")),
            Err(ConfigError::UnknownKey(k)) if k == "hiden"
        ));
        assert!(matches!(
            s.set("dim", "many"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            s.apply_text("just words", Path::new("x")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            s.set("horizons", "1,0"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn every_listed_key_is_settable() {
        let sample = |k: &str| match k {
            "out" | "input" => "dir",
            "horizons" | "histories" => "1,2",
            "parallel" => "false",
            "telemetry" => "cpu_util",
            _ => "1",
        };
        for key in KEYS {
            let mut s = Settings::default();
            s.set(key, sample(key))
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn stage_seeds_are_offsets() {
        let s = Settings {
            seed: 10,
            ..Settings::default()
        };
        assert_eq!(s.synth_config().seed, 10);
        assert_eq!(s.sgns_config().seed, 11);
        assert_eq!(s.train_config(Stage::Train).seed, 12);
        assert_eq!(s.train_config(Stage::Eval).seed, 13);
    }
}
