//! Command-line front end. Exit codes: 0 success, 1 usage or config error,
//! 2 data or validation error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::pipeline::{self, ConfigError, PipelineError, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sysforecast",
    version,
    about = "Forecast process-group CPU utilization from telemetry and syscall traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// `key = value` settings file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Window length in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// LSTM hidden size.
    #[arg(long)]
    hidden: Option<usize>,
    /// Past windows fed to the model.
    #[arg(long)]
    history: Option<usize>,
    /// Windows ahead to predict.
    #[arg(long)]
    horizon: Option<usize>,
    /// LSTM training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Input directory (defaults to --out).
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
    /// Disable data-parallel evaluation.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args, Default)]
struct GridArgs {
    /// Comma-separated horizons for the sweep.
    #[arg(long)]
    horizons: Option<String>,
    /// Comma-separated history lengths for the sweep.
    #[arg(long)]
    histories: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a command under strace and sample its process group.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Seconds between telemetry samples.
        #[arg(long)]
        interval: Option<f64>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(trailing_var_arg = true, required = true, value_name = "COMMAND")]
        argv: Vec<String>,
    },
    /// Generate a synthetic two-phase trace.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        windows: Option<usize>,
    },
    /// Learn syscall embeddings from a trace.
    Embed {
        #[command(flatten)]
        common: Common,
    },
    /// Train one predictor and write model.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep history × horizon and write grid.csv and grid.svg.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// synth, embed, train and eval in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        windows: Option<usize>,
    },
}

impl Common {
    fn settings(&self, extra: &[(&str, Option<String>)]) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let show = |v: Option<&dyn ToString>| v.map(|v| v.to_string());
        let flags: [(&str, Option<String>); 9] = [
            ("dt", show(self.dt.as_ref().map(|v| v as _))),
            ("dim", show(self.dim.as_ref().map(|v| v as _))),
            ("hidden", show(self.hidden.as_ref().map(|v| v as _))),
            ("history", show(self.history.as_ref().map(|v| v as _))),
            ("horizon", show(self.horizon.as_ref().map(|v| v as _))),
            ("epochs", show(self.epochs.as_ref().map(|v| v as _))),
            ("seed", show(self.seed.as_ref().map(|v| v as _))),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            (
                "input",
                self.input.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        if self.sequential {
            s.parallel = false;
        }
        Ok(s)
    }
}

impl GridArgs {
    fn pairs(&self) -> [(&'static str, Option<String>); 2] {
        [
            ("horizons", self.horizons.clone()),
            ("histories", self.histories.clone()),
        ]
    }
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Collect {
            common,
            interval,
            duration,
            argv,
        } => {
            let s = common.settings(&[
                ("sample_interval", interval.map(|v| v.to_string())),
                ("duration", duration.map(|v| v.to_string())),
            ])?;
            pipeline::run_collect(&s, &argv)?;
            println!("wrote {}", s.out.display());
        }
        Command::Synth { common, windows } => {
            let s = common.settings(&[("n_windows", windows.map(|v| v.to_string()))])?;
            let trace = pipeline::run_synth(&s)?;
            println!(
                "wrote {} events and {} telemetry rows to {}",
                trace.events.len(),
                trace.telemetry.len(),
                s.out.display()
            );
        }
        Command::Embed { common } => {
            let s = common.settings(&[])?;
            let trained = pipeline::run_embed(&s)?;
            println!(
                "vocabulary {} tokens, dim {}, epoch loss {:?}",
                trained.vocab.len(),
                trained.table.dim(),
                trained.epoch_loss
            );
        }
        Command::Train { common } => {
            let s = common.settings(&[])?;
            let cell = pipeline::run_train(&s)?;
            println!(
                "history {} horizon {}: test rmse {:.6}, persistence rmse {:.6}, n {}",
                cell.history, cell.horizon, cell.rmse, cell.baseline_rmse, cell.test_samples
            );
        }
        Command::Eval { common, grid } => {
            let s = common.settings(&grid.pairs())?;
            let g = pipeline::run_eval(&s)?;
            print!("{}", crate::eval::grid_csv(&g));
        }
        Command::Pipeline {
            common,
            grid,
            windows,
        } => {
            let [h, i] = grid.pairs();
            let s = common.settings(&[h, i, ("n_windows", windows.map(|v| v.to_string()))])?;
            let report = pipeline::run_pipeline(&s)?;
            println!(
                "model: history {} horizon {}: test rmse {:.6}, persistence rmse {:.6}",
                report.model.history,
                report.model.horizon,
                report.model.rmse,
                report.model.baseline_rmse
            );
            print!("{}", crate::eval::grid_csv(&report.grid));
        }
    }
    Ok(())
}
