//! The `posefield` command-line pipeline.
//!
//! Every command reads one [`RunConfig`](config::RunConfig) and is
//! deterministic given it. Exit codes: 0 success, 2 configuration or
//! validation error, 3 I/O error, 4 numerical failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use posefield::ErrorClass;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
    Core(posefield::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => EXIT_CONFIG,
                ErrorClass::Io => EXIT_IO,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<posefield::Error> for CliError {
    fn from(e: posefield::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "posefield", version, about = "Train and use distance fields over robot joint configurations")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; each one overrides the matching config key.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file, or a directory containing config.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = config::parse_override)]
    pub overrides: Vec<(String, String)>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub robot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory; relative data and report paths resolve against it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pose corpus.
    GenCorpus,
    /// Sample and label a training set against the corpus.
    Label {
        /// Re-verify a fraction of labels with the exact oracle.
        #[arg(long)]
        audit: bool,
    },
    /// Train a field; writes the checkpoint and a per-epoch loss CSV.
    Train,
    /// Evaluate a checkpoint on a freshly sampled held-out set.
    Eval,
    /// Print field value, pose score and prior reward per pose.
    Score {
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Reference trajectory used to set d_good.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Project poses onto the field's zero set.
    Denoise {
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Solve each keypoint frame independently.
    Ik {
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Solve keypoint frames in order, warm-starting from the previous frame.
    Retarget {
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Compare naive Gaussian and decoupled perturbation magnitudes.
    Diagnose,
    /// gen-corpus, label, train, eval and denoise in one run.
    Repro,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("posefield: {e}");
            e.exit_code()
        }
    }
}

/// Runs an already parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let loaded = load_config(&cli.common)?;
    let workers = loaded.config.workers;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| commands::dispatch(&loaded, cli.command))
}

fn load_config(common: &CommonArgs) -> Result<config::Loaded, CliError> {
    let file = config::locate(common.config.as_deref())?;
    let mut overrides = common.overrides.clone();
    let path_flags = [
        ("robot_path", &common.robot),
        ("corpus_path", &common.corpus),
        ("dataset_path", &common.dataset),
        ("checkpoint_path", &common.checkpoint),
        ("out_dir", &common.out),
    ];
    for (key, value) in path_flags {
        if let Some(p) = value {
            overrides.push((key.to_owned(), toml::Value::String(p.display().to_string()).to_string()));
        }
    }
    if let Some(s) = common.seed {
        overrides.push(("seed".to_owned(), s.to_string()));
    }
    if let Some(w) = common.workers {
        overrides.push(("workers".to_owned(), w.to_string()));
    }
    let mut loaded = config::load(file.as_deref(), &overrides)?;
    // A robot given on the command line is relative to the working directory.
    if common.robot.is_some() {
        loaded.base_dir = PathBuf::from(".");
    }
    Ok(loaded)
}
