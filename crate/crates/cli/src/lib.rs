//! Command-line entry points: train, generate, eval, stats, synth, serve.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use chae::decoding::Strategy;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{CliConfig, ModelSection, Stage};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    chae::codec::CodecError,
    chae::corpus::CorpusError,
    chae::model::ModelError,
    chae::training::TrainError,
    chae::decoding::DecodeError,
    chae::eval::EvalError,
    chae_service::ServiceError,
    std::io::Error
);

#[derive(Debug, Parser)]
#[command(name = "chae", version, about = "Character-controlled story generation", arg_required_else_help = true)]
pub struct Cli {
    /// TOML file with [model], [train], [decoding] and [[stages]] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random generator.
    #[arg(long, global = true, env = "CHAE_SEED")]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and vocabulary.
    Train(TrainArgs),
    /// Generate a story from a story-spec JSON file.
    Generate(GenerateArgs),
    /// Score a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
    /// Write a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Annotated corpus (JSON lines); replaces any configured stages.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write; the vocabulary goes next to it with a .vocab extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Emotion loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Conditions per sentence.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder and decoder layers each.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub no_copy: bool,
    #[arg(long)]
    pub no_emotion_loss: bool,
    /// Append one JSON line per epoch here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Longest generated sentence in tokens.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the checkpoint path with a .vocab extension.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// {"beginning": ..., "chae": [[{"char", "actions", "emotion"}, ...], ...]}
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Print the story with diagnostics as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// A saved emotion judge; otherwise one is trained on the training split.
    #[arg(long)]
    pub judge: Option<PathBuf>,
    #[arg(long)]
    pub save_judge: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Include train / val / test pair counts.
    #[arg(long)]
    pub splits: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of stories.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Idle seconds before a session expires.
    #[arg(long, default_value_t = 3600)]
    pub ttl: u64,
    /// Append-only session log, replayed at startup.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Origin allowed by CORS; any origin when unset.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

/// Parses `args` (program name first), runs the subcommand and returns
/// the process exit code: 0 success, 1 usage error, 2 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
