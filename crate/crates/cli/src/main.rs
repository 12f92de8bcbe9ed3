mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slideloc_core::synthgen::Preset;

#[derive(Parser)]
#[command(name = "slideloc", version, about = "Slide transition detection and lecture summarization")]
struct Cli {
    /// Pipeline settings as JSON; missing fields take the tiny preset's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in settings used when no config file is given.
    #[arg(long, global = true, default_value = "tiny", value_parser = ["tiny", "paper"])]
    preset: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic lecture corpus with ground truth.
    Synth(SynthArgs),
    /// Turn a frame manifest into a volumes file.
    Ingest(IngestArgs),
    /// Train a network on volumes files.
    Train(TrainArgs),
    /// Run a trained network over a video and write its prediction track.
    Detect(DetectArgs),
    /// Decode a prediction track into events, keyframes and an outline.
    Summarize(SummarizeArgs),
    /// Score predicted events (and optionally volume labels) against truth.
    Eval(EvalArgs),
    /// Pixel-difference transition detector.
    Baseline(BaselineArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "mixed", value_parser = |s: &str| s.parse::<Preset>())]
    pub kind: Preset,
    #[arg(long, default_value_t = 1200)]
    pub frames: usize,
    /// Full synthesis spec as JSON; replaces --kind and --frames.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ground-truth events in source-frame coordinates.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub volumes: Vec<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the initialization and shuffle seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch history as TSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the name of the manifest's directory.
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub track: PathBuf,
    /// Source frames; when given, keyframe images are written too.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted events (JSON array of objects with `frame_index`).
    #[arg(long)]
    pub pred: PathBuf,
    /// True events; entries with a `kind` other than transition are ignored.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub tol: usize,
    /// Prediction track to score per volume, with --volumes.
    #[arg(long, requires = "volumes")]
    pub track: Option<PathBuf>,
    /// Labelled volumes file aligned with --track.
    #[arg(long, requires = "track")]
    pub volumes: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Mean absolute difference above which a frame counts as changed;
    /// defaults to the configured value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, env = "SLIDELOC_STORE")]
    pub store: PathBuf,
    #[arg(long, env = "SLIDELOC_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => config::PipelineConfig::load(path),
        None => Ok(config::PipelineConfig::preset(&cli.preset).expect("validated by clap")),
    };
    let result = config.and_then(|cfg| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Detect(a) => commands::detect(a, &cfg),
        Command::Summarize(a) => commands::summarize(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Baseline(a) => commands::baseline(a, &cfg),
        Command::Serve(a) => commands::serve(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
