use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kalman_assoc_cli::commands::{
    cmd_eval, cmd_synth, cmd_track, cmd_train, EvalArgs, SynthArgs, TrackArgs, TrainArgs,
};
use kalman_assoc_cli::thread_pool;

/// Self-supervised data association for multi-object tracking.
#[derive(Debug, Parser)]
#[command(name = "kassoc", version)]
struct Cli {
    /// Sequences processed in parallel.
    #[arg(long, short = 'j', global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sequences with ground truth, detections and embeddings.
    Synth(SynthArgs),
    /// Train the association scorer on detection files.
    Train(TrainArgs),
    /// Track detections with a trained checkpoint.
    Track(TrackArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let pool = thread_pool(cli.jobs)?;
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args, &pool).map(|_| ()),
        Command::Track(args) => cmd_track(&args, &pool).map(|_| ()),
        Command::Eval(args) => cmd_eval(&args, &pool).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
