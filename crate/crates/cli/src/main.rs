mod count;
mod decompose;
mod eval;
mod train;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use util::UsageError;

#[derive(Parser, Debug)]
#[command(name = "subband", version, about = "Train, evaluate and cost wavelet-subband CNNs")]
struct Cli {
    /// Worker threads; 0 picks one per core. `1` makes every command bit-reproducible.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, metrics and a run manifest.
    Train(train::TrainArgs),
    /// Report test accuracy of a checkpoint.
    Eval(eval::EvalArgs),
    /// Print per-layer MAC and parameter counts.
    Count(count::CountArgs),
    /// Accuracy under input and weight quantization.
    #[command(name = "quant-eval")]
    QuantEval(eval::QuantEvalArgs),
    /// Write the wavelet packet subbands of an image.
    Decompose(decompose::DecomposeArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| UsageError(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => train::run(a, cli.threads),
        Command::Eval(a) => eval::run(a),
        Command::Count(a) => count::run(a),
        Command::QuantEval(a) => eval::run_quant(a),
        Command::Decompose(a) => decompose::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(util::exit_code(&e))
        }
    }
}
