use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adnfm_cli::{commands, exit_code};

/// Factorization-machine CTR models with an attention-pooled dense network.
#[derive(Parser)]
#[command(name = "adnfm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config; writes model.ckpt, history.tsv,
    /// metrics.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's data path.
        #[arg(long)]
        data_override: Option<PathBuf>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a dataset with a checkpoint and print its metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// ctr | regression; must match the checkpoint.
        #[arg(long)]
        task: String,
    },
    /// Predict per-row scores for a TSV of raw feature rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Export the per-epoch attention weights from a history file as CSV.
    TraceAttention {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic interaction dataset with known ground truth.
    Synth {
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        fields: usize,
        #[arg(long, default_value_t = 100)]
        vocab: usize,
        #[arg(long, default_value_t = 4)]
        k_true: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data_override,
            out,
            seed,
        } => commands::cmd_train(&config, data_override.as_deref(), out.as_deref(), seed),
        Command::Eval { model, data, task } => commands::cmd_eval(&model, &data, &task),
        Command::Predict {
            model,
            input,
            output,
        } => commands::cmd_predict(&model, &input, &output),
        Command::TraceAttention { history, out } => commands::cmd_trace_attention(&history, &out),
        Command::Synth {
            n,
            fields,
            vocab,
            k_true,
            seed,
            out,
        } => commands::cmd_synth(n, fields, vocab, k_true, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
