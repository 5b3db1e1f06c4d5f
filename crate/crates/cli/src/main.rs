//! `aba`: train, evaluate, predict, dump attention, and generate synthetic
//! corpora.
//!
//! Exit status is 0 on success, 1 for input or configuration errors and 2
//! when training diverges.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aba_core::hos::GateInit;
use aba_core::pipeline::ModelKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aba", version, about = "Adaptive bidirectional attention reading comprehension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Score a predictions file against reference answers.
    Evaluate(EvaluateArgs),
    /// Decode answers for every question in a data file.
    Predict(PredictArgs),
    /// Write the row-normalized similarity matrix of one question.
    DumpAttention(DumpArgs),
    /// Write a synthetic cue-following corpus as JSON lines.
    GenerateSynthetic(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GateArg {
    First,
    Last,
}

impl From<GateArg> for GateInit {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::First => GateInit::First,
            GateArg::Last => GateInit::Last,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Aba,
    Baseline,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Aba => ModelKind::Aba,
            ModelArg::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training data: SQuAD 2.0 JSON or a `.jsonl` corpus.
    #[arg(long)]
    data: PathBuf,
    /// Held-out data scored after every epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    gate_init: Option<GateArg>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// `{"<question_id>": "<answer text>"}`
    #[arg(long)]
    predictions: PathBuf,
    /// References: SQuAD 2.0 JSON or a `.jsonl` corpus.
    #[arg(long)]
    data: PathBuf,
    /// Optional per-question CSV (`id,em,f1`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Question id.
    #[arg(long)]
    id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON task description; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
