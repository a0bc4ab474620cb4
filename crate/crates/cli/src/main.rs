use clap::{Args, Parser, Subcommand, ValueEnum};
use rolelink::decoder::Decoding;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod manifest;

#[derive(Parser)]
#[command(name = "rolelink", version, about = "Event argument linking: train, predict, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, or fine-tune one with --init-checkpoint.
    Train(TrainArgs),
    /// Link arguments in a corpus with a trained model.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Write a deterministic synthetic corpus and its ontology.
    Gensynth(GensynthArgs),
    /// Convert RAMS release files to the corpus format.
    ImportRams(ImportArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Dev corpus used for early stopping (JSONL).
    #[arg(long)]
    pub dev: PathBuf,
    /// Ontology (tab-separated).
    #[arg(long)]
    pub ontology: PathBuf,
    /// TOML config; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the checkpoint, log and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint (fine-tuning).
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override, `key=value`; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory of precomputed contextual vector files.
    #[arg(long)]
    pub contextual_dir: Option<PathBuf>,
    /// Worker threads for dev scoring (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DecodingArg {
    Argmax,
    Greedy,
    Tcd,
}

impl From<DecodingArg> for Decoding {
    fn from(d: DecodingArg) -> Self {
        match d {
            DecodingArg::Argmax => Decoding::Argmax,
            DecodingArg::Greedy => Decoding::Greedy,
            DecodingArg::Tcd => Decoding::Tcd,
        }
    }
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = DecodingArg::Greedy)]
    pub decoding: DecodingArg,
    /// Predictions file (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub contextual_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Breakdown {
    Distance,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold corpus (JSONL).
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum)]
    pub breakdown: Option<Breakdown>,
    /// Write the row-normalized role confusion matrix here.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Write role-embedding cosine similarities here (needs --model).
    #[arg(long, requires = "model")]
    pub similarity: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Add strict and approximate string-match scores per slot.
    #[arg(long)]
    pub string_match: bool,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GensynthArgs {
    /// TOML generator config; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training portion (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Move this many documents from the end into --dev-out.
    #[arg(long, default_value_t = 0, requires = "dev_out")]
    pub dev_docs: usize,
    #[arg(long)]
    pub dev_out: Option<PathBuf>,
    /// Where to write the generated ontology.
    #[arg(long)]
    pub ontology_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ImportArgs {
    /// RAMS `.jsonlines` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gensynth(a) => commands::gensynth(a),
        Command::ImportRams(a) => commands::import_rams(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
