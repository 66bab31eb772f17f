mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use som::evaluator::TreeSource;
use som::oracle::OracleMode;

use crate::error::CliError;
use crate::manifest::Recorder;

#[derive(Debug, Parser)]
#[command(name = "som", version, about = "Syntactic ordered-memory language model and incremental parser")]
struct Cli {
    /// Write the run manifest here instead of the default location.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert treebanks into a corpus directory plus oracle labels.
    Preprocess(PreprocessArgs),
    /// Sample a corpus (and agreement suite) from a grammar.
    Synth(SynthArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Parse whitespace-tokenized sentences, one per line, to brackets.
    Parse(ParseArgs),
    /// Dump oracle labels for a tree file.
    Labels(LabelsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TreeFormat {
    Conllu,
    Ptb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelsFormat {
    Ptb,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Dynamic,
    Static,
    Leftbranch,
}

impl From<Mode> for OracleMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dynamic => OracleMode::Dynamic,
            Mode::Static => OracleMode::Static,
            Mode::Leftbranch => OracleMode::LeftBranch,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Trees {
    Predicted,
    Gold,
}

impl From<Trees> for TreeSource {
    fn from(t: Trees) -> Self {
        match t {
            Trees::Predicted => TreeSource::Predicted,
            Trees::Gold => TreeSource::Gold,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long, value_enum)]
    pub format: TreeFormat,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Training-split count below which words map to unknown classes.
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    /// Slot count used for the label dumps.
    #[arg(long, default_value_t = 12)]
    pub slots: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// A bundled grammar name (agreement, center) or a grammar JSON file.
    #[arg(long)]
    pub grammar: String,
    /// Total sentences, split 80/10/10.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub max_len: usize,
    /// Falls back to SOM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Agreement suite size; 0 skips the suite.
    #[arg(long, default_value_t = 400)]
    pub suite_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lr=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Corpus directory (overrides `data` in the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Per-token perplexity.
    Ppl(EvalPplArgs),
    /// Unlabeled bracket F1 of greedy parses against gold trees.
    Parse(EvalParseArgs),
    /// Minimal-pair accuracy on a suite.
    Sg(EvalSgArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A corpus JSON-lines file, or a corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split read when `--data` is a directory.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvalPplArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "predicted")]
    pub trees: Trees,
    /// Report JSON path (the report always goes to stdout too).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sentence CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalParseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the predicted trees, bracketed, one per line.
    #[arg(long)]
    pub trees_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSgArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input file; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    /// Bracketed trees, or a corpus JSON-lines file.
    #[arg(long)]
    pub trees: PathBuf,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<LabelsFormat>,
    #[arg(long, value_enum, default_value = "static")]
    pub mode: Mode,
    /// Defaults to the checkpoint's slot count, else 12.
    #[arg(long)]
    pub slots: Option<usize>,
    /// Checkpoint whose greedy decisions drive dynamic labels.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Preprocess(_) => "preprocess",
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Eval(EvalCommand::Ppl(_)) => "eval ppl",
        Command::Eval(EvalCommand::Parse(_)) => "eval parse",
        Command::Eval(EvalCommand::Sg(_)) => "eval sg",
        Command::Parse(_) => "parse",
        Command::Labels(_) => "labels",
    }
}

fn dispatch(command: Command, rec: &mut Recorder) -> Result<(), CliError> {
    match command {
        Command::Preprocess(a) => commands::preprocess(a, rec),
        Command::Synth(a) => commands::synth(a, rec),
        Command::Train(a) => commands::train(a, rec),
        Command::Eval(EvalCommand::Ppl(a)) => commands::eval_ppl(a, rec),
        Command::Eval(EvalCommand::Parse(a)) => commands::eval_parse(a, rec),
        Command::Eval(EvalCommand::Sg(a)) => commands::eval_sg(a, rec),
        Command::Parse(a) => commands::parse(a, rec),
        Command::Labels(a) => commands::labels(a, rec),
    }
}

fn write_manifest(rec: Recorder, code: i32, explicit: Option<PathBuf>) {
    let (m, out_dir) = rec.finish(code);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    let target = explicit.or_else(|| out_dir.map(|d| d.join("run.json")));
    match target {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, text + "\n") {
                log::error!("cannot write manifest {}: {e}", path.display());
            }
        }
        None => eprintln!("{}", serde_json::to_string(&m).expect("manifest serializes")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut rec = Recorder::new(command_name(&cli.command), argv);
    let result = dispatch(cli.command, &mut rec);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    write_manifest(rec, code, cli.manifest);
    ExitCode::from(code as u8)
}
