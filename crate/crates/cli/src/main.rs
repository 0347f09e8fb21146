use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser, Serialize)]
#[command(name = "semdist", version, about = "WER, semantic distance and NLU metrics for speech recognition output")]
pub struct Cli {
    /// Worker threads for per-utterance stages; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Align hypotheses to references and report WER.
    Wer(WerArgs),
    /// Score reference/hypothesis pairs with an embedding backend.
    Semdist(SemdistArgs),
    /// Build a new hypothesis set with the same WER as a baseline set.
    Perturb(PerturbArgs),
    /// Intent accuracy and exact match over gold/predicted frames.
    NluEval(NluArgs),
    /// Micro-averaged entity F1.
    NerEval(NerArgs),
    /// Corpus report over one or more hypothesis sets.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusInput {
    /// Corpus JSONL with `id` and `reference` (and `hypothesis` when --hyps is not given).
    #[arg(long)]
    pub refs: PathBuf,
    /// Corpus JSONL whose hypotheses are matched to --refs by id.
    #[arg(long)]
    pub hyps: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct WerArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// Directory for the summary, config echo and optional alignment dump.
    #[arg(long, short = 'o')]
    pub out_dir: Option<PathBuf>,
    /// Also write `alignments.jsonl` to --out-dir.
    #[arg(long, requires = "out_dir")]
    pub alignments: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SemdistArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// `stub[:seed=N,dim=D]`, `cache:PATH` or an http(s) service URL.
    #[arg(long, default_value = "stub")]
    pub backend: String,
    #[arg(long, short = 'o')]
    pub out_dir: Option<PathBuf>,
    /// Write every embedded sentence to a cache file usable with `cache:PATH`.
    #[arg(long)]
    pub write_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Worse,
    Better,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    /// Reference corpus JSONL; its references also form the word pool.
    #[arg(long)]
    pub refs: PathBuf,
    /// Baseline hypothesis set (corpus JSONL).
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub seed: u64,
    /// Name of the new set; output files are `<name>.jsonl` and `<name>.manifest.jsonl`.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = semdist::perturb::DEFAULT_MAX_RETRIES)]
    pub max_retries: usize,
    #[arg(long, short = 'o')]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NluArgs {
    /// JSONL of `{"id", "gold_frame", "pred_frame"}`.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, short = 'o')]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct NerArgs {
    /// Gold entity JSONL of `{"id", "entities": [{"type", "text"}]}`.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted entity JSONL with the same ids.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, short = 'o')]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Reference corpus JSONL.
    #[arg(long)]
    pub refs: PathBuf,
    /// Hypothesis set as NAME=FILE; repeat for each set, in table order.
    #[arg(long = "set", value_name = "NAME=FILE", required = true)]
    pub sets: Vec<String>,
    #[arg(long, default_value = "stub")]
    pub backend: String,
    /// Frame annotations for a set as NAME=FILE.
    #[arg(long = "frames", value_name = "NAME=FILE")]
    pub frames: Vec<String>,
    /// Gold entity annotations for the references.
    #[arg(long)]
    pub entities_gold: Option<PathBuf>,
    /// Predicted entities for a set as NAME=FILE.
    #[arg(long = "entities", value_name = "NAME=FILE", requires = "entities_gold")]
    pub entities: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv,markdown")]
    pub format: Vec<FormatArg>,
    /// Scatter rows keep utterances with min-wer < WER <= max-wer.
    #[arg(long, default_value_t = 0.0)]
    pub min_wer: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_wer: f64,
    #[arg(long, short = 'o')]
    pub out_dir: PathBuf,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Input(format!("--jobs: {e}")))?;
    }
    match &cli.command {
        Command::Wer(args) => commands::wer(cli, args),
        Command::Semdist(args) => commands::semdist(cli, args),
        Command::Perturb(args) => commands::perturb(cli, args),
        Command::NluEval(args) => commands::nlu_eval(cli, args),
        Command::NerEval(args) => commands::ner_eval(cli, args),
        Command::Report(args) => commands::report(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
