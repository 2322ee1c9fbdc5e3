//! `coder-forge` command-line entry point.
//!
//! Every invocation prints one JSON summary record on stdout (and to
//! `--summary FILE` when given). Exit status: 0 on success, 1 when some
//! items failed but partial output was written, 2 on configuration errors.

mod backends;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use backends::{EmbedArgs, GatewayArgs, MiningArgs, RegistryArgs};

#[derive(Debug, Parser)]
#[command(name = "coder-forge", version, about = "Synthesize, filter and evaluate code-retrieval training data")]
struct Cli {
    /// Also write the JSON summary record to this file.
    #[arg(long, global = true, value_name = "FILE")]
    summary: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, annotate and mine training samples for task cells.
    Synth(SynthArgs),
    /// Ask one or more models for new task definitions and write a review file.
    Brainstorm(BrainstormArgs),
    /// Attach hard negatives to accepted query/positive pairs.
    Mine(MineArgs),
    /// Split data sources into the three curriculum stage manifests.
    Plan(PlanArgs),
    /// Apply the stage-3 filters (rank filter, then difficulty filter).
    Filter(FilterArgs),
    /// Remove duplicate documents and queries from benchmarks.
    Dedup(DedupArgs),
    /// Score an embedder with NDCG@k on benchmark directories.
    Eval(EvalArgs),
    /// Evaluate the reference InfoNCE loss and gradients on fixture instances.
    CheckLoss(CheckLossArgs),
    /// Check a task registry and print its applicability table.
    ValidateRegistry(ValidateArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Task name (repeatable).
    #[arg(long = "task", required = true)]
    pub tasks: Vec<String>,
    /// Natural language (repeatable): English or Chinese.
    #[arg(long = "nl", default_value = "English")]
    pub natural_languages: Vec<String>,
    /// Programming language (repeatable).
    #[arg(long = "pl", required = true)]
    pub programming_languages: Vec<String>,
    /// Explicit SRC:TGT cell for translation tasks (repeatable).
    #[arg(long = "translation-pair", value_name = "SRC:TGT")]
    pub translation_pairs: Vec<String>,
    /// Accepted samples wanted per task cell.
    #[arg(long)]
    pub count: usize,
    /// Documents tried per cell [default: 3 x count].
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Code corpus, JSON lines with "language" and "content".
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Minimum document length in characters.
    #[arg(long, default_value_t = coder_forge::corpus::DEFAULT_MIN_CHARS)]
    pub min_chars: usize,
    /// Maximum document length in characters.
    #[arg(long, default_value_t = coder_forge::corpus::DEFAULT_MAX_CHARS)]
    pub max_chars: usize,
    /// Training samples output (rewritten each run).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Accepted pairs, appended across runs [default: OUT.pairs.jsonl].
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    /// Processed-item keys, one per line [default: OUT.checkpoint].
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Re-ask once when an annotation response is malformed.
    #[arg(long)]
    pub retry_malformed: bool,
    /// Seed for document sampling, request seeds and negative fill.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel workers.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub mining: MiningArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, clap::Args)]
pub struct BrainstormArgs {
    /// Major task type: Text2Code, Code2Text, Code2Code or Hybrid.
    #[arg(long)]
    pub major_type: String,
    /// Additional model to ask (repeatable); --model is asked first.
    #[arg(long = "also-model")]
    pub also_models: Vec<String>,
    /// Review file for the candidates (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Request seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, clap::Args)]
pub struct MineArgs {
    /// Pairs file (JSON lines); only accepted pairs are mined.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Code corpus providing the negative pools.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Minimum document length in characters.
    #[arg(long, default_value_t = coder_forge::corpus::DEFAULT_MIN_CHARS)]
    pub min_chars: usize,
    /// Training samples output [default: IN with .samples.jsonl].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Seed for the negative fill rule.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel workers.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub mining: MiningArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, clap::Args)]
pub struct PlanArgs {
    /// Data source as KIND=PATH[@WEIGHT] (repeatable). Kinds: text_retrieval,
    /// text_sts, code_existing, code_synthetic.
    #[arg(long = "source", required = true, value_name = "KIND=PATH[@WEIGHT]")]
    pub sources: Vec<String>,
    /// Learning-rate hint for stages 1 and 2.
    #[arg(long, default_value_t = coder_forge::curriculum::DEFAULT_LR1)]
    pub lr1: f64,
    /// Learning-rate hint for stage 3.
    #[arg(long, default_value_t = coder_forge::curriculum::DEFAULT_LR3)]
    pub lr3: f64,
    /// Maximum sequence length recorded in the manifests.
    #[arg(long, default_value_t = coder_forge::curriculum::DEFAULT_MAX_SEQUENCE_LENGTH)]
    pub max_len: usize,
    /// Directory for stage1.jsonl, stage2.jsonl and stage3.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct FilterArgs {
    /// Training samples to filter.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Retained samples.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Drop samples whose positive ranks within this many results.
    #[arg(long, default_value_t = coder_forge::curriculum::DEFAULT_TOP_N)]
    pub top_n: usize,
    /// Retrieval corpus for the rank filter (JSON lines with id and text)
    /// [default: positives and negatives of the input].
    #[arg(long, value_name = "FILE")]
    pub filter_corpus: Option<PathBuf>,
    /// Skip the rank filter.
    #[arg(long)]
    pub skip_e5: bool,
    /// Skip the difficulty filter.
    #[arg(long)]
    pub skip_difficulty: bool,
    /// Request seed for difficulty judgments.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel workers.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, clap::Args)]
pub struct DedupArgs {
    /// Benchmark directory (repeatable).
    #[arg(long = "benchmark", required = true, value_name = "DIR")]
    pub benchmarks: Vec<PathBuf>,
    /// Output root; each benchmark is written to OUT_DIR/NAME.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Benchmark directory (repeatable).
    #[arg(long = "benchmark", required = true, value_name = "DIR")]
    pub benchmarks: Vec<PathBuf>,
    /// Deduplicate each benchmark before scoring.
    #[arg(long)]
    pub dedup: bool,
    /// NDCG cutoff.
    #[arg(long, default_value_t = coder_forge::eval::DEFAULT_NDCG_K)]
    pub k: usize,
    /// Hits kept per query in run files.
    #[arg(long, default_value_t = coder_forge::eval::DEFAULT_DEPTH)]
    pub depth: usize,
    /// Report file (JSON lines); a text table is written next to it with a .txt extension.
    #[arg(long, value_name = "FILE", default_value = "eval-report.jsonl")]
    pub report: PathBuf,
    /// Directory for TREC run files, one per benchmark.
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
    /// Parallel workers.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, clap::Args)]
pub struct CheckLossArgs {
    /// Instances as JSON lines: {"q": [..], "pos": [..], "negs": [[..], ..]}.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output JSON lines with loss and gradients.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Softmax temperature.
    #[arg(long, default_value_t = coder_forge::contrastive::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
}

#[derive(Debug, clap::Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub registry: RegistryArgs,
    /// Write the bundled registry files to this directory first, then validate them.
    #[arg(long, value_name = "DIR")]
    pub write_bundled: Option<PathBuf>,
}

/// Result of a command that ran to completion.
pub struct Outcome {
    pub details: Value,
    /// Some items failed; output is partial.
    pub partial: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Brainstorm(_) => "brainstorm",
            Command::Mine(_) => "mine",
            Command::Plan(_) => "plan",
            Command::Filter(_) => "filter",
            Command::Dedup(_) => "dedup",
            Command::Eval(_) => "eval",
            Command::CheckLoss(_) => "check-loss",
            Command::ValidateRegistry(_) => "validate-registry",
        }
    }

    fn run(self) -> anyhow::Result<Outcome> {
        match self {
            Command::Synth(a) => commands::synth(a),
            Command::Brainstorm(a) => commands::brainstorm(a),
            Command::Mine(a) => commands::mine(a),
            Command::Plan(a) => commands::plan(a),
            Command::Filter(a) => commands::filter(a),
            Command::Dedup(a) => commands::dedup(a),
            Command::Eval(a) => commands::eval(a),
            Command::CheckLoss(a) => commands::check_loss(a),
            Command::ValidateRegistry(a) => commands::validate_registry(a),
        }
    }
}

fn emit(summary: &Value, path: Option<&PathBuf>) -> bool {
    let line = summary.to_string();
    println!("{line}");
    match path {
        Some(p) => match std::fs::write(p, format!("{line}\n")) {
            Ok(()) => true,
            Err(e) => {
                eprintln!("error: writing summary {}: {e}", p.display());
                false
            }
        },
        None => true,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            emit(&json!({"command": null, "status": "error", "exit_code": 2, "error": e.kind().to_string()}), None);
            return ExitCode::from(2);
        }
    };

    let name = cli.command.name();
    let (summary, code) = match cli.command.run() {
        Ok(Outcome { details, partial }) => {
            let code = u8::from(partial);
            let status = if partial { "partial" } else { "ok" };
            (json!({"command": name, "status": status, "exit_code": code, "details": details}), code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            (json!({"command": name, "status": "error", "exit_code": 2, "error": format!("{e:#}")}), 2)
        }
    };
    if !emit(&summary, cli.summary.as_ref()) {
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
