mod commands;
mod failure;
mod manifest;
mod specs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use talm::datasets::TaskKind;
use talm::selfplay::MatchSpec;

use crate::specs::GeneratorSpec;

#[derive(Parser, Debug)]
#[command(name = "talm", version, about = "Tool-augmented language model runtime and self-play toolkit")]
pub struct Cli {
    /// Worker threads for self-play and evaluation [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a BM25 index from a corpus JSONL file.
    Index(IndexArgs),
    /// Query a BM25 index.
    Search(SearchArgs),
    /// Evaluate a formula and print its rendered value.
    Solve(SolveArgs),
    /// Grow a tool-use set by iterative self-play.
    Selfplay(SelfplayArgs),
    /// Beam-decode a task set and score the outputs.
    Eval(EvalArgs),
    /// Check gold formulas against their recorded answers.
    CheckValidity(CheckValidityArgs),
    /// Generate a synthetic arithmetic task set and bootstrap tool-use set.
    Synth(SynthArgs),
    /// Serve a built-in generator over the line-delimited JSON wire protocol.
    Serve(ServeArgs),
    /// Re-execute a run from its manifest and compare the outputs.
    Rerun(RerunArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Qa,
    Math,
    Synthetic,
}

impl From<KindArg> for TaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Qa => TaskKind::Qa,
            KindArg::Math => TaskKind::Math,
            KindArg::Synthetic => TaskKind::Synthetic,
        }
    }
}

impl KindArg {
    pub fn default_match(self) -> MatchSpec {
        match self {
            KindArg::Qa => MatchSpec::qa(),
            KindArg::Math | KindArg::Synthetic => MatchSpec::math(),
        }
    }
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Corpus JSONL with `doc_id` and `text` fields.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Read the corpus as a QA task set and index its distinct contexts.
    #[arg(long)]
    pub from_tasks: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Also write hits and a manifest to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub formula: String,
    /// Also write the result and a manifest to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TaskArgs {
    /// Task set JSONL.
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Math)]
    pub task_kind: KindArg,
    /// `scripted:PATH`, `trainable[:data=PATH]`, `external:cmd=...` or `external:tcp=HOST:PORT`.
    #[arg(long, default_value = "trainable")]
    pub generator: GeneratorSpec,
    /// Comma list, e.g. `formula,search:index=idx.json,k=3`.
    #[arg(long, default_value = "formula")]
    pub tools: String,
    /// `numeric`, `numeric:ABS,REL` or `exact` [default: by task kind].
    #[arg(long)]
    pub threshold: Option<MatchSpec>,
    /// Per-leg generation budget in characters.
    #[arg(long, default_value_t = talm::protocol::DEFAULT_BUDGET_CHARS)]
    pub budget: usize,
}

#[derive(Args, Debug)]
pub struct SelfplayArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Bootstrap tool-use set JSONL.
    #[arg(long)]
    pub bootstrap: PathBuf,
    #[arg(long, default_value_t = talm::selfplay::DEFAULT_ROUNDS)]
    pub rounds: usize,
    /// Samples per example per round.
    #[arg(long, default_value_t = talm::selfplay::DEFAULT_SAMPLES_PER_EXAMPLE)]
    pub samples: usize,
    #[arg(long, default_value_t = talm::generator::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = talm::generator::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = talm::selfplay::DEFAULT_MAX_ACCEPTS)]
    pub max_accepts: usize,
    /// Keep duplicate accepted records.
    #[arg(long)]
    pub no_dedup: bool,
    /// Held-out task set evaluated after bootstrap and after every round.
    #[arg(long)]
    pub eval_tasks: Option<PathBuf>,
    #[arg(long, default_value_t = talm::generator::DEFAULT_BEAM_WIDTH)]
    pub beams: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = talm::generator::DEFAULT_BEAM_WIDTH)]
    pub beams: usize,
    /// Run without tools: any tool call fails.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub max_examples: Option<usize>,
    #[arg(long, default_value_t = talm::protocol::DEFAULT_MAX_HOPS)]
    pub max_hops: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckValidityArgs {
    /// Math task set JSONL with `formula` and `target` fields.
    #[arg(long)]
    pub mathqa: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub abs: f64,
    #[arg(long, default_value_t = 0.005)]
    pub rel: f64,
    /// Also write the report and a manifest to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub min: i64,
    #[arg(long, default_value_t = 999)]
    pub max: i64,
    #[arg(long, value_delimiter = ',', default_value = "add,subtract,multiply,divide")]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Leading examples rendered as bootstrap tool-use records.
    #[arg(long, default_value_t = 20)]
    pub bootstrap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// `scripted:PATH` or `trainable[:data=PATH]`.
    #[arg(long, default_value = "trainable")]
    pub generator: GeneratorSpec,
    /// Listen on a TCP address instead of stdin/stdout; the bound address is
    /// printed on the first line of stdout.
    #[arg(long)]
    pub listen: Option<String>,
    /// With --listen, exit after the first connection closes.
    #[arg(long)]
    pub once: bool,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the original location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in e.chain().map(|c| c.to_string()) {
        if !message.contains(&cause) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&cause);
        }
    }
    message
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::execute(cli, &args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(f.error()));
            ExitCode::from(f.code())
        }
    }
}
