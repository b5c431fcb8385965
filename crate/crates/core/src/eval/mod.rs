//! Evaluation harness: beam-decoded inference over a task set, accuracy, a
//! failure taxonomy, and the rounds-versus-accuracy curve.

mod report;

pub use report::{curve_summary, read_curve_csv, write_curve_csv, write_curve_csv_to, write_verdicts_jsonl};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::TaskExample;
use crate::generator::{Generator, SamplingSpec, DEFAULT_BEAM_WIDTH};
use crate::protocol::{
    drive_generation, DriveConfig, DriveError, DEFAULT_BUDGET_CHARS, DEFAULT_INPUT_LABEL,
    DEFAULT_MAX_HOPS,
};
use crate::selfplay::{default_jobs, matches, MatchSpec};
use crate::tools::ToolRegistry;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task set is empty")]
    EmptyTaskSet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Thread pool for per-example work.
pub(crate) fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub beams: usize,
    pub match_spec: MatchSpec,
    pub max_examples: Option<usize>,
    /// `false` runs the plain-model baseline: no tool is reachable.
    pub tool_enabled: bool,
    pub budget_chars: usize,
    pub max_hops: usize,
    pub jobs: usize,
    pub input_label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beams: DEFAULT_BEAM_WIDTH,
            match_spec: MatchSpec::math(),
            max_examples: None,
            tool_enabled: true,
            budget_chars: DEFAULT_BUDGET_CHARS,
            max_hops: DEFAULT_MAX_HOPS,
            jobs: default_jobs(),
            input_label: DEFAULT_INPUT_LABEL.to_string(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.beams == 0 {
            return Err(EvalError::Config("beams must be at least 1".into()));
        }
        if self.budget_chars == 0 {
            return Err(EvalError::Config("budget must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(EvalError::Config("jobs must be at least 1".into()));
        }
        self.match_spec.validate().map_err(EvalError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    WrongOutput,
    UnknownTool,
    ToolError,
    BudgetExhausted,
    /// Generator failures, including text that breaks the protocol.
    GeneratorError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub correct: bool,
    pub target: String,
    pub output: Option<String>,
    pub failure: Option<FailureKind>,
    pub detail: Option<String>,
    /// Sequence text produced, complete or partial.
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub verdicts: Vec<Verdict>,
    pub failures: BTreeMap<FailureKind, usize>,
}

impl EvalReport {
    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Self {
        let n = verdicts.len();
        let correct = verdicts.iter().filter(|v| v.correct).count();
        let mut failures = BTreeMap::new();
        for kind in verdicts.iter().filter_map(|v| v.failure) {
            *failures.entry(kind).or_default() += 1;
        }
        EvalReport {
            n,
            correct,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            verdicts,
            failures,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!("accuracy {:.4} ({}/{})", self.accuracy, self.correct, self.n);
        for (kind, count) in &self.failures {
            s.push_str(&format!(", {}: {count}", serde_json::to_value(kind).unwrap().as_str().unwrap_or("")));
        }
        s
    }
}

/// One point of the rounds-versus-accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: u32,
    pub accuracy: f64,
    pub n: usize,
    pub acceptance_rate: Option<f64>,
}

fn judge(
    gen: &dyn Generator,
    registry: &ToolRegistry,
    task: &TaskExample,
    drive: &DriveConfig,
    spec: &MatchSpec,
) -> Verdict {
    let mut verdict = Verdict {
        id: task.id.clone(),
        correct: false,
        target: task.target.clone(),
        output: None,
        failure: None,
        detail: None,
        text: None,
    };
    match drive_generation(gen, registry, &task.input, drive) {
        Ok(trajectory) => {
            let output = trajectory.sequence.output().unwrap_or_default().to_string();
            verdict.correct = matches(&output, &task.target, spec);
            if !verdict.correct {
                verdict.failure = Some(if trajectory.flagged() {
                    FailureKind::ToolError
                } else {
                    FailureKind::WrongOutput
                });
                verdict.detail = trajectory.tool_errors.first().cloned();
            }
            verdict.output = Some(output);
            verdict.text = Some(trajectory.text());
        }
        Err(e) => {
            verdict.failure = Some(match e {
                DriveError::UnknownTool { .. } => FailureKind::UnknownTool,
                DriveError::BudgetExhausted { .. } => FailureKind::BudgetExhausted,
                _ => FailureKind::GeneratorError,
            });
            verdict.text = e.partial_text().map(str::to_string);
            verdict.detail = Some(e.to_string());
        }
    }
    verdict
}

/// Beam-decodes every task once and scores the outputs. Per-example errors
/// become verdicts; only an empty task set or a bad config fails the call.
///
/// Generators without beam support are decoded greedily.
pub fn evaluate(
    gen: &dyn Generator,
    registry: &ToolRegistry,
    tasks: &[TaskExample],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let tasks = &tasks[..cfg.max_examples.map_or(tasks.len(), |m| m.min(tasks.len()))];
    if tasks.is_empty() {
        return Err(EvalError::EmptyTaskSet);
    }
    let caps = gen.capabilities();
    let sampling = if cfg.beams > 1 && caps.supports_beam {
        SamplingSpec::beam(cfg.beams)
    } else {
        if cfg.beams > 1 {
            log::warn!("generator does not support beam decoding; evaluating greedily");
        }
        SamplingSpec::greedy()
    };
    let drive = DriveConfig {
        budget_chars: cfg.budget_chars,
        max_hops: cfg.max_hops,
        sampling,
        input_label: cfg.input_label.clone(),
    };
    let baseline = ToolRegistry::empty();
    let registry = if cfg.tool_enabled { registry } else { &baseline };
    let pool = worker_pool(cfg.jobs.min(caps.concurrent_requests))?;
    let verdicts: Vec<Verdict> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| judge(gen, registry, t, &drive, &cfg.match_spec))
            .collect()
    });
    Ok(EvalReport::from_verdicts(verdicts))
}
