//! Iterative self-play: refit the generator on the tool-use set, sample tool
//! trajectories for every task, keep those whose output matches the target,
//! and grow the set.

mod matching;
mod pipeline;

pub use matching::{matches, normalize_answer, MatchSpec};
pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutcome, Progress};

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DatasetError, Provenance, TaskExample, ToolUseRecord};
use crate::eval::{worker_pool, EvalError};
use crate::generator::sampling::mix_seed;
use crate::generator::{Generator, GeneratorError, SamplingSpec};
use crate::protocol::{
    drive_generation, DriveConfig, DriveError, DEFAULT_BUDGET_CHARS, DEFAULT_INPUT_LABEL,
};
use crate::tools::ToolRegistry;

pub const DEFAULT_ROUNDS: usize = 3;
pub const DEFAULT_SAMPLES_PER_EXAMPLE: usize = 600;
pub const DEFAULT_MAX_ACCEPTS: usize = 4;

#[derive(Debug, Error)]
pub enum SelfPlayError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("persistence failed: {0}")]
    Persistence(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayConfig {
    pub rounds: usize,
    pub samples_per_example: usize,
    pub match_spec: MatchSpec,
    /// Applied to both the tool-call leg and the output leg.
    pub sampling: SamplingSpec,
    pub max_accepts_per_example: usize,
    pub dedup: bool,
    pub budget_chars: usize,
    pub jobs: usize,
    pub input_label: String,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            rounds: DEFAULT_ROUNDS,
            samples_per_example: DEFAULT_SAMPLES_PER_EXAMPLE,
            match_spec: MatchSpec::math(),
            sampling: SamplingSpec::default(),
            max_accepts_per_example: DEFAULT_MAX_ACCEPTS,
            dedup: true,
            budget_chars: DEFAULT_BUDGET_CHARS,
            jobs: default_jobs(),
            input_label: DEFAULT_INPUT_LABEL.to_string(),
        }
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl SelfPlayConfig {
    pub fn validate(&self) -> Result<(), SelfPlayError> {
        let fail = |m: &str| Err(SelfPlayError::Config(m.to_string()));
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.samples_per_example == 0 {
            return fail("samples per example must be at least 1");
        }
        if self.max_accepts_per_example == 0 {
            return fail("max accepts per example must be at least 1");
        }
        if self.budget_chars == 0 {
            return fail("budget must be positive");
        }
        if self.jobs == 0 {
            return fail("jobs must be at least 1");
        }
        self.match_spec.validate().map_err(SelfPlayError::Config)?;
        self.sampling
            .validate()
            .map_err(|e| SelfPlayError::Config(e.to_string()))
    }

    fn drive_config(&self, seed: u64) -> DriveConfig {
        DriveConfig {
            budget_chars: self.budget_chars,
            max_hops: 1,
            sampling: self.sampling.with_seed(seed),
            input_label: self.input_label.clone(),
        }
    }
}

/// Why a sampled trajectory was not accepted.
pub mod rejection {
    pub const WRONG_OUTPUT: &str = "wrong_output";
    pub const NO_TOOL_CALL: &str = "no_tool_call";
    pub const TOOL_ERROR: &str = "tool_error";
    pub const UNKNOWN_TOOL: &str = "unknown_tool";
    pub const BUDGET_EXHAUSTED: &str = "budget_exhausted";
    pub const MALFORMED: &str = "malformed";
    pub const HOP_LIMIT: &str = "hop_limit";
    pub const NO_OUTPUT: &str = "no_output";
    pub const DUPLICATE: &str = "duplicate";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleStats {
    pub id: String,
    pub samples: usize,
    /// Trajectories that passed the filter, duplicates included.
    pub matched: usize,
    /// Matched trajectories added to the tool-use set.
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub d_before: usize,
    pub d_after: usize,
    pub examples: usize,
    /// Examples with at least one trajectory passing the filter.
    pub examples_with_match: usize,
    pub samples: usize,
    pub matched: usize,
    pub accepted: usize,
    /// `examples_with_match / examples`.
    pub acceptance_rate: f64,
    pub rejected: BTreeMap<String, usize>,
    pub per_example: Vec<ExampleStats>,
}

impl RoundReport {
    pub fn summary(&self) -> String {
        format!(
            "round {}: |D| {} -> {}, {} matched and {} new of {} samples, {}/{} examples ({:.1}%)",
            self.round,
            self.d_before,
            self.d_after,
            self.matched,
            self.accepted,
            self.samples,
            self.examples_with_match,
            self.examples,
            100.0 * self.acceptance_rate
        )
    }
}

type DedupKey = (String, String, String, String, String);

fn owned_key(r: &ToolUseRecord) -> DedupKey {
    let (a, b, c, d, e) = r.dedup_key();
    (a.into(), b.into(), c.into(), d.into(), e.into())
}

fn sample_example(
    gen: &dyn Generator,
    registry: &ToolRegistry,
    task: &TaskExample,
    index: usize,
    known: &HashSet<DedupKey>,
    cfg: &SelfPlayConfig,
    round: u32,
) -> Result<(Vec<ToolUseRecord>, ExampleStats), GeneratorError> {
    let mut stats = ExampleStats {
        id: task.id.clone(),
        samples: 0,
        matched: 0,
        accepted: 0,
        rejected: BTreeMap::new(),
    };
    let mut local = HashSet::new();
    let mut accepted = Vec::new();
    let reject = |stats: &mut ExampleStats, why: &str| {
        *stats.rejected.entry(why.to_string()).or_default() += 1;
    };
    for n in 0..cfg.samples_per_example {
        if stats.accepted >= cfg.max_accepts_per_example {
            break;
        }
        stats.samples += 1;
        let seed = mix_seed(&[cfg.sampling.seed, round as u64, index as u64, n as u64]);
        let trajectory = match drive_generation(gen, registry, &task.input, &cfg.drive_config(seed)) {
            Ok(t) => t,
            Err(DriveError::Generator(e)) => return Err(e),
            Err(e) => {
                let why = match e {
                    DriveError::UnknownTool { .. } => rejection::UNKNOWN_TOOL,
                    DriveError::BudgetExhausted { .. } => rejection::BUDGET_EXHAUSTED,
                    DriveError::HopLimitExceeded { .. } => rejection::HOP_LIMIT,
                    DriveError::NoOutput { .. } => rejection::NO_OUTPUT,
                    _ => rejection::MALFORMED,
                };
                reject(&mut stats, why);
                continue;
            }
        };
        if trajectory.flagged() {
            reject(&mut stats, rejection::TOOL_ERROR);
            continue;
        }
        let (Some(hop), Some(output)) = (trajectory.sequence.hops.first(), trajectory.sequence.output())
        else {
            reject(&mut stats, rejection::NO_TOOL_CALL);
            continue;
        };
        if trajectory.sequence.hops.len() != 1 {
            reject(&mut stats, rejection::HOP_LIMIT);
            continue;
        }
        if !matches(output, &task.target, &cfg.match_spec) {
            reject(&mut stats, rejection::WRONG_OUTPUT);
            continue;
        }
        stats.matched += 1;
        let record = ToolUseRecord {
            id: task.id.clone(),
            input: task.input.clone(),
            tool_label: hop.call.label.clone(),
            tool_input: hop.call.body.clone(),
            tool_output: hop.result.body.clone(),
            output: output.to_string(),
            round,
            provenance: Provenance::SelfPlay,
        };
        if cfg.dedup {
            let key = owned_key(&record);
            if known.contains(&key) || !local.insert(key) {
                reject(&mut stats, rejection::DUPLICATE);
                continue;
            }
        }
        stats.accepted += 1;
        accepted.push(record);
    }
    Ok((accepted, stats))
}

/// One round: refit on `dataset`, sample every task, return the grown set.
///
/// Generators without update support are sampled as they are. Tasks run in
/// parallel; accepted records are appended in task order, so the result only
/// depends on the seeds.
pub fn run_round(
    gen: &mut dyn Generator,
    registry: &ToolRegistry,
    tasks: &[TaskExample],
    dataset: &[ToolUseRecord],
    cfg: &SelfPlayConfig,
    round: u32,
) -> Result<(Vec<ToolUseRecord>, RoundReport), SelfPlayError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(SelfPlayError::Config("tool-use set is empty; a bootstrap set is required".into()));
    }
    if tasks.is_empty() {
        return Err(SelfPlayError::Config("task set is empty".into()));
    }
    if gen.capabilities().supports_update {
        gen.update(dataset)?;
    } else {
        log::warn!("generator does not support update; sampling without refitting");
    }
    let gen: &dyn Generator = gen;
    let known: HashSet<DedupKey> = if cfg.dedup {
        dataset.iter().map(owned_key).collect()
    } else {
        HashSet::new()
    };
    let pool = worker_pool(cfg.jobs.min(gen.capabilities().concurrent_requests))?;
    let results: Vec<(Vec<ToolUseRecord>, ExampleStats)> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| sample_example(gen, registry, task, i, &known, cfg, round))
            .collect::<Result<_, _>>()
    })?;

    let mut next = dataset.to_vec();
    let mut seen = known;
    let mut report = RoundReport {
        round,
        d_before: dataset.len(),
        d_after: 0,
        examples: tasks.len(),
        examples_with_match: 0,
        samples: 0,
        matched: 0,
        accepted: 0,
        acceptance_rate: 0.0,
        rejected: BTreeMap::new(),
        per_example: Vec::with_capacity(tasks.len()),
    };
    for (records, mut stats) in results {
        for record in records {
            // Two tasks may share an input; keep the set free of duplicates.
            if cfg.dedup && !seen.insert(owned_key(&record)) {
                stats.accepted -= 1;
                *stats.rejected.entry(rejection::DUPLICATE.into()).or_default() += 1;
                continue;
            }
            next.push(record);
        }
        report.samples += stats.samples;
        report.matched += stats.matched;
        report.accepted += stats.accepted;
        if stats.matched > 0 {
            report.examples_with_match += 1;
        }
        for (k, v) in &stats.rejected {
            *report.rejected.entry(k.clone()).or_default() += v;
        }
        report.per_example.push(stats);
    }
    report.d_after = next.len();
    report.acceptance_rate = report.examples_with_match as f64 / report.examples as f64;
    log::info!("{}", report.summary());
    Ok((next, report))
}
