//! Multi-round driver with crash-resumable persistence.
//!
//! Store layout:
//! * `progress.json`: completed round count, reports, curve and a fingerprint
//!   of everything that determines the run except the round count;
//! * `tool_use_round_<r>.jsonl`: the tool-use set after round `r`;
//! * `round_reports.jsonl`: one report per completed round.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_round, RoundReport, SelfPlayConfig, SelfPlayError};
use crate::datasets::{load_tool_use_set, save_tool_use_set, write_jsonl_to, TaskExample, ToolUseRecord};
use crate::eval::{evaluate, CurvePoint, EvalConfig};
use crate::generator::Generator;
use crate::tools::ToolRegistry;

pub const PROGRESS_FILE: &str = "progress.json";
pub const REPORTS_FILE: &str = "round_reports.jsonl";

pub fn round_dataset_file(round: u32) -> String {
    format!("tool_use_round_{round}.jsonl")
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions<'a> {
    /// Directory for per-round state; enables resuming.
    pub store: Option<PathBuf>,
    /// Held-out tasks evaluated after bootstrap and after every round.
    pub eval: Option<(&'a [TaskExample], EvalConfig)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub dataset: Vec<ToolUseRecord>,
    pub reports: Vec<RoundReport>,
    pub curve: Vec<CurvePoint>,
    /// Rounds restored from the store instead of being run.
    pub resumed_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub fingerprint: String,
    pub completed_rounds: u32,
    pub reports: Vec<RoundReport>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    config: SelfPlayConfig,
    tasks: &'a [TaskExample],
    bootstrap: &'a [ToolUseRecord],
    eval_tasks: Option<&'a [TaskExample]>,
    eval_config: Option<&'a EvalConfig>,
    tools: Vec<String>,
}

fn fingerprint(
    cfg: &SelfPlayConfig,
    registry: &ToolRegistry,
    tasks: &[TaskExample],
    bootstrap: &[ToolUseRecord],
    options: &PipelineOptions,
) -> String {
    // Rounds and parallelism do not change the results of completed rounds.
    let config = SelfPlayConfig {
        rounds: 0,
        jobs: 0,
        ..cfg.clone()
    };
    let eval_config = options.eval.as_ref().map(|(_, c)| EvalConfig { jobs: 0, ..c.clone() });
    let input = FingerprintInput {
        config,
        tasks,
        bootstrap,
        eval_tasks: options.eval.as_ref().map(|(t, _)| *t),
        eval_config: eval_config.as_ref(),
        tools: registry.descriptors().into_iter().map(|d| d.label).collect(),
    };
    let bytes = serde_json::to_vec(&input).expect("fingerprint input serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn persistence(path: &Path, e: impl std::fmt::Display) -> SelfPlayError {
    SelfPlayError::Persistence(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SelfPlayError> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| persistence(&tmp, e))?;
    file.write_all(bytes).map_err(|e| persistence(&tmp, e))?;
    file.sync_all().map_err(|e| persistence(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| persistence(path, e))
}

struct Store {
    dir: PathBuf,
}

impl Store {
    fn open(dir: &Path) -> Result<Self, SelfPlayError> {
        fs::create_dir_all(dir).map_err(|e| persistence(dir, e))?;
        Ok(Store { dir: dir.to_path_buf() })
    }

    fn load(&self, fingerprint: &str) -> Result<Option<Progress>, SelfPlayError> {
        let path = self.dir.join(PROGRESS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| persistence(&path, e))?;
        let progress: Progress = serde_json::from_str(&text).map_err(|e| persistence(&path, e))?;
        if progress.fingerprint != fingerprint {
            return Err(SelfPlayError::Persistence(format!(
                "{} belongs to a different run; use a fresh output directory",
                path.display()
            )));
        }
        Ok(Some(progress))
    }

    fn dataset(&self, round: u32) -> Result<Vec<ToolUseRecord>, SelfPlayError> {
        Ok(load_tool_use_set(&self.dir.join(round_dataset_file(round)))?)
    }

    fn save(&self, progress: &Progress, dataset: Option<&[ToolUseRecord]>) -> Result<(), SelfPlayError> {
        if let Some(d) = dataset {
            let path = self.dir.join(round_dataset_file(progress.completed_rounds));
            let tmp = path.with_extension("tmp");
            save_tool_use_set(&tmp, d)?;
            fs::rename(&tmp, &path).map_err(|e| persistence(&path, e))?;
        }
        let mut reports = Vec::new();
        write_jsonl_to(&mut reports, &progress.reports).map_err(|e| persistence(&self.dir, e))?;
        write_atomic(&self.dir.join(REPORTS_FILE), &reports)?;
        let json = serde_json::to_vec_pretty(progress).map_err(|e| persistence(&self.dir, e))?;
        write_atomic(&self.dir.join(PROGRESS_FILE), &json)
    }
}

fn eval_point(
    gen: &mut dyn Generator,
    registry: &ToolRegistry,
    dataset: &[ToolUseRecord],
    eval: &(&[TaskExample], EvalConfig),
    round: u32,
    acceptance_rate: Option<f64>,
) -> Result<CurvePoint, SelfPlayError> {
    if gen.capabilities().supports_update {
        gen.update(dataset)?;
    }
    let report = evaluate(&*gen, registry, eval.0, &eval.1)?;
    log::info!("round {round}: accuracy {:.4} on {} examples", report.accuracy, report.n);
    Ok(CurvePoint {
        round,
        accuracy: report.accuracy,
        n: report.n,
        acceptance_rate,
    })
}

/// Runs `cfg.rounds` rounds starting from `bootstrap`. With a store, state is
/// persisted after every round and a rerun picks up after the last completed
/// one. With an eval set, the generator is refit and evaluated on the
/// bootstrap set (round 0) and on the set produced by each round.
pub fn run_pipeline(
    gen: &mut dyn Generator,
    registry: &ToolRegistry,
    tasks: &[TaskExample],
    bootstrap: &[ToolUseRecord],
    cfg: &SelfPlayConfig,
    options: &PipelineOptions,
) -> Result<PipelineOutcome, SelfPlayError> {
    cfg.validate()?;
    if bootstrap.is_empty() {
        return Err(SelfPlayError::Config("bootstrap tool-use set is empty".into()));
    }
    let fp = fingerprint(cfg, registry, tasks, bootstrap, options);
    let store = options.store.as_deref().map(Store::open).transpose()?;

    let mut progress = Progress {
        fingerprint: fp.clone(),
        completed_rounds: 0,
        reports: Vec::new(),
        curve: Vec::new(),
    };
    let mut dataset = bootstrap.to_vec();
    let mut resumed_rounds = 0;
    if let Some(store) = &store {
        if let Some(saved) = store.load(&fp)? {
            if saved.completed_rounds > 0 {
                dataset = store.dataset(saved.completed_rounds)?;
            }
            resumed_rounds = saved.completed_rounds.min(cfg.rounds as u32);
            log::info!("resuming after round {}", saved.completed_rounds);
            progress = saved;
        }
    }

    if let Some(eval) = &options.eval {
        if progress.completed_rounds == 0 && progress.curve.is_empty() {
            let point = eval_point(gen, registry, &dataset, eval, 0, None)?;
            progress.curve.push(point);
            if let Some(store) = &store {
                store.save(&progress, Some(&dataset))?;
            }
        }
    }

    for round in progress.completed_rounds + 1..=cfg.rounds as u32 {
        let (next, report) = run_round(gen, registry, tasks, &dataset, cfg, round)?;
        dataset = next;
        if let Some(eval) = &options.eval {
            let point = eval_point(gen, registry, &dataset, eval, round, Some(report.acceptance_rate))?;
            progress.curve.push(point);
        }
        progress.reports.push(report);
        progress.completed_rounds = round;
        if let Some(store) = &store {
            store.save(&progress, Some(&dataset))?;
        }
    }

    // A store holding more rounds than requested answers with its prefix.
    let keep = cfg.rounds as u32;
    if progress.completed_rounds > keep {
        let store = store.as_ref().expect("only a store can hold extra rounds");
        dataset = store.dataset(keep)?;
        progress.reports.truncate(keep as usize);
        progress.curve.retain(|p| p.round <= keep);
    }
    Ok(PipelineOutcome {
        dataset,
        reports: progress.reports,
        curve: progress.curve,
        resumed_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic, SyntheticSpec};
    use crate::generator::TrainableGenerator;
    use crate::selfplay::MatchSpec;
    use crate::tools::FormulaTool;
    use std::sync::Arc;

    fn setup() -> (Vec<TaskExample>, Vec<ToolUseRecord>, Vec<TaskExample>, ToolRegistry) {
        let set = generate_synthetic(&SyntheticSpec {
            count: 60,
            bootstrap: 8,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let held_out = generate_synthetic(&SyntheticSpec {
            count: 20,
            bootstrap: 0,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let reg = ToolRegistry::new().with(Arc::new(FormulaTool::new())).unwrap();
        (set.tasks.records, set.bootstrap, held_out.tasks.records, reg)
    }

    fn cfg(rounds: usize) -> SelfPlayConfig {
        SelfPlayConfig {
            rounds,
            samples_per_example: 8,
            jobs: 4,
            ..Default::default()
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (tasks, boot, held, reg) = setup();
        let eval_cfg = EvalConfig {
            match_spec: MatchSpec::math(),
            jobs: 4,
            ..Default::default()
        };
        let full_dir = tempfile::tempdir().unwrap();
        let options = PipelineOptions {
            store: Some(full_dir.path().to_path_buf()),
            eval: Some((&held, eval_cfg.clone())),
        };
        let full = run_pipeline(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &cfg(3), &options)
            .unwrap();
        assert_eq!(full.reports.len(), 3);
        assert_eq!(full.curve.len(), 4);
        assert!(full.reports.windows(2).all(|w| w[1].d_before == w[0].d_after));

        let dir = tempfile::tempdir().unwrap();
        let options = PipelineOptions {
            store: Some(dir.path().to_path_buf()),
            eval: Some((&held, eval_cfg)),
        };
        // Stop after round 1, then continue with a fresh generator.
        run_pipeline(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &cfg(1), &options).unwrap();
        let resumed = run_pipeline(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &cfg(3), &options)
            .unwrap();
        assert_eq!(resumed.resumed_rounds, 1);
        assert_eq!(resumed.dataset, full.dataset);
        assert_eq!(resumed.reports, full.reports);
        assert_eq!(resumed.curve, full.curve);
        for r in 1..=3 {
            let name = round_dataset_file(r);
            assert_eq!(
                fs::read(dir.path().join(&name)).unwrap(),
                fs::read(full_dir.path().join(&name)).unwrap()
            );
        }
    }

    #[test]
    fn foreign_store_is_rejected() {
        let (tasks, boot, _, reg) = setup();
        let dir = tempfile::tempdir().unwrap();
        let options = PipelineOptions {
            store: Some(dir.path().to_path_buf()),
            eval: None,
        };
        run_pipeline(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &cfg(1), &options).unwrap();
        let other = SelfPlayConfig {
            samples_per_example: 9,
            ..cfg(1)
        };
        assert!(matches!(
            run_pipeline(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &other, &options),
            Err(SelfPlayError::Persistence(_))
        ));
    }

    #[test]
    fn single_round_pipeline_equals_run_round() {
        let (tasks, boot, _, reg) = setup();
        let out = run_pipeline(
            &mut TrainableGenerator::default(),
            &reg,
            &tasks,
            &boot,
            &cfg(1),
            &PipelineOptions::default(),
        )
        .unwrap();
        let (d, report) = run_round(&mut TrainableGenerator::default(), &reg, &tasks, &boot, &cfg(1), 1).unwrap();
        assert_eq!(out.dataset, d);
        assert_eq!(out.reports, vec![report]);
        assert!(out.curve.is_empty());
    }
}
