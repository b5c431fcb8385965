use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use talm::datasets::{
    build_corpus_from_contexts, generate_synthetic, load_corpus, load_task_set, load_tool_use_set,
    save_task_set, save_tool_use_set, write_jsonl_to, SyntheticOp, SyntheticSpec, TaskExample, TaskKind,
};
use talm::eval::{curve_summary, evaluate, write_curve_csv, write_verdicts_jsonl, EvalConfig};
use talm::generator::wire::{serve, serve_tcp};
use talm::generator::SamplingSpec;
use talm::protocol::{DEFAULT_INPUT_LABEL, DEFAULT_MAX_HOPS};
use talm::selfplay::{default_jobs, run_pipeline, PipelineOptions, SelfPlayConfig, SelfPlayError};
use talm::tools::validity::classify;
use talm::tools::{
    check_validity, solve, Bm25Index, Bm25Params, FormulaError, IndexError, ToolRegistry, ValidityTolerance,
};

use crate::failure::{Classify, CmdResult, Failure};
use crate::manifest::{replace_out, RunManifest, MANIFEST_FILE};
use crate::specs::{build_registry, parse_tools, GeneratorSpec, ToolSpec};
use crate::{
    CheckValidityArgs, Cli, Command, EvalArgs, IndexArgs, RerunArgs, SearchArgs, SelfplayArgs, ServeArgs,
    SolveArgs, SynthArgs, TaskArgs,
};

/// Runs a parsed command. `args` is the argument list it was parsed from and
/// is recorded in the manifest.
pub fn execute(cli: Cli, args: &[String]) -> CmdResult<Option<RunManifest>> {
    let jobs = cli.jobs.unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    match cli.command {
        Command::Index(a) => cmd_index(a, args).map(Some),
        Command::Search(a) => cmd_search(a, args),
        Command::Solve(a) => cmd_solve(a, args),
        Command::Selfplay(a) => cmd_selfplay(a, jobs, args).map(Some),
        Command::Eval(a) => cmd_eval(a, jobs, args).map(Some),
        Command::CheckValidity(a) => cmd_check_validity(a, args),
        Command::Synth(a) => cmd_synth(a, args).map(Some),
        Command::Serve(a) => cmd_serve(a).map(|_| None),
        Command::Rerun(a) => cmd_rerun(a).map(Some),
    }
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).io(format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text).io(format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).io("serializing")?;
    write_text(path, &(text + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CmdResult<()> {
    let file = fs::File::create(path).io(format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_jsonl_to(&mut out, items)
        .and_then(|_| out.flush())
        .io(format!("writing {}", path.display()))
}

fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn cmd_index(a: IndexArgs, args: &[String]) -> CmdResult<RunManifest> {
    let params = Bm25Params { k1: a.k1, b: a.b };
    params.validate().usage("invalid BM25 parameters")?;
    let corpus = if a.from_tasks {
        let tasks = load_task_set(&a.corpus, TaskKind::Qa).usage(format!("loading {}", a.corpus.display()))?;
        build_corpus_from_contexts(&tasks).usage("building corpus from contexts")?
    } else {
        load_corpus(&a.corpus).usage(format!("loading {}", a.corpus.display()))?
    };
    let mut manifest = RunManifest::new("index", args);
    manifest.add_input(&a.corpus)?;
    manifest.config = snapshot(&params);
    let index = Bm25Index::build(corpus, params).map_err(|e| match e {
        IndexError::DuplicateDocId(_) | IndexError::InvalidParams(_) => Failure::Usage(e.into()),
        other => Failure::Domain(anyhow::Error::from(other).context("building index")),
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    index.save(&a.out).io(format!("writing {}", a.out.display()))?;
    println!(
        "indexed {} documents (mean length {:.1} tokens) into {}",
        index.doc_count(),
        index.avg_doc_length(),
        a.out.display()
    );
    manifest.add_artifact("index", &a.out)?;
    manifest.write(&PathBuf::from(format!("{}.{MANIFEST_FILE}", a.out.display())))?;
    Ok(manifest)
}

#[derive(Serialize)]
struct HitLine<'a> {
    rank: usize,
    doc_id: &'a str,
    score: f64,
    text: &'a str,
}

fn cmd_search(a: SearchArgs, args: &[String]) -> CmdResult<Option<RunManifest>> {
    let index = Bm25Index::load(&a.index).usage(format!("loading {}", a.index.display()))?;
    let hits = index.search(&a.query, a.k).usage("search")?;
    let lines: Vec<HitLine> = hits
        .iter()
        .enumerate()
        .map(|(i, h)| HitLine {
            rank: i + 1,
            doc_id: &h.doc_id,
            score: h.score,
            text: index.document_text(&h.doc_id).unwrap_or(""),
        })
        .collect();
    for l in &lines {
        let preview: String = l.text.chars().take(80).collect();
        println!("{}\t{}\t{:.6}\t{}", l.rank, l.doc_id, l.score, preview.replace('\n', " "));
    }
    let Some(out) = a.out else { return Ok(None) };
    create_dir(&out)?;
    let mut manifest = RunManifest::new("search", args);
    manifest.add_input(&a.index)?;
    manifest.config = serde_json::json!({ "query": a.query, "k": a.k });
    let hits_path = out.join("hits.jsonl");
    write_jsonl(&hits_path, &lines)?;
    manifest.add_artifact("hits", &hits_path)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(Some(manifest))
}

fn cmd_solve(a: SolveArgs, args: &[String]) -> CmdResult<Option<RunManifest>> {
    let value = solve(&a.formula).map_err(|e| match e {
        FormulaError::Math(_) => Failure::Domain(e.into()),
        other => Failure::Usage(other.into()),
    })?;
    println!("{value}");
    let Some(out) = a.out else { return Ok(None) };
    create_dir(&out)?;
    let mut manifest = RunManifest::new("solve", args);
    manifest.config = serde_json::json!({ "formula": a.formula });
    let path = out.join("result.txt");
    write_text(&path, &format!("{value}\n"))?;
    manifest.add_artifact("result", &path)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(Some(manifest))
}

/// Inputs shared by self-play and eval: tasks, generator, registry.
struct Setup {
    tasks: Vec<TaskExample>,
    tool_specs: Vec<ToolSpec>,
    registry: ToolRegistry,
    manifest: RunManifest,
}

fn setup(command: &str, t: &TaskArgs, args: &[String]) -> CmdResult<Setup> {
    let mut manifest = RunManifest::new(command, args);
    let set = load_task_set(&t.tasks, t.task_kind.into()).usage(format!("loading {}", t.tasks.display()))?;
    for f in &set.flagged {
        log::warn!("{}:{}: gold formula of {} does not parse: {}", t.tasks.display(), f.line, f.id, f.message);
    }
    manifest.add_input(&t.tasks)?;
    let tool_specs = parse_tools(&t.tools).map_err(Failure::usage)?;
    for spec in &tool_specs {
        for path in spec.input_files() {
            manifest.add_input(&path)?;
        }
    }
    for path in t.generator.input_files() {
        manifest.add_input(&path)?;
    }
    let registry = build_registry(&tool_specs)?;
    manifest.generator = Some(generator_label(&t.generator));
    manifest.reproducible = t.generator.is_builtin()
        && registry.descriptors().iter().all(|d| d.deterministic);
    manifest.tools = registry.descriptors();
    Ok(Setup {
        tasks: set.records,
        tool_specs,
        registry,
        manifest,
    })
}

fn generator_label(spec: &GeneratorSpec) -> String {
    match spec {
        GeneratorSpec::Scripted(p) => format!("scripted:{}", p.display()),
        GeneratorSpec::Trainable { data: None } => "trainable".into(),
        GeneratorSpec::Trainable { data: Some(p) } => format!("trainable:data={}", p.display()),
        GeneratorSpec::ExternalCommand(c) => format!("external:cmd={c}"),
        GeneratorSpec::ExternalTcp(a) => format!("external:tcp={a}"),
    }
}

fn eval_config(t: &TaskArgs, beams: usize, jobs: usize) -> EvalConfig {
    EvalConfig {
        beams,
        match_spec: t.threshold.unwrap_or_else(|| t.task_kind.default_match()),
        max_examples: None,
        tool_enabled: true,
        budget_chars: t.budget,
        max_hops: DEFAULT_MAX_HOPS,
        jobs,
        input_label: DEFAULT_INPUT_LABEL.to_string(),
    }
}

#[derive(Serialize)]
struct SelfplaySnapshot<'a> {
    selfplay: &'a SelfPlayConfig,
    eval: Option<&'a EvalConfig>,
    tools: &'a str,
    task_kind: TaskKind,
}

fn selfplay_failure(e: SelfPlayError) -> Failure {
    match e {
        SelfPlayError::Config(_) => Failure::Usage(e.into()),
        SelfPlayError::Persistence(_) => Failure::Io(e.into()),
        other => Failure::Domain(other.into()),
    }
}

fn cmd_selfplay(a: SelfplayArgs, jobs: usize, args: &[String]) -> CmdResult<RunManifest> {
    let cfg = SelfPlayConfig {
        rounds: a.rounds,
        samples_per_example: a.samples,
        match_spec: a.task.threshold.unwrap_or_else(|| a.task.task_kind.default_match()),
        sampling: SamplingSpec {
            temperature: a.temperature,
            top_k: a.top_k,
            ..SamplingSpec::random(a.seed)
        },
        max_accepts_per_example: a.max_accepts,
        dedup: !a.no_dedup,
        budget_chars: a.task.budget,
        jobs,
        input_label: DEFAULT_INPUT_LABEL.to_string(),
    };
    cfg.validate().map_err(selfplay_failure)?;
    let mut s = setup("selfplay", &a.task, args)?;
    let bootstrap = load_tool_use_set(&a.bootstrap).usage(format!("loading {}", a.bootstrap.display()))?;
    s.manifest.add_input(&a.bootstrap)?;
    let eval_tasks = match &a.eval_tasks {
        Some(path) => {
            s.manifest.add_input(path)?;
            Some(
                load_task_set(path, a.task.task_kind.into())
                    .usage(format!("loading {}", path.display()))?
                    .records,
            )
        }
        None => None,
    };
    let eval_cfg = eval_tasks.as_ref().map(|_| eval_config(&a.task, a.beams, jobs));
    if let Some(c) = &eval_cfg {
        c.validate().usage("invalid evaluation settings")?;
    }
    s.manifest.config = snapshot(&SelfplaySnapshot {
        selfplay: &cfg,
        eval: eval_cfg.as_ref(),
        tools: &a.task.tools,
        task_kind: a.task.task_kind.into(),
    });
    s.manifest.seeds.insert("sampling".into(), a.seed);
    log::debug!("tools: {:?}", s.tool_specs);

    create_dir(&a.out)?;
    let options = PipelineOptions {
        store: Some(a.out.join("rounds")),
        eval: eval_tasks.as_deref().zip(eval_cfg.clone()),
    };
    let mut gen = a.task.generator.build()?;
    let outcome =
        run_pipeline(gen.as_mut(), &s.registry, &s.tasks, &bootstrap, &cfg, &options).map_err(selfplay_failure)?;
    if outcome.resumed_rounds > 0 {
        eprintln!("resumed {} completed round(s) from {}", outcome.resumed_rounds, a.out.join("rounds").display());
    }

    let mut summary = String::new();
    for r in &outcome.reports {
        summary.push_str(&r.summary());
        summary.push('\n');
    }
    if !outcome.curve.is_empty() {
        summary.push_str(&curve_summary(&outcome.curve));
    }
    print!("{summary}");

    let d_path = a.out.join("tool_use.jsonl");
    save_tool_use_set(&d_path, &outcome.dataset).io(format!("writing {}", d_path.display()))?;
    s.manifest.add_artifact("tool_use", &d_path)?;
    let reports_path = a.out.join("round_reports.jsonl");
    write_jsonl(&reports_path, &outcome.reports)?;
    s.manifest.add_artifact("round_reports", &reports_path)?;
    let summary_path = a.out.join("summary.txt");
    write_text(&summary_path, &summary)?;
    s.manifest.add_artifact("summary", &summary_path)?;
    if !outcome.curve.is_empty() {
        let curve_path = a.out.join("curve.csv");
        write_curve_csv(&curve_path, &outcome.curve).io(format!("writing {}", curve_path.display()))?;
        s.manifest.add_artifact("curve", &curve_path)?;
    }
    s.manifest.write(&a.out.join(MANIFEST_FILE))?;
    Ok(s.manifest)
}

fn cmd_eval(a: EvalArgs, jobs: usize, args: &[String]) -> CmdResult<RunManifest> {
    let mut s = setup("eval", &a.task, args)?;
    let cfg = EvalConfig {
        max_examples: a.max_examples,
        tool_enabled: !a.baseline,
        max_hops: a.max_hops,
        ..eval_config(&a.task, a.beams, jobs)
    };
    cfg.validate().usage("invalid evaluation settings")?;
    s.manifest.config = serde_json::json!({
        "eval": snapshot(&cfg),
        "tools": a.task.tools,
        "task_kind": snapshot(&TaskKind::from(a.task.task_kind)),
    });
    let gen = a.task.generator.build()?;
    let report = evaluate(gen.as_ref(), &s.registry, &s.tasks, &cfg).map_err(|e| match e {
        talm::eval::EvalError::EmptyTaskSet | talm::eval::EvalError::Config(_) => Failure::Usage(e.into()),
        other => Failure::Domain(other.into()),
    })?;
    let summary = format!("{}\n", report.summary());
    print!("{summary}");

    create_dir(&a.out)?;
    let verdicts = a.out.join("verdicts.jsonl");
    write_verdicts_jsonl(&verdicts, &report).io(format!("writing {}", verdicts.display()))?;
    s.manifest.add_artifact("verdicts", &verdicts)?;
    let report_path = a.out.join("report.json");
    write_json(
        &report_path,
        &serde_json::json!({
            "n": report.n,
            "correct": report.correct,
            "accuracy": report.accuracy,
            "failures": snapshot(&report.failures),
            "baseline": a.baseline,
        }),
    )?;
    s.manifest.add_artifact("report", &report_path)?;
    let summary_path = a.out.join("summary.txt");
    write_text(&summary_path, &summary)?;
    s.manifest.add_artifact("summary", &summary_path)?;
    s.manifest.write(&a.out.join(MANIFEST_FILE))?;
    Ok(s.manifest)
}

fn cmd_check_validity(a: CheckValidityArgs, args: &[String]) -> CmdResult<Option<RunManifest>> {
    let tol = ValidityTolerance { abs: a.abs, rel: a.rel };
    if !(tol.abs >= 0.0 && tol.rel >= 0.0 && tol.abs.is_finite() && tol.rel.is_finite()) {
        return Err(Failure::usage("tolerances must be finite and non-negative"));
    }
    let set = load_task_set(&a.mathqa, TaskKind::Math).usage(format!("loading {}", a.mathqa.display()))?;
    let pairs: Vec<(String, String)> = set
        .records
        .iter()
        .map(|r| (r.formula.clone().unwrap_or_default(), r.target.clone()))
        .collect();
    let report = check_validity(&pairs, &tol);
    println!("{}", report.summary());
    for (reason, count) in &report.error_breakdown {
        println!("  {reason}: {count}");
    }
    let Some(out) = a.out else { return Ok(None) };
    create_dir(&out)?;
    let mut manifest = RunManifest::new("check-validity", args);
    manifest.add_input(&a.mathqa)?;
    manifest.config = snapshot(&tol);
    let report_path = out.join("validity.json");
    write_json(&report_path, &report)?;
    manifest.add_artifact("report", &report_path)?;
    let invalid: Vec<serde_json::Value> = set
        .records
        .iter()
        .zip(&pairs)
        .filter_map(|(r, (f, t))| classify(f, t, &tol).map(|why| serde_json::json!({ "id": r.id, "reason": why })))
        .collect();
    let invalid_path = out.join("invalid.jsonl");
    write_jsonl(&invalid_path, &invalid)?;
    manifest.add_artifact("invalid", &invalid_path)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(Some(manifest))
}

fn cmd_synth(a: SynthArgs, args: &[String]) -> CmdResult<RunManifest> {
    let operators = a
        .ops
        .iter()
        .map(|s| s.parse::<SyntheticOp>())
        .collect::<Result<Vec<_>, _>>()
        .usage("--ops")?;
    let spec = SyntheticSpec {
        count: a.count,
        operand_min: a.min,
        operand_max: a.max,
        operators,
        seed: a.seed,
        bootstrap: a.bootstrap,
    };
    let set = generate_synthetic(&spec).usage("invalid synthetic spec")?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("synth", args);
    manifest.config = snapshot(&spec);
    manifest.seeds.insert("synthetic".into(), a.seed);
    let tasks = a.out.join("tasks.jsonl");
    save_task_set(&tasks, &set.tasks.records).io(format!("writing {}", tasks.display()))?;
    manifest.add_artifact("tasks", &tasks)?;
    let bootstrap = a.out.join("bootstrap.jsonl");
    save_tool_use_set(&bootstrap, &set.bootstrap).io(format!("writing {}", bootstrap.display()))?;
    manifest.add_artifact("bootstrap", &bootstrap)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} tasks and {} bootstrap records to {}",
        set.tasks.records.len(),
        set.bootstrap.len(),
        a.out.display()
    );
    Ok(manifest)
}

fn cmd_serve(a: ServeArgs) -> CmdResult<()> {
    if !a.generator.is_builtin() {
        return Err(Failure::usage("serve wraps built-in generators only"));
    }
    let mut gen = a.generator.build()?;
    let Some(addr) = a.listen else {
        let stdin = std::io::stdin();
        return serve(gen.as_mut(), stdin.lock(), std::io::stdout().lock()).io("serving on stdio");
    };
    let listener = TcpListener::bind(&addr).usage(format!("binding {addr}"))?;
    let local = listener.local_addr().io("reading bound address")?;
    println!("{local}");
    std::io::stdout().flush().io("writing bound address")?;
    for stream in listener.incoming() {
        let stream = stream.io("accepting connection")?;
        if let Err(e) = serve_tcp(gen.as_mut(), stream) {
            log::warn!("connection ended: {e}");
        }
        if a.once {
            break;
        }
    }
    Ok(())
}

fn cmd_rerun(a: RerunArgs) -> CmdResult<RunManifest> {
    let recorded = RunManifest::read(&a.manifest)?;
    let changed = recorded.changed_inputs();
    if !changed.is_empty() {
        return Err(Failure::usage(format!("inputs changed since the run: {}", changed.join(", "))));
    }
    if !recorded.reproducible {
        log::warn!("the recorded run used an external generator or tool; outputs may differ");
    }
    let args = match &a.out {
        Some(out) => replace_out(&recorded.args, out)
            .ok_or_else(|| Failure::usage("the recorded command has no --out to redirect"))?,
        None => recorded.args.clone(),
    };
    let cli = Cli::try_parse_from(std::iter::once("talm".to_string()).chain(args.iter().cloned()))
        .usage("parsing recorded arguments")?;
    if matches!(cli.command, Command::Rerun(_) | Command::Serve(_)) {
        return Err(Failure::usage("the manifest does not describe a rerunnable command"));
    }
    let fresh = execute(cli, &args)?
        .ok_or_else(|| Failure::usage("the recorded command wrote no manifest"))?;
    let differing: Vec<&str> = recorded
        .artifacts
        .iter()
        .filter(|(name, art)| fresh.artifacts.get(*name).map(|f| &f.sha256) != Some(&art.sha256))
        .map(|(name, _)| name.as_str())
        .collect();
    if !differing.is_empty() {
        return Err(Failure::domain(format!("artifacts differ from the recorded run: {}", differing.join(", "))));
    }
    eprintln!("reproduced {} artifact(s) byte-identically", recorded.artifacts.len());
    Ok(fresh)
}
