use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use companion_core::backend::{ChatBackend, HttpBackend};
use companion_core::companion::collect_proxy_labels;
use companion_core::experiment::{build_report, run_experiment, summarize_run, REPORT_FILE};
use companion_core::probe::{
    evaluate_layer, fit_logistic, select_layer, FitOptions, LayerReport, ProbeModel,
};
use companion_core::record::{load_runs, persist_run};
use companion_core::scripted::{ScriptedAgent, ScriptedBehavior, ScriptedJudge, ScriptedMode};
use companion_core::trace::{dataset_from_traces, load_trace, TraceRecord};
use companion_core::{
    run_session, BackendHandle, CompanionConfig, Condition, InterventionMode, Sampling,
    SessionBackends, SessionConfig, Task,
};

use crate::config::{read_json, PlanFile};

pub struct RunArgs {
    pub task_file: PathBuf,
    pub condition: Condition,
    pub steps: u32,
    pub watch_every: u32,
    pub mode: InterventionMode,
    pub backend_url: Option<String>,
    pub model: String,
    pub judge_url: Option<String>,
    pub judge_model: Option<String>,
    pub probe_model: Option<PathBuf>,
    pub scripted: Option<ScriptedMode>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn http(url: &str, model: &str) -> Result<Arc<dyn ChatBackend>> {
    Ok(Arc::new(HttpBackend::new(BackendHandle::new(url, model))?))
}

pub fn run(args: RunArgs) -> Result<()> {
    let task: Task = read_json(&args.task_file)?;
    let mut companion = CompanionConfig {
        watch_every: args.watch_every,
        mode: args.mode,
        ..CompanionConfig::default()
    };
    companion = companion.validate()?;
    let agent: Arc<dyn ChatBackend> = match (&args.scripted, &args.backend_url) {
        (Some(mode), _) => Arc::new(ScriptedAgent::new(ScriptedBehavior::new(
            *mode, 1.0, args.seed,
        ))),
        (None, Some(url)) => http(url, &args.model)?,
        (None, None) => bail!("either --backend-url or --scripted is required"),
    };
    let judge: Option<Arc<dyn ChatBackend>> = match (&args.judge_url, &args.backend_url) {
        _ if args.condition != Condition::LlmCompanion => None,
        (Some(url), _) | (None, Some(url)) => Some(http(
            url,
            args.judge_model.as_deref().unwrap_or(&args.model),
        )?),
        (None, None) => Some(Arc::new(ScriptedJudge::heuristic())),
    };
    let probe = match &args.probe_model {
        Some(p) => Some(Arc::new(ProbeModel::load(p)?)),
        None => None,
    };
    let run_id = format!("{}__{}__seed{}", task.id, args.condition, args.seed);
    let cfg = SessionConfig {
        run_id,
        task,
        condition: args.condition,
        n_steps: args.steps,
        companion,
        agent_sampling: Sampling::agent(),
        seed: args.seed,
    };
    let backends = SessionBackends {
        agent,
        judge,
        probe,
        alerts: None,
    };
    let (record, failure) = match run_session(&cfg, &backends) {
        Ok(r) => (r, None),
        Err(f) => (*f.record, Some(f.error)),
    };
    let path = persist_run(&args.out_dir, &record)?;
    let summary = summarize_run(&record);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("run record written to {}", path.display());
    if let Some(e) = failure {
        bail!("run aborted: {e}");
    }
    Ok(())
}

pub fn experiment(plan_file: &Path, out_dir: &Path) -> Result<()> {
    let file: PlanFile = read_json(plan_file)?;
    let factory = file.backends.build()?;
    fs::create_dir_all(out_dir)?;
    let out = run_experiment(&file.plan, factory.as_ref(), Some(out_dir))?;
    let incomplete = out.report.tasks.iter().filter(|t| t.incomplete).count();
    println!(
        "{} runs written to {}; {} task(s) incomplete",
        out.records.len(),
        out_dir.display(),
        incomplete
    );
    Ok(())
}

pub struct CollectArgs {
    pub tasks: PathBuf,
    pub steps_per_task: u32,
    pub backend_url: Option<String>,
    pub model: String,
    pub judge_url: Option<String>,
    pub scripted: Option<ScriptedMode>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn collect_labels(args: CollectArgs) -> Result<()> {
    let tasks: Vec<Task> = read_json(&args.tasks)?;
    let mut out =
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (mut neg, mut pos) = (0usize, 0usize);
    for task in &tasks {
        let agent: Arc<dyn ChatBackend> = match (&args.scripted, &args.backend_url) {
            (Some(mode), _) => Arc::new(ScriptedAgent::new(ScriptedBehavior::new(
                *mode, 1.0, args.seed,
            ))),
            (None, Some(url)) => http(url, &args.model)?,
            (None, None) => bail!("either --backend-url or --scripted is required"),
        };
        let judge: Arc<dyn ChatBackend> = match (&args.judge_url, &args.backend_url) {
            (Some(url), _) | (None, Some(url)) => http(url, &args.model)?,
            (None, None) => Arc::new(ScriptedJudge::heuristic()),
        };
        let run_id = format!("{}__labels__seed{}", task.id, args.seed);
        let labels = collect_proxy_labels(
            agent.as_ref(),
            judge.as_ref(),
            &Sampling::agent(),
            task,
            &run_id,
            args.steps_per_task,
            CompanionConfig::default().history_window,
        )?;
        for l in labels {
            if l.label == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            serde_json::to_writer(&mut out, &l)?;
            out.write_all(b"\n")?;
        }
    }
    let total = (neg + pos).max(1) as f64;
    println!(
        "ON_TRACK {neg} ({:.1}%), degraded {pos} ({:.1}%)",
        100.0 * neg as f64 / total,
        100.0 * pos as f64 / total
    );
    Ok(())
}

pub struct TrainArgs {
    pub traces: Vec<PathBuf>,
    pub layers: Vec<u32>,
    pub l2: f64,
    pub folds: usize,
    pub out: PathBuf,
}

fn fmt_auc(v: Option<f64>) -> String {
    v.map_or_else(|| "UNDEFINED".to_string(), |a| format!("{a:.3}"))
}

pub fn train_probe(args: TrainArgs) -> Result<Vec<LayerReport>> {
    let mut records: Vec<TraceRecord> = Vec::new();
    for p in &args.traces {
        records.extend(load_trace(p).with_context(|| format!("loading trace {}", p.display()))?);
    }
    for r in &records {
        r.verify_pooling(1e-5)?;
    }
    let sources: Vec<String> = args
        .traces
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let opts = FitOptions {
        l2_strength: args.l2,
        ..FitOptions::default()
    };
    let mut reports = Vec::new();
    println!("layer  n_pos  n_neg  train_auroc  cv_auroc");
    for &layer in &args.layers {
        let ds = dataset_from_traces(&records, layer, sources.clone())?;
        let rep = evaluate_layer(&ds, args.folds, &opts)?;
        println!(
            "{:>5}  {:>5}  {:>5}  {:>11}  {:>8}",
            rep.layer,
            rep.n_pos,
            rep.n_neg,
            fmt_auc(rep.train_auroc),
            fmt_auc(rep.cv_auroc)
        );
        reports.push(rep);
    }
    let report_path = args.out.with_extension("layers.json");
    fs::write(&report_path, serde_json::to_string_pretty(&reports)?)?;
    let best = select_layer(&reports)?;
    let ds = dataset_from_traces(&records, best, sources)?;
    let model = fit_logistic(&ds, &opts)?;
    model.save(&args.out)?;
    println!(
        "selected layer {best}; model written to {}",
        args.out.display()
    );
    Ok(reports)
}

pub fn eval(runs_dir: &Path, out: Option<&Path>) -> Result<()> {
    let records = load_runs(runs_dir)?;
    if records.is_empty() {
        bail!("no run records in {}", runs_dir.display());
    }
    let report = build_report(&records);
    let json = report.to_json();
    match out {
        Some(p) => fs::write(p, &json)?,
        None => fs::write(runs_dir.join(REPORT_FILE), &json)?,
    }
    for c in &report.conditions {
        println!(
            "{:<16} runs={:<3} quality={:<8} jaccard={:<8} overhead%={:<8} d_quality={}",
            c.condition.as_str(),
            c.complete_runs,
            fmt_opt(c.mean_quality.mean),
            fmt_opt(c.mean_jaccard.mean),
            fmt_opt(c.overhead_pct.mean),
            match (c.d_quality.mean, c.d_quality.sd) {
                (Some(m), Some(s)) => format!("{m:+.3} ± {s:.3}"),
                (Some(m), None) => format!("{m:+.3}"),
                _ => "-".into(),
            }
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}
