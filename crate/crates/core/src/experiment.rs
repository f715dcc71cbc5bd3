//! Tasks x conditions x runs orchestration and the evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendHandle, ChatBackend, HttpBackend, Sampling};
use crate::domain::{CompanionConfig, Condition, Task, TaskCategory};
use crate::judge::judge_quality;
use crate::metrics::{
    cohens_d, companion_loss, jaccard, length_trend, mean, overhead_pct, repetition_stats,
    sample_variance, EffectSize, LossBreakdown, StepOutcome,
};
use crate::probe::{fit_logistic, FitOptions, ProbeModel};
use crate::record::{
    persist_run, RecordError, RunEvent, RunHeader, RunRecord, RunStatus, Timing, RUN_SCHEMA_VERSION,
};
use crate::scripted::{
    ScriptedAgent, ScriptedBehavior, ScriptedFeatures, ScriptedJudge, ScriptedMode,
    ScriptedQualityJudge,
};
use crate::session::{run_session, SessionBackends, SessionConfig};
use crate::synthetic::{GaussianClasses, ShiftGeometry};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
/// Consecutive-step Jaccard at or above which a step counts as degraded when
/// scoring companion loss from a run record.
pub const DEGRADED_JACCARD: f64 = 0.5;

fn default_runs() -> u32 {
    3
}

fn default_steps() -> u32 {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub tasks: Vec<Task>,
    pub conditions: Vec<Condition>,
    #[serde(default = "default_runs")]
    pub runs_per_condition: u32,
    #[serde(default = "default_steps")]
    pub n_steps: u32,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub companion: CompanionConfig,
    #[serde(default)]
    pub agent_sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan has no tasks")]
    NoTasks,
    #[error("plan has no conditions")]
    NoConditions,
    #[error("condition {0} listed twice")]
    DuplicateCondition(Condition),
    #[error("task id `{0}` listed twice")]
    DuplicateTask(String),
    #[error("task `{0}` has an empty description")]
    EmptyTask(String),
    #[error("runs_per_condition must be >= 1")]
    NoRuns,
    #[error("n_steps must be >= 1")]
    NoSteps,
    #[error("expected {expected} seeds, found {found}")]
    SeedCount { expected: usize, found: usize },
    #[error("invalid companion config: {0}")]
    Config(String),
}

impl ExperimentPlan {
    pub fn new(tasks: Vec<Task>, conditions: Vec<Condition>, seeds: Vec<u64>) -> Self {
        Self {
            tasks,
            conditions,
            runs_per_condition: seeds.len() as u32,
            n_steps: default_steps(),
            seeds,
            companion: CompanionConfig::default(),
            agent_sampling: Sampling::agent(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.tasks.is_empty() {
            return Err(PlanError::NoTasks);
        }
        if self.conditions.is_empty() {
            return Err(PlanError::NoConditions);
        }
        let mut seen = BTreeSet::new();
        for c in &self.conditions {
            if !seen.insert(*c) {
                return Err(PlanError::DuplicateCondition(*c));
            }
        }
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id.as_str()) {
                return Err(PlanError::DuplicateTask(t.id.clone()));
            }
            t.validate()
                .map_err(|_| PlanError::EmptyTask(t.id.clone()))?;
        }
        if self.runs_per_condition == 0 {
            return Err(PlanError::NoRuns);
        }
        if self.n_steps == 0 {
            return Err(PlanError::NoSteps);
        }
        if self.seeds.len() != self.runs_per_condition as usize {
            return Err(PlanError::SeedCount {
                expected: self.runs_per_condition as usize,
                found: self.seeds.len(),
            });
        }
        self.companion
            .clone()
            .validate()
            .map_err(|e| PlanError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.tasks.len() * self.conditions.len() * self.runs_per_condition as usize
    }
}

/// `run` is 1-based.
pub fn run_id(task_id: &str, condition: Condition, run: u32) -> String {
    format!("{task_id}__{condition}__run{run}")
}

/// Supplies backends for each experiment cell.
pub trait BackendFactory: Sync {
    /// A fresh agent for one run.
    fn agent(
        &self,
        task: &Task,
        condition: Condition,
        seed: u64,
    ) -> Result<Arc<dyn ChatBackend>, BackendError>;
    fn judge(&self) -> Option<Arc<dyn ChatBackend>>;
    fn quality_judge(&self) -> Option<Arc<dyn ChatBackend>>;
    fn probe(&self) -> Option<Arc<ProbeModel>>;
}

/// Backends reached over HTTP.
pub struct HttpSuite {
    pub agent: BackendHandle,
    pub judge: Option<Arc<dyn ChatBackend>>,
    pub quality_judge: Option<Arc<dyn ChatBackend>>,
    pub probe: Option<Arc<ProbeModel>>,
}

impl HttpSuite {
    pub fn new(
        agent: BackendHandle,
        judge: Option<BackendHandle>,
        quality_judge: Option<BackendHandle>,
        probe: Option<ProbeModel>,
    ) -> Result<Self, BackendError> {
        let wrap =
            |h: Option<BackendHandle>| -> Result<Option<Arc<dyn ChatBackend>>, BackendError> {
                Ok(match h {
                    Some(h) => Some(Arc::new(HttpBackend::new(h)?)),
                    None => None,
                })
            };
        HttpBackend::new(agent.clone())?;
        Ok(Self {
            agent,
            judge: wrap(judge)?,
            quality_judge: wrap(quality_judge)?,
            probe: probe.map(Arc::new),
        })
    }
}

impl BackendFactory for HttpSuite {
    fn agent(&self, _: &Task, _: Condition, _: u64) -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(Arc::new(HttpBackend::new(self.agent.clone())?))
    }

    fn judge(&self) -> Option<Arc<dyn ChatBackend>> {
        self.judge.clone()
    }

    fn quality_judge(&self) -> Option<Arc<dyn ChatBackend>> {
        self.quality_judge.clone()
    }

    fn probe(&self) -> Option<Arc<ProbeModel>> {
        self.probe.clone()
    }
}

fn default_sensitivity() -> f64 {
    1.0
}

fn default_feature_dim() -> usize {
    64
}

fn default_layer() -> u32 {
    28
}

/// Offline backends: scripted agents whose failure mode follows the task
/// category, a heuristic judge, a scripted quality judge and a probe trained
/// on synthetic hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSuiteConfig {
    #[serde(default = "default_sensitivity")]
    pub guidance_sensitivity: f64,
    #[serde(default)]
    pub agent_latency_ms: u64,
    #[serde(default)]
    pub judge_latency_ms: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_layer")]
    pub layer: u32,
    /// Per-task overrides of the category default.
    #[serde(default)]
    pub modes: BTreeMap<String, ScriptedMode>,
}

impl Default for ScriptedSuiteConfig {
    fn default() -> Self {
        Self {
            guidance_sensitivity: default_sensitivity(),
            agent_latency_ms: 0,
            judge_latency_ms: 0,
            feature_dim: default_feature_dim(),
            layer: default_layer(),
            modes: BTreeMap::new(),
        }
    }
}

pub struct ScriptedSuite {
    config: ScriptedSuiteConfig,
    classes: Arc<GaussianClasses>,
    probe: Arc<ProbeModel>,
}

impl ScriptedSuite {
    pub fn new(config: ScriptedSuiteConfig) -> Self {
        let classes = Arc::new(GaussianClasses::new(
            config.feature_dim.max(1),
            2.0,
            ShiftGeometry::PerCoordinate,
            42,
        ));
        let ds = classes.dataset(config.layer, 100, 42);
        let probe = fit_logistic(&ds, &FitOptions::default())
            .expect("synthetic data has both classes and finite features");
        Self {
            config,
            classes,
            probe: Arc::new(probe),
        }
    }

    pub fn mode_for(&self, task: &Task) -> ScriptedMode {
        if let Some(m) = self.config.modes.get(&task.id) {
            return *m;
        }
        match task.category {
            TaskCategory::LoopProne => ScriptedMode::Loop,
            TaskCategory::DriftProne => ScriptedMode::Drift,
            TaskCategory::Structured | TaskCategory::Unknown => ScriptedMode::Progress,
        }
    }

    pub fn probe_model(&self) -> Arc<ProbeModel> {
        self.probe.clone()
    }
}

impl BackendFactory for ScriptedSuite {
    fn agent(
        &self,
        task: &Task,
        _: Condition,
        seed: u64,
    ) -> Result<Arc<dyn ChatBackend>, BackendError> {
        let mut behavior =
            ScriptedBehavior::new(self.mode_for(task), self.config.guidance_sensitivity, seed)
                .with_latency(self.config.agent_latency_ms);
        let words = crate::metrics::tokenize_words(&task.description);
        if words.len() >= 4 {
            behavior.topic = words.into_iter().collect();
        }
        Ok(Arc::new(ScriptedAgent::new(behavior).with_features(
            ScriptedFeatures {
                layer: self.config.layer,
                classes: self.classes.clone(),
                seed: 7,
            },
        )))
    }

    fn judge(&self) -> Option<Arc<dyn ChatBackend>> {
        Some(Arc::new(
            ScriptedJudge::heuristic().with_latency(self.config.judge_latency_ms),
        ))
    }

    fn quality_judge(&self) -> Option<Arc<dyn ChatBackend>> {
        Some(Arc::new(ScriptedQualityJudge))
    }

    fn probe(&self) -> Option<Arc<ProbeModel>> {
        Some(self.probe.clone())
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub report: EvalReport,
}

fn failed_cell(cfg: &SessionConfig, error: String) -> RunRecord {
    let mut r = RunRecord::new(RunHeader {
        schema_version: RUN_SCHEMA_VERSION,
        run_id: cfg.run_id.clone(),
        task: cfg.task.clone(),
        condition: cfg.condition,
        companion: cfg.companion.clone(),
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        agent_sampling: cfg.agent_sampling.clone(),
        probe_layer: None,
    });
    r.events.push(RunEvent::Timing(Timing {
        t_agent: 0.0,
        t_companion: 0.0,
        wall: 0.0,
        status: RunStatus::Aborted,
        error: Some(error),
    }));
    r
}

/// Scores every step of `record` with the quality judge. Judge failures
/// leave the step unscored.
pub fn attach_quality(record: &mut RunRecord, judge: &dyn ChatBackend) {
    let task = record.header.task.clone();
    for e in &mut record.events {
        if let RunEvent::Step { step, quality } = e {
            match judge_quality(judge, &task, step) {
                Ok(q) => *quality = Some(q),
                Err(err) => log::warn!(
                    "run {} step {}: quality judge failed: {err}",
                    record.header.run_id,
                    step.index
                ),
            }
        }
    }
}

/// Runs every cell of the plan. Failed cells are kept as ABORTED records and
/// flagged in the report. With `out_dir`, each record and the report are
/// written there.
pub fn run_experiment(
    plan: &ExperimentPlan,
    backends: &dyn BackendFactory,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput, ExperimentError> {
    plan.validate()?;
    let mut records = Vec::with_capacity(plan.cell_count());
    for task in &plan.tasks {
        for &condition in &plan.conditions {
            for (r, &seed) in plan.seeds.iter().enumerate() {
                let cfg = SessionConfig {
                    run_id: run_id(&task.id, condition, r as u32 + 1),
                    task: task.clone(),
                    condition,
                    n_steps: plan.n_steps,
                    companion: plan.companion.clone(),
                    agent_sampling: plan.agent_sampling.clone(),
                    seed,
                };
                let mut record = match backends.agent(task, condition, seed) {
                    Err(e) => failed_cell(&cfg, e.to_string()),
                    Ok(agent) => {
                        let sb = SessionBackends {
                            agent,
                            judge: (condition == Condition::LlmCompanion)
                                .then(|| backends.judge())
                                .flatten(),
                            probe: (condition == Condition::ProbeCompanion)
                                .then(|| backends.probe())
                                .flatten(),
                            alerts: None,
                        };
                        match run_session(&cfg, &sb) {
                            Ok(rec) => rec,
                            Err(failure) => {
                                log::warn!("cell {} incomplete: {}", cfg.run_id, failure.error);
                                *failure.record
                            }
                        }
                    }
                };
                if let Some(q) = backends.quality_judge() {
                    attach_quality(&mut record, q.as_ref());
                }
                if let Some(dir) = out_dir {
                    persist_run(dir, &record)?;
                }
                records.push(record);
            }
        }
    }
    let report = build_report(&records);
    if let Some(dir) = out_dir {
        fs::write(dir.join(REPORT_FILE), report.to_json())?;
    }
    Ok(ExperimentOutput { records, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task_id: String,
    pub category: TaskCategory,
    pub condition: Condition,
    pub seed: u64,
    pub status: RunStatus,
    pub steps: usize,
    pub mean_jaccard: Option<f64>,
    pub max_jaccard: Option<f64>,
    pub length_trend: Option<f64>,
    /// Mean composite judge score over scored steps.
    pub mean_quality: Option<f64>,
    pub interventions: usize,
    pub overhead_pct: Option<f64>,
    pub loss: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub effect: Option<EffectSize>,
    /// Why `effect` is missing.
    pub note: Option<String>,
}

impl EffectEntry {
    fn of(treatment: &[f64], control: &[f64]) -> Self {
        match cohens_d(treatment, control) {
            Ok(e) => Self {
                effect: Some(e),
                note: None,
            },
            Err(err) => Self {
                effect: None,
                note: Some(err.to_string()),
            },
        }
    }

    pub fn d(&self) -> Option<f64> {
        self.effect.as_ref().map(|e| e.d)
    }
}

/// Companion condition against the baseline runs of the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub condition: Condition,
    pub quality: EffectEntry,
    pub repetition_mean: EffectEntry,
    pub repetition_max: EffectEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub category: TaskCategory,
    /// Some run of this task did not complete.
    pub incomplete: bool,
    pub incomplete_runs: Vec<String>,
    pub comparisons: Vec<Comparison>,
}

/// Mean and sample SD of a set of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Self {
            n: values.len(),
            mean: (!values.is_empty()).then(|| mean(values)),
            sd: (values.len() >= 2).then(|| sample_variance(values).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub complete_runs: usize,
    pub mean_quality: Spread,
    pub mean_jaccard: Spread,
    pub overhead_pct: Spread,
    pub loss: Spread,
    pub interventions: usize,
    /// Per-task effect sizes against baseline. Empty for the baseline itself.
    pub d_quality: Spread,
    pub d_repetition_mean: Spread,
    pub d_repetition_max: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: TaskCategory,
    pub condition: Condition,
    pub tasks: usize,
    pub d_quality: Spread,
    pub d_repetition_mean: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub runs: Vec<RunSummary>,
    pub tasks: Vec<TaskReport>,
    pub conditions: Vec<ConditionSummary>,
    pub categories: Vec<CategorySummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn task(&self, id: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn condition(&self, c: Condition) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|s| s.condition == c)
    }
}

fn step_outcomes(record: &RunRecord) -> Vec<StepOutcome> {
    let steps: Vec<_> = record.steps().map(|(s, _)| s).collect();
    let mut fired = BTreeSet::new();
    for e in &record.events {
        match e {
            RunEvent::Assessment { assessment, .. } if assessment.proposed_guidance().is_some() => {
                fired.insert(assessment.at_step);
            }
            RunEvent::ProbeScore {
                step, fired: true, ..
            } => {
                fired.insert(*step);
            }
            _ => {}
        }
    }
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepOutcome {
            degraded: i > 0 && jaccard(&steps[i - 1].response, &s.response) >= DEGRADED_JACCARD,
            intervened: fired.contains(&s.index),
        })
        .collect()
}

pub fn summarize_run(record: &RunRecord) -> RunSummary {
    let history = record.history();
    let rep = repetition_stats(&history).ok();
    let scores: Vec<f64> = record
        .steps()
        .filter_map(|(_, q)| q.map(|q| q.composite))
        .collect();
    let overhead = record
        .timing()
        .and_then(|t| overhead_pct(t.t_companion, t.t_agent).ok());
    let outcomes = step_outcomes(record);
    let loss = (!outcomes.is_empty())
        .then(|| {
            companion_loss(
                &outcomes,
                overhead.unwrap_or(0.0) / 100.0,
                record.header.companion.loss_weights,
            )
            .ok()
        })
        .flatten();
    RunSummary {
        run_id: record.header.run_id.clone(),
        task_id: record.header.task.id.clone(),
        category: record.header.task.category,
        condition: record.header.condition,
        seed: record.header.seed,
        status: record.status(),
        steps: history.steps.len(),
        mean_jaccard: rep.as_ref().map(|r| r.mean_jaccard),
        max_jaccard: rep.as_ref().map(|r| r.max_jaccard),
        length_trend: length_trend(&history).ok(),
        mean_quality: (!scores.is_empty()).then(|| mean(&scores)),
        interventions: record.interventions().count(),
        overhead_pct: overhead,
        loss,
    }
}

fn values<'a>(
    runs: impl Iterator<Item = &'a RunSummary>,
    f: impl Fn(&RunSummary) -> Option<f64>,
) -> Vec<f64> {
    runs.filter_map(f).collect()
}

/// Pure function of the run records; input order does not matter.
pub fn build_report(records: &[RunRecord]) -> EvalReport {
    let mut runs: Vec<RunSummary> = records.iter().map(summarize_run).collect();
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let complete = |r: &&RunSummary| r.status == RunStatus::Complete;

    let mut task_ids: BTreeMap<&str, TaskCategory> = BTreeMap::new();
    for r in &runs {
        task_ids.insert(&r.task_id, r.category);
    }
    let conditions: BTreeSet<Condition> = runs.iter().map(|r| r.condition).collect();
    let companions: Vec<Condition> = conditions
        .iter()
        .copied()
        .filter(|c| *c != Condition::Baseline)
        .collect();

    let mut tasks = Vec::new();
    for (&task_id, &category) in &task_ids {
        let of_task: Vec<&RunSummary> = runs.iter().filter(|r| r.task_id == task_id).collect();
        let incomplete_runs: Vec<String> = of_task
            .iter()
            .filter(|r| r.status != RunStatus::Complete)
            .map(|r| r.run_id.clone())
            .collect();
        let group = |c: Condition| {
            of_task
                .iter()
                .copied()
                .filter(complete)
                .filter(move |r| r.condition == c)
        };
        let has_baseline = group(Condition::Baseline).next().is_some();
        let comparisons = if has_baseline {
            companions
                .iter()
                .map(|&c| Comparison {
                    condition: c,
                    quality: EffectEntry::of(
                        &values(group(c), |r| r.mean_quality),
                        &values(group(Condition::Baseline), |r| r.mean_quality),
                    ),
                    repetition_mean: EffectEntry::of(
                        &values(group(c), |r| r.mean_jaccard),
                        &values(group(Condition::Baseline), |r| r.mean_jaccard),
                    ),
                    repetition_max: EffectEntry::of(
                        &values(group(c), |r| r.max_jaccard),
                        &values(group(Condition::Baseline), |r| r.max_jaccard),
                    ),
                })
                .collect()
        } else {
            Vec::new()
        };
        tasks.push(TaskReport {
            task_id: task_id.to_string(),
            category,
            incomplete: !incomplete_runs.is_empty(),
            incomplete_runs,
            comparisons,
        });
    }

    let task_ds =
        |c: Condition, pick: fn(&Comparison) -> Option<f64>, cat: Option<TaskCategory>| {
            tasks
                .iter()
                .filter(|t| cat.is_none_or(|k| t.category == k))
                .flat_map(|t| {
                    t.comparisons
                        .iter()
                        .filter(|x| x.condition == c)
                        .filter_map(pick)
                })
                .collect::<Vec<f64>>()
        };
    let d_q: fn(&Comparison) -> Option<f64> = |x| x.quality.d();
    let d_rm: fn(&Comparison) -> Option<f64> = |x| x.repetition_mean.d();
    let d_rx: fn(&Comparison) -> Option<f64> = |x| x.repetition_max.d();

    let conditions_out = conditions
        .iter()
        .map(|&c| {
            let group = || {
                runs.iter()
                    .filter(complete)
                    .filter(move |r| r.condition == c)
            };
            ConditionSummary {
                condition: c,
                complete_runs: group().count(),
                mean_quality: Spread::of(&values(group(), |r| r.mean_quality)),
                mean_jaccard: Spread::of(&values(group(), |r| r.mean_jaccard)),
                overhead_pct: Spread::of(&values(group(), |r| r.overhead_pct)),
                loss: Spread::of(&values(group(), |r| r.loss.as_ref().map(|l| l.total))),
                interventions: group().map(|r| r.interventions).sum(),
                d_quality: Spread::of(&task_ds(c, d_q, None)),
                d_repetition_mean: Spread::of(&task_ds(c, d_rm, None)),
                d_repetition_max: Spread::of(&task_ds(c, d_rx, None)),
            }
        })
        .collect();

    let cats: BTreeSet<TaskCategory> = task_ids.values().copied().collect();
    let mut categories = Vec::new();
    for &category in &cats {
        for &c in &companions {
            categories.push(CategorySummary {
                category,
                condition: c,
                tasks: tasks.iter().filter(|t| t.category == category).count(),
                d_quality: Spread::of(&task_ds(c, d_q, Some(category))),
                d_repetition_mean: Spread::of(&task_ds(c, d_rm, Some(category))),
            });
        }
    }

    EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        runs,
        tasks,
        conditions: conditions_out,
        categories,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks() -> Vec<Task> {
        vec![
            Task::new("loop", "Resolve the liar paradox.", TaskCategory::LoopProne).unwrap(),
            Task::new("plan", "Plan a database schema.", TaskCategory::Structured).unwrap(),
        ]
    }

    #[test]
    fn plan_validation() {
        let mut p = ExperimentPlan::new(tasks(), Condition::ALL.to_vec(), vec![1, 2, 3]);
        p.validate().unwrap();
        assert_eq!(p.cell_count(), 18);
        p.seeds.pop();
        assert_eq!(
            p.validate(),
            Err(PlanError::SeedCount {
                expected: 3,
                found: 2
            })
        );
        let p = ExperimentPlan::new(
            tasks(),
            vec![Condition::Baseline, Condition::Baseline],
            vec![1],
        );
        assert_eq!(
            p.validate(),
            Err(PlanError::DuplicateCondition(Condition::Baseline))
        );
        let mut p = ExperimentPlan::new(tasks(), vec![Condition::Baseline], vec![]);
        p.runs_per_condition = 0;
        assert_eq!(p.validate(), Err(PlanError::NoRuns));
    }

    #[test]
    fn baseline_only_plan_has_no_effect_sizes() {
        let plan = ExperimentPlan::new(tasks(), vec![Condition::Baseline], vec![1, 2]);
        let out = run_experiment(&plan, &ScriptedSuite::new(Default::default()), None).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(out.report.tasks.iter().all(|t| t.comparisons.is_empty()));
        assert!(out.report.categories.is_empty());
        assert_eq!(
            out.report
                .condition(Condition::Baseline)
                .unwrap()
                .d_quality
                .n,
            0
        );
    }

    #[test]
    fn scripted_effects_have_the_constructed_sign() {
        let plan = ExperimentPlan::new(tasks(), Condition::ALL.to_vec(), vec![1, 2, 3]);
        let out = run_experiment(&plan, &ScriptedSuite::new(Default::default()), None).unwrap();
        let looped = out.report.task("loop").unwrap();
        for c in &looped.comparisons {
            assert!(c.quality.d().unwrap() > 0.0, "{:?}", c);
            assert!(
                c.repetition_mean.d().is_some_and(|d| d < 0.0) || c.repetition_mean.note.is_some(),
                "{:?}",
                c
            );
        }
        assert!(!looped.incomplete);
    }

    #[test]
    fn failed_cells_are_marked_incomplete() {
        struct Broken(ScriptedSuite);
        impl BackendFactory for Broken {
            fn agent(
                &self,
                t: &Task,
                c: Condition,
                s: u64,
            ) -> Result<Arc<dyn ChatBackend>, BackendError> {
                if c == Condition::LlmCompanion && s == 2 {
                    return Err(BackendError::Config("down".into()));
                }
                self.0.agent(t, c, s)
            }
            fn judge(&self) -> Option<Arc<dyn ChatBackend>> {
                self.0.judge()
            }
            fn quality_judge(&self) -> Option<Arc<dyn ChatBackend>> {
                self.0.quality_judge()
            }
            fn probe(&self) -> Option<Arc<ProbeModel>> {
                self.0.probe()
            }
        }
        let plan = ExperimentPlan::new(tasks(), Condition::ALL.to_vec(), vec![1, 2]);
        let out =
            run_experiment(&plan, &Broken(ScriptedSuite::new(Default::default())), None).unwrap();
        assert_eq!(out.records.len(), 12);
        let t = out.report.task("plan").unwrap();
        assert!(t.incomplete);
        assert_eq!(
            t.incomplete_runs,
            vec!["plan__LLM_COMPANION__run2".to_string()]
        );
    }

    #[test]
    fn spread_uses_sample_sd() {
        let s = Spread::of(&[1.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.sd, Some(2f64.sqrt()));
        assert_eq!(Spread::of(&[4.0]).sd, None);
        assert_eq!(Spread::of(&[]).mean, None);
    }
}
