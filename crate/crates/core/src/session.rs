//! One run of the agent under a condition: the sequential
//! step / assess / intervene loop with separate agent and companion clocks.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::agent::{run_step, StepError};
use crate::backend::{BackendError, ChatBackend, Sampling};
use crate::companion::{assess, should_check};
use crate::domain::{
    CompanionConfig, Condition, ConfigErrors, Guidance, GuidanceSource, InterventionMode,
    RunHistory, Task, TaskError,
};
use crate::intervention::{AlertQueue, Detection, WhisperSlot};
use crate::probe::{decide_intervention, probe_guidance, ProbeError, ProbeModel};
use crate::record::{RunEvent, RunHeader, RunRecord, RunStatus, Timing, RUN_SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub run_id: String,
    pub task: Task,
    pub condition: Condition,
    pub n_steps: u32,
    pub companion: CompanionConfig,
    pub agent_sampling: Sampling,
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(run_id: impl Into<String>, task: Task, condition: Condition) -> Self {
        Self {
            run_id: run_id.into(),
            task,
            condition,
            n_steps: 6,
            companion: CompanionConfig::default(),
            agent_sampling: Sampling::agent(),
            seed: 0,
        }
    }
}

/// Backends a session talks to. Only the detector for the configured
/// condition is required.
#[derive(Clone)]
pub struct SessionBackends {
    pub agent: Arc<dyn ChatBackend>,
    pub judge: Option<Arc<dyn ChatBackend>>,
    pub probe: Option<Arc<ProbeModel>>,
    /// Queue shared with whoever decides surface alerts. A private queue is
    /// used when absent, in which case every alert expires.
    pub alerts: Option<Arc<AlertQueue>>,
}

impl SessionBackends {
    pub fn agent_only(agent: Arc<dyn ChatBackend>) -> Self {
        Self {
            agent,
            judge: None,
            probe: None,
            alerts: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid companion config: {0}")]
    Config(#[from] ConfigErrors),
    #[error("invalid task: {0}")]
    Task(#[from] TaskError),
    #[error("n_steps must be >= 1")]
    NoSteps,
    #[error("condition {0} needs a {1}")]
    MissingDetector(Condition, &'static str),
    #[error("step {step}: {source}")]
    Step { step: u32, source: StepError },
    #[error("companion at step {step}: {source}")]
    Companion { step: u32, source: BackendError },
    #[error("agent reply for step {step} carries no hidden states for layer {layer}")]
    MissingFeatures { step: u32, layer: u32 },
    #[error("probe at step {step}: {source}")]
    Probe { step: u32, source: ProbeError },
}

/// A run that stopped early. The record holds everything up to the failure
/// and ends with an ABORTED timing event.
#[derive(Debug, Error)]
#[error("run `{}` aborted: {error}", record.header.run_id)]
pub struct SessionFailure {
    pub record: Box<RunRecord>,
    pub error: SessionError,
}

struct Clocks {
    wall: Instant,
    agent: f64,
    companion: f64,
}

impl Clocks {
    fn timing(&self, status: RunStatus, error: Option<String>) -> Timing {
        Timing {
            t_agent: self.agent,
            t_companion: self.companion,
            wall: self.wall.elapsed().as_secs_f64(),
            status,
            error,
        }
    }
}

struct Run<'a> {
    record: RunRecord,
    observer: &'a mut dyn FnMut(&RunEvent),
}

impl Run<'_> {
    fn emit(&mut self, event: RunEvent) {
        (self.observer)(&event);
        self.record.events.push(event);
    }
}

/// Header a session with this configuration logs first.
pub fn run_header(cfg: &SessionConfig, backends: &SessionBackends) -> RunHeader {
    RunHeader {
        schema_version: RUN_SCHEMA_VERSION,
        run_id: cfg.run_id.clone(),
        task: cfg.task.clone(),
        condition: cfg.condition,
        companion: cfg.companion.clone(),
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        agent_sampling: cfg.agent_sampling.clone(),
        probe_layer: match cfg.condition {
            Condition::ProbeCompanion => backends.probe.as_ref().map(|m| m.layer),
            _ => None,
        },
    }
}

pub fn run_session(
    cfg: &SessionConfig,
    backends: &SessionBackends,
) -> Result<RunRecord, SessionFailure> {
    run_session_observed(cfg, backends, &mut |_| {})
}

/// Runs the session, handing every event to `observer` as it is logged
/// (the header included).
pub fn run_session_observed(
    cfg: &SessionConfig,
    backends: &SessionBackends,
    observer: &mut dyn FnMut(&RunEvent),
) -> Result<RunRecord, SessionFailure> {
    let header = run_header(cfg, backends);
    observer(&RunEvent::Header(header.clone()));
    let mut run = Run {
        record: RunRecord::new(header),
        observer,
    };
    let mut clocks = Clocks {
        wall: Instant::now(),
        agent: 0.0,
        companion: 0.0,
    };
    match drive(cfg, backends, &mut run, &mut clocks) {
        Ok(()) => {
            let t = clocks.timing(RunStatus::Complete, None);
            run.emit(RunEvent::Timing(t));
            Ok(run.record)
        }
        Err(error) => {
            log::error!("run {} aborted: {error}", cfg.run_id);
            let t = clocks.timing(RunStatus::Aborted, Some(error.to_string()));
            run.emit(RunEvent::Timing(t));
            Err(SessionFailure {
                record: Box::new(run.record),
                error,
            })
        }
    }
}

fn preflight(cfg: &SessionConfig, backends: &SessionBackends) -> Result<(), SessionError> {
    cfg.task.validate()?;
    cfg.companion.clone().validate()?;
    if cfg.n_steps == 0 {
        return Err(SessionError::NoSteps);
    }
    match cfg.condition {
        Condition::LlmCompanion if backends.judge.is_none() => Err(SessionError::MissingDetector(
            cfg.condition,
            "companion judge backend",
        )),
        Condition::ProbeCompanion if backends.probe.is_none() => Err(
            SessionError::MissingDetector(cfg.condition, "trained probe"),
        ),
        _ => Ok(()),
    }
}

fn drive(
    cfg: &SessionConfig,
    backends: &SessionBackends,
    run: &mut Run<'_>,
    clocks: &mut Clocks,
) -> Result<(), SessionError> {
    preflight(cfg, backends)?;
    let k = cfg.companion.history_window;
    let mode = cfg.companion.mode;
    let alerts = backends.alerts.clone().unwrap_or_default();
    let mut history = RunHistory::new(cfg.task.clone(), cfg.condition);
    let mut slot = WhisperSlot::default();

    for step in 1..=cfg.n_steps {
        if mode == InterventionMode::Surface && cfg.condition != Condition::Baseline {
            let started = Instant::now();
            let tick = alerts.tick(step, cfg.companion.alert_expiry_steps);
            let mut applied = Vec::new();
            for (alert, guidance) in tick.to_apply {
                slot.apply_whisper(guidance.clone());
                history.guidance_log.push(guidance.clone());
                applied.push((alert, guidance));
            }
            clocks.companion += started.elapsed().as_secs_f64();
            for alert in tick.expired {
                run.emit(RunEvent::Alert { alert });
            }
            for (alert, guidance) in applied {
                run.emit(RunEvent::Alert { alert });
                run.emit(RunEvent::Intervention { guidance });
            }
        }

        let started = Instant::now();
        let pending = slot.take();
        let out = run_step(
            backends.agent.as_ref(),
            &cfg.agent_sampling,
            &history,
            pending.as_ref(),
            k,
        )
        .map_err(|source| SessionError::Step { step, source })?;
        history
            .push_step(out.record.clone())
            .expect("run_step produces the next index");
        clocks.agent += started.elapsed().as_secs_f64();
        run.emit(RunEvent::Step {
            step: out.record,
            quality: None,
        });

        if cfg.condition == Condition::Baseline || !should_check(step, cfg.companion.watch_every) {
            continue;
        }

        let started = Instant::now();
        let (detection, proposal, source, event) = match cfg.condition {
            Condition::LlmCompanion => {
                let judge = backends.judge.as_deref().expect("checked in preflight");
                let a = assess(judge, &history, k)
                    .map_err(|source| SessionError::Companion { step, source })?;
                let proposal = a.proposed_guidance();
                let event = RunEvent::Assessment {
                    assessment: a.clone(),
                    elapsed: started.elapsed().as_secs_f64(),
                };
                (
                    Detection::Assessment(a),
                    proposal,
                    GuidanceSource::LlmCompanion,
                    event,
                )
            }
            Condition::ProbeCompanion => {
                let model = backends.probe.as_deref().expect("checked in preflight");
                let features = out
                    .hidden_states
                    .as_ref()
                    .and_then(|m| m.get(&model.layer))
                    .ok_or(SessionError::MissingFeatures {
                        step,
                        layer: model.layer,
                    })?;
                let probability = model
                    .predict_proba(features)
                    .map_err(|source| SessionError::Probe { step, source })?;
                let fired = decide_intervention(probability, &cfg.companion, step);
                let proposal = fired.then(|| probe_guidance(probability, 0.0).to_string());
                let event = RunEvent::ProbeScore {
                    step,
                    layer: model.layer,
                    probability,
                    fired,
                    elapsed: started.elapsed().as_secs_f64(),
                };
                (
                    Detection::ProbeProbability { probability },
                    proposal,
                    GuidanceSource::ProbeCompanion,
                    event,
                )
            }
            Condition::Baseline => unreachable!("baseline never checks"),
        };

        let mut follow_up = Vec::new();
        if let Some(text) = proposal {
            match mode {
                InterventionMode::Whisper | InterventionMode::Autonomous => {
                    let g =
                        Guidance::new(text, source, mode, step).expect("proposals are non-empty");
                    if mode == InterventionMode::Whisper {
                        slot.apply_whisper(g.clone());
                    } else {
                        history.reframed_focus = Some(g.text.clone());
                    }
                    history.guidance_log.push(g.clone());
                    follow_up.push(RunEvent::Intervention { guidance: g });
                }
                InterventionMode::Surface => {
                    let alert = alerts.raise(&cfg.run_id, step, source, detection, text);
                    follow_up.push(RunEvent::Alert { alert });
                }
            }
        }
        clocks.companion += started.elapsed().as_secs_f64();
        run.emit(event);
        for e in follow_up {
            run.emit(e);
        }
    }

    if mode == InterventionMode::Surface {
        for alert in alerts.expire_all() {
            run.emit(RunEvent::Alert { alert });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskCategory;
    use crate::metrics::repetition_stats;
    use crate::scripted::{ScriptedAgent, ScriptedBehavior, ScriptedJudge, ScriptedMode};

    fn task() -> Task {
        Task::new("liar", "Resolve the liar paradox.", TaskCategory::LoopProne).unwrap()
    }

    fn looping(sensitivity: f64) -> Arc<dyn ChatBackend> {
        Arc::new(ScriptedAgent::new(ScriptedBehavior::new(
            ScriptedMode::Loop,
            sensitivity,
            1,
        )))
    }

    #[test]
    fn baseline_has_no_guidance() {
        let cfg = SessionConfig::new("b", task(), Condition::Baseline);
        let r = run_session(&cfg, &SessionBackends::agent_only(looping(1.0))).unwrap();
        let h = r.history();
        assert_eq!(h.steps.len(), 6);
        assert!(h.guidance_log.is_empty());
        assert_eq!(r.status(), RunStatus::Complete);
        h.validate().unwrap();
    }

    #[test]
    fn llm_companion_checks_on_schedule_and_whispers() {
        let cfg = SessionConfig::new("l", task(), Condition::LlmCompanion);
        let mut backends = SessionBackends::agent_only(looping(1.0));
        backends.judge = Some(Arc::new(ScriptedJudge::heuristic()));
        let r = run_session(&cfg, &backends).unwrap();
        let checked: Vec<u32> = r
            .events
            .iter()
            .filter_map(|e| match e {
                RunEvent::Assessment { assessment, .. } => Some(assessment.at_step),
                _ => None,
            })
            .collect();
        assert_eq!(checked, vec![2, 4, 6]);
        let h = r.history();
        assert_eq!(h.guidance_log.len(), 1);
        assert_eq!(h.guidance_log[0].at_step, 2);
        assert!(h.steps[2].prompt.contains("(Before continuing, consider:"));
        assert_eq!(
            h.steps[2].guidance_applied.as_ref(),
            Some(&h.guidance_log[0])
        );
        let base = run_session(
            &SessionConfig::new("b", task(), Condition::Baseline),
            &SessionBackends::agent_only(looping(1.0)),
        )
        .unwrap();
        assert!(
            repetition_stats(&h).unwrap().mean_jaccard
                < repetition_stats(&base.history()).unwrap().mean_jaccard
        );
    }

    #[test]
    fn missing_detector_aborts_with_record() {
        let cfg = SessionConfig::new("p", task(), Condition::ProbeCompanion);
        let err = run_session(&cfg, &SessionBackends::agent_only(looping(1.0))).unwrap_err();
        assert!(matches!(err.error, SessionError::MissingDetector(..)));
        assert_eq!(err.record.status(), RunStatus::Aborted);
    }

    #[test]
    fn autonomous_mode_reframes() {
        let mut cfg = SessionConfig::new("a", task(), Condition::LlmCompanion);
        cfg.companion.mode = InterventionMode::Autonomous;
        let mut backends = SessionBackends::agent_only(looping(0.0));
        backends.judge = Some(Arc::new(ScriptedJudge::heuristic()));
        let r = run_session(&cfg, &backends).unwrap();
        let h = r.history();
        assert_eq!(h.task.description, "Resolve the liar paradox.");
        for s in &h.steps[2..] {
            assert_eq!(s.prompt.matches("Reframed focus:").count(), 1);
        }
        assert!(!h.steps[1].prompt.contains("Reframed focus:"));
        assert_eq!(h.guidance_log.len(), 3);
    }
}
