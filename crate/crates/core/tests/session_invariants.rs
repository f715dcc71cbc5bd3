use std::sync::Arc;
use std::time::Instant;

use companion_core::backend::ChatBackend;
use companion_core::companion::{collect_proxy_labels, render_assessment};
use companion_core::experiment::{BackendFactory, ScriptedSuite, ScriptedSuiteConfig};
use companion_core::probe::decide_intervention;
use companion_core::scripted::{ScriptedAgent, ScriptedBehavior, ScriptedJudge, ScriptedMode};
use companion_core::synthetic::{GaussianClasses, ShiftGeometry};
use companion_core::{
    run_session, CognitiveState, CompanionConfig, Condition, InterventionMode, RunEvent, RunRecord,
    Sampling, SessionBackends, SessionConfig, Task, TaskCategory,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn task() -> Task {
    Task::new(
        "loop-inv",
        "Decide whether the team should adopt a four day work week",
        TaskCategory::LoopProne,
    )
    .unwrap()
}

fn session(condition: Condition, suite: &ScriptedSuite, seed: u64, n_steps: u32) -> RunRecord {
    let mut cfg = SessionConfig::new(format!("inv-{seed}"), task(), condition);
    cfg.n_steps = n_steps;
    cfg.seed = seed;
    let backends = SessionBackends {
        agent: suite.agent(&cfg.task, condition, seed).unwrap(),
        judge: suite.judge(),
        probe: suite.probe(),
        alerts: None,
    };
    run_session(&cfg, &backends).unwrap()
}

/// Drops wall-clock fields so two records can be compared exactly.
fn without_timing(record: &RunRecord) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                for key in ["gen_duration", "elapsed", "t_agent", "t_companion", "wall"] {
                    map.remove(key);
                }
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(record).unwrap();
    strip(&mut v);
    v
}

#[test]
fn scripted_sessions_are_deterministic() {
    let suite = ScriptedSuite::new(ScriptedSuiteConfig {
        guidance_sensitivity: 0.5,
        ..ScriptedSuiteConfig::default()
    });
    for condition in [
        Condition::Baseline,
        Condition::LlmCompanion,
        Condition::ProbeCompanion,
    ] {
        for seed in [1, 7] {
            let a = session(condition, &suite, seed, 8);
            let b = session(condition, &suite, seed, 8);
            assert_eq!(
                without_timing(&a),
                without_timing(&b),
                "{condition} seed {seed}"
            );
        }
    }
}

#[test]
fn agent_and_companion_time_account_for_wall_time() {
    let suite = ScriptedSuite::new(ScriptedSuiteConfig {
        agent_latency_ms: 30,
        judge_latency_ms: 15,
        ..ScriptedSuiteConfig::default()
    });
    for condition in [Condition::LlmCompanion, Condition::ProbeCompanion] {
        let record = session(condition, &suite, 3, 6);
        let t = record.timing().unwrap();
        let rel = ((t.t_agent + t.t_companion) - t.wall).abs() / t.wall;
        assert!(rel <= 0.01, "{condition}: {t:?}");
    }
}

#[test]
fn whisper_prompts_never_mention_monitoring() {
    let suite = ScriptedSuite::new(ScriptedSuiteConfig::default());
    for condition in [Condition::LlmCompanion, Condition::ProbeCompanion] {
        let record = session(condition, &suite, 2, 6);
        assert!(record.interventions().count() > 0);
        for (step, _) in record.steps() {
            let prompt = step.prompt.to_lowercase();
            for word in ["companion", "probe", "monitor", "detector", "classifier"] {
                assert!(
                    !prompt.contains(word),
                    "step {} mentions {word}",
                    step.index
                );
            }
        }
    }
}

#[test]
fn applied_guidance_is_fully_accounted_for() {
    let suite = ScriptedSuite::new(ScriptedSuiteConfig::default());
    for condition in [
        Condition::Baseline,
        Condition::LlmCompanion,
        Condition::ProbeCompanion,
    ] {
        let record = session(condition, &suite, 5, 6);
        let history = record.history();
        let fired: Vec<_> = record.interventions().cloned().collect();
        assert_eq!(history.guidance_log, fired);
        if condition == Condition::Baseline {
            assert!(history.guidance_log.is_empty());
        }
        let indices: Vec<u32> = history.steps.iter().map(|s| s.index).collect();
        assert_eq!(indices, (1..=6).collect::<Vec<_>>());
        for g in &history.guidance_log {
            assert!(indices.contains(&g.at_step));
            if let Some(next) = history.steps.get(g.at_step as usize) {
                assert_eq!(next.guidance_applied.as_ref(), Some(g));
                assert!(next.prompt.contains(&g.text));
            }
        }
    }
}

#[test]
fn reframing_keeps_the_original_description() {
    let suite = ScriptedSuite::new(ScriptedSuiteConfig::default());
    let mut cfg = SessionConfig::new("reframe", task(), Condition::LlmCompanion);
    cfg.companion.mode = InterventionMode::Autonomous;
    let backends = SessionBackends {
        agent: suite.agent(&cfg.task, cfg.condition, 1).unwrap(),
        judge: suite.judge(),
        probe: None,
        alerts: None,
    };
    let record = run_session(&cfg, &backends).unwrap();
    assert_eq!(record.header.task, task());
    assert!(record
        .steps()
        .any(|(s, _)| s.prompt.contains("Reframed focus:")));
}

#[test]
fn proxy_labels_cover_every_step() {
    let agent = ScriptedAgent::new(ScriptedBehavior::new(ScriptedMode::Loop, 1.0, 0));
    let judge = ScriptedJudge::heuristic();
    let labels =
        collect_proxy_labels(&agent, &judge, &Sampling::agent(), &task(), "labels", 8, 3).unwrap();
    assert_eq!(labels.len(), 8);
    assert_eq!(labels[0].label, 0);
    assert!(labels[1..]
        .iter()
        .all(|l| l.label == 1 && l.status == CognitiveState::Looping));
}

#[test]
fn probe_scoring_fits_the_per_step_budget() {
    let classes = GaussianClasses::new(2560, 2.0, ShiftGeometry::PerCoordinate, 42);
    let model =
        companion_core::probe::fit_logistic(&classes.dataset(28, 50, 42), &Default::default())
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Vec<f64>> = (0..50)
        .map(|i| classes.sample(i % 2 == 0, &mut rng))
        .collect();
    let cfg = CompanionConfig::default();
    let start = Instant::now();
    let mut fired = 0;
    for (i, x) in xs.iter().enumerate() {
        let p = model.predict_proba(x).unwrap();
        fired += usize::from(decide_intervention(p, &cfg, 2 + 2 * i as u32));
    }
    let per_step = start.elapsed() / xs.len() as u32;
    assert!(per_step.as_secs_f64() < 1e-3, "{per_step:?} per step");
    assert!(fired > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn companion_runs_exactly_on_schedule(n_steps in 1u32..10, watch_every in 1u32..5) {
        let mut cfg = SessionConfig::new("sched", task(), Condition::LlmCompanion);
        cfg.n_steps = n_steps;
        cfg.companion.watch_every = watch_every;
        let judge: Arc<dyn ChatBackend> = Arc::new(ScriptedJudge::fixed(render_assessment(
            CognitiveState::OnTrack, "fine", None,
        )));
        let backends = SessionBackends {
            judge: Some(judge),
            ..SessionBackends::agent_only(Arc::new(ScriptedAgent::new(ScriptedBehavior::new(
                ScriptedMode::Progress, 1.0, 1,
            ))))
        };
        let record = run_session(&cfg, &backends).unwrap();
        prop_assert_eq!(record.steps().count() as u32, n_steps);
        let checked: Vec<u32> = record.events.iter().filter_map(|e| match e {
            RunEvent::Assessment { assessment, .. } => Some(assessment.at_step),
            _ => None,
        }).collect();
        let expected: Vec<u32> = (1..=n_steps).filter(|i| i % watch_every == 0).collect();
        prop_assert_eq!(checked.len() as u32, n_steps / watch_every);
        prop_assert_eq!(checked, expected);
        prop_assert_eq!(record.interventions().count(), 0);
    }
}
