//! LLM-judge companion: diagnostic prompt, verdict parsing, periodic
//! assessment and proxy-label collection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_step, StepError};
use crate::backend::{BackendError, ChatBackend, ChatMessage, Sampling};
use crate::domain::{collapse_state, CognitiveState, Condition, RunHistory, StepRecord, Task};
use crate::intervention::GENERIC_GUIDANCE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub status: CognitiveState,
    pub reason: String,
    /// `None` when the judge answered `NONE`.
    pub guidance: Option<String>,
    pub raw: String,
    pub at_step: u32,
    /// Set when the reply could not be parsed and the ON_TRACK fallback was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

impl Assessment {
    /// Guidance to inject, if this verdict calls for an intervention.
    /// Degraded verdicts without guidance fall back to a generic nudge.
    pub fn proposed_guidance(&self) -> Option<String> {
        if !self.status.is_degraded() {
            return None;
        }
        Some(
            self.guidance
                .clone()
                .unwrap_or_else(|| GENERIC_GUIDANCE.to_string()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssessmentError {
    #[error("reply has no STATUS field")]
    MissingStatus,
    #[error("unknown status `{0}`")]
    UnknownStatus(String),
}

pub fn build_diagnostic_prompt(history_tail: &[StepRecord]) -> String {
    let mut out = String::from("Recent agent steps:");
    for step in history_tail {
        out.push_str(&format!("\nStep {}: {}", step.index, step.response));
    }
    out.push_str(
        "\n\nAssess the agent's cognitive state:\n\
         STATUS: [LOOPING/DRIFTING/STUCK/ON_TRACK]\n\
         REASON: [one sentence explanation]\n\
         GUIDANCE: [intervention text or NONE]",
    );
    out
}

/// Inverse of [`parse_assessment`] for well-formed triples.
pub fn render_assessment(status: CognitiveState, reason: &str, guidance: Option<&str>) -> String {
    format!(
        "STATUS: {}\nREASON: {}\nGUIDANCE: {}",
        status,
        reason,
        guidance.unwrap_or("NONE")
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Status,
    Reason,
    Guidance,
}

fn split_field(line: &str) -> Option<(Field, &str)> {
    let (key, value) = line.split_once(':')?;
    let key = key
        .trim()
        .trim_matches(|c: char| c == '*' || c == '#' || c == '-' || c == '_' || c.is_whitespace());
    let field = if key.eq_ignore_ascii_case("status") {
        Field::Status
    } else if key.eq_ignore_ascii_case("reason") {
        Field::Reason
    } else if key.eq_ignore_ascii_case("guidance") {
        Field::Guidance
    } else {
        return None;
    };
    let value = value.trim();
    let value = value
        .strip_prefix("**")
        .map(str::trim_start)
        .unwrap_or(value);
    Some((field, value))
}

fn parse_status(value: &str) -> Result<CognitiveState, AssessmentError> {
    let norm: String = value
        .trim()
        .trim_matches(|c: char| matches!(c, '[' | ']' | '*' | '"' | '\'' | '`' | '.'))
        .to_ascii_uppercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect();
    CognitiveState::ALL
        .into_iter()
        .find(|s| {
            let name = s.as_str();
            norm.strip_prefix(name)
                .is_some_and(|rest| !rest.starts_with(|c: char| c.is_ascii_alphanumeric()))
        })
        .ok_or_else(|| AssessmentError::UnknownStatus(value.trim().to_string()))
}

fn is_none_sentinel(value: &str) -> bool {
    let v = value
        .trim()
        .trim_matches(|c: char| matches!(c, '[' | ']' | '*' | '"' | '.' | '`'));
    v.is_empty() || v.eq_ignore_ascii_case("none")
}

/// Extracts the first STATUS/REASON/GUIDANCE triple. Field names are
/// case-insensitive; a missing REASON yields an empty reason.
pub fn parse_assessment(raw: &str, at_step: u32) -> Result<Assessment, AssessmentError> {
    let mut lines = raw.lines().filter_map(split_field);
    let status_value = lines
        .by_ref()
        .find_map(|(f, v)| (f == Field::Status).then_some(v))
        .ok_or(AssessmentError::MissingStatus)?;
    let status = parse_status(status_value)?;

    let mut reason = None;
    let mut guidance = None;
    for (field, value) in lines {
        match field {
            Field::Status => break,
            Field::Reason if reason.is_none() => reason = Some(value.to_string()),
            Field::Guidance if guidance.is_none() => guidance = Some(value),
            _ => {}
        }
    }
    let guidance = guidance
        .filter(|g| !is_none_sentinel(g))
        .map(str::to_string);

    Ok(Assessment {
        status,
        reason: reason.unwrap_or_default(),
        guidance,
        raw: raw.to_string(),
        at_step,
        parse_error: None,
    })
}

pub fn should_check(step: u32, watch_every: u32) -> bool {
    watch_every > 0 && step > 0 && step.is_multiple_of(watch_every)
}

/// Assesses the last `k` steps. Unparseable replies degrade to ON_TRACK with
/// no guidance; only transport failures are errors.
pub fn assess(
    backend: &dyn ChatBackend,
    history: &RunHistory,
    k: usize,
) -> Result<Assessment, BackendError> {
    let at_step = history.steps.last().map_or(0, |s| s.index);
    let prompt = build_diagnostic_prompt(history.tail(k.max(1)));
    let reply = backend.complete(&[ChatMessage::user(prompt)], &Sampling::companion())?;
    Ok(
        parse_assessment(&reply.content, at_step).unwrap_or_else(|err| {
            log::warn!(
                "unparseable companion reply at step {at_step} ({err}); treating as ON_TRACK"
            );
            Assessment {
                status: CognitiveState::OnTrack,
                reason: String::new(),
                guidance: None,
                raw: reply.content,
                at_step,
                parse_error: Some(err.to_string()),
            }
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyLabelRecord {
    pub run_id: String,
    pub task_id: String,
    pub step: u32,
    pub status: CognitiveState,
    pub label: u8,
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("companion backend: {0}")]
    Companion(#[from] BackendError),
}

/// Runs the agent unassisted for `n_steps`, assessing every step, and returns
/// the collapsed verdicts as proxy labels.
pub fn collect_proxy_labels(
    agent: &dyn ChatBackend,
    judge: &dyn ChatBackend,
    agent_sampling: &Sampling,
    task: &Task,
    run_id: &str,
    n_steps: u32,
    k: usize,
) -> Result<Vec<ProxyLabelRecord>, CollectError> {
    let mut history = RunHistory::new(task.clone(), Condition::Baseline);
    let mut labels = Vec::with_capacity(n_steps as usize);
    for _ in 0..n_steps {
        let out = run_step(agent, agent_sampling, &history, None, k)?;
        history
            .push_step(out.record)
            .expect("run_step produces the next index");
        let verdict = assess(judge, &history, k)?;
        labels.push(ProxyLabelRecord {
            run_id: run_id.to_string(),
            task_id: task.id.clone(),
            step: verdict.at_step,
            status: verdict.status,
            label: collapse_state(verdict.status),
        });
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(i: u32, r: &str) -> StepRecord {
        StepRecord::new(i, String::new(), r.into(), 0.0, None)
    }

    #[test]
    fn diagnostic_prompt_layout() {
        let p = build_diagnostic_prompt(&[step(1, "a"), step(2, "b"), step(3, "c")]);
        assert!(p.starts_with("Recent agent steps:"));
        assert!(p.contains("Assess the agent's cognitive state:"));
        assert!(p.contains("Step 1: a\nStep 2: b\nStep 3: c"));
        assert!(p.ends_with("GUIDANCE: [intervention text or NONE]"));

        let one = build_diagnostic_prompt(&[step(4, "only")]);
        assert!(one.contains("Step 4: only\n\nAssess"));

        let tricky = build_diagnostic_prompt(&[step(1, "STATUS: LOOPING")]);
        assert!(tricky.contains("Step 1: STATUS: LOOPING"));
    }

    #[test]
    fn parses_structured_reply() {
        let a = parse_assessment(
            "STATUS: LOOPING\nREASON: repeats step 2.\nGUIDANCE: restate the goal",
            4,
        )
        .unwrap();
        assert_eq!(a.status, CognitiveState::Looping);
        assert_eq!(a.reason, "repeats step 2.");
        assert_eq!(a.guidance.as_deref(), Some("restate the goal"));
        assert_eq!(a.at_step, 4);

        let ok = parse_assessment("STATUS: ON_TRACK\nREASON: fine\nGUIDANCE: NONE", 2).unwrap();
        assert_eq!(ok.guidance, None);
        assert_eq!(ok.proposed_guidance(), None);

        assert_eq!(
            parse_assessment("I think it is fine", 1).unwrap_err(),
            AssessmentError::MissingStatus
        );
        assert_eq!(
            parse_assessment("STATUS: CONFUSED", 1).unwrap_err(),
            AssessmentError::UnknownStatus("CONFUSED".into())
        );
    }

    #[test]
    fn parser_tolerates_common_variations() {
        let a = parse_assessment(
            "Sure.\n**Status:** [drifting]\nreason: off topic\nguidance: none.",
            3,
        )
        .unwrap();
        assert_eq!(a.status, CognitiveState::Drifting);
        assert_eq!(a.reason, "off topic");
        assert_eq!(a.guidance, None);

        let b = parse_assessment("STATUS: on track", 1).unwrap();
        assert_eq!(b.status, CognitiveState::OnTrack);
        assert_eq!(b.reason, "");

        // a second triple is ignored
        let c = parse_assessment(
            "STATUS: STUCK\nGUIDANCE: shorten\nSTATUS: LOOPING\nREASON: later",
            1,
        )
        .unwrap();
        assert_eq!(c.status, CognitiveState::Stuck);
        assert_eq!(c.reason, "");
        assert_eq!(c.guidance.as_deref(), Some("shorten"));

        assert!(parse_assessment("STATUS: STUCKISH", 1).is_err());
    }

    #[test]
    fn degraded_without_guidance_uses_generic_nudge() {
        let a = parse_assessment("STATUS: STUCK\nREASON: short\nGUIDANCE: NONE", 2).unwrap();
        assert_eq!(a.proposed_guidance().as_deref(), Some(GENERIC_GUIDANCE));
    }

    #[test]
    fn schedule() {
        assert!(should_check(2, 2));
        assert!(!should_check(3, 2));
        assert!(should_check(1, 1));
        for n in 1..30u32 {
            for every in 1..7u32 {
                let fired = (1..=n).filter(|&s| should_check(s, every)).count() as u32;
                assert_eq!(fired, n / every);
            }
        }
    }

    proptest! {
        #[test]
        fn render_parse_identity(
            status_idx in 0usize..4,
            reason in "[A-Za-z0-9 ,.;'()-]{0,60}",
            guidance in proptest::option::of("[A-Za-z][A-Za-z0-9 ,.;'-]{0,60}"),
        ) {
            let status = CognitiveState::ALL[status_idx];
            let reason = reason.trim().to_string();
            let guidance = guidance
                .map(|g| g.trim().to_string())
                .filter(|g| !is_none_sentinel(g));
            let raw = render_assessment(status, &reason, guidance.as_deref());
            let parsed = parse_assessment(&raw, 1).unwrap();
            prop_assert_eq!(parsed.status, status);
            prop_assert_eq!(parsed.reason, reason);
            prop_assert_eq!(parsed.guidance, guidance);
        }

        #[test]
        fn parser_never_panics(raw in "\\PC{0,200}") {
            let _ = parse_assessment(&raw, 1);
        }
    }
}
