//! The primary agent step: `r_{t+1} = M(T, H_t, G_t)`.

use std::collections::BTreeMap;
use std::time::Instant;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, Sampling};
use crate::domain::{Guidance, RunHistory, StepRecord};
use crate::intervention::whisper_block;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned an empty response at step {0}")]
    EmptyResponse(u32),
}

/// Builds the agent-visible prompt for the next step from the (possibly
/// reframed) task, the last `k` responses and an optional pending whisper.
pub fn build_agent_prompt(history: &RunHistory, pending: Option<&Guidance>, k: usize) -> String {
    let k = k.max(1);
    let next = history.next_index();
    let mut prompt = history.effective_description();
    let tail = history.tail(k);
    if !tail.is_empty() {
        prompt.push_str("\n\nYour reasoning so far:");
        for step in tail {
            prompt.push_str(&format!("\nStep {}: {}", step.index, step.response));
        }
    }
    if let Some(g) = pending {
        prompt.push_str("\n\n");
        prompt.push_str(&whisper_block(&g.text));
    }
    prompt.push_str(&format!(
        "\n\nWrite step {next} of your reasoning. Build on what is already established and move the task forward."
    ));
    prompt
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub record: StepRecord,
    pub hidden_states: Option<BTreeMap<u32, Vec<f64>>>,
}

/// Generates one step. Does not append to `history`.
pub fn run_step(
    backend: &dyn ChatBackend,
    sampling: &Sampling,
    history: &RunHistory,
    pending: Option<&Guidance>,
    k: usize,
) -> Result<StepOutput, StepError> {
    let index = history.next_index();
    let prompt = build_agent_prompt(history, pending, k);
    let start = Instant::now();
    let completion = backend.complete(&[ChatMessage::user(prompt.clone())], sampling)?;
    let gen_duration = start.elapsed().as_secs_f64();
    if completion.content.trim().is_empty() {
        return Err(StepError::EmptyResponse(index));
    }
    Ok(StepOutput {
        record: StepRecord::new(
            index,
            prompt,
            completion.content,
            gen_duration,
            pending.cloned(),
        ),
        hidden_states: completion.hidden_states,
    })
}
