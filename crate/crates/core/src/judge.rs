//! External quality judge: relevance, progress and coherence on a 0-10 scale.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, Sampling};
use crate::domain::{StepRecord, Task};

pub const JUDGE_PROMPT_VERSION: u32 = 1;
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../resources/judge_prompt_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub relevance: u8,
    pub progress: u8,
    pub coherence: u8,
    pub composite: f64,
}

impl QualityScore {
    pub fn new(relevance: u8, progress: u8, coherence: u8) -> Result<Self, JudgeError> {
        for v in [relevance, progress, coherence] {
            if v > 10 {
                return Err(JudgeError::Unparseable(format!("score {v} outside 0-10")));
            }
        }
        let composite = (relevance as f64 + progress as f64 + coherence as f64) / 3.0;
        Ok(Self {
            relevance,
            progress,
            coherence,
            composite,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("judge reply unparseable: {0}")]
    Unparseable(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub fn build_judge_prompt(task: &Task, step: &StepRecord) -> String {
    JUDGE_PROMPT_TEMPLATE
        .replace("{task}", &task.description)
        .replace("{i}", &step.index.to_string())
        .replace("{response}", &step.response)
}

static SCORE_RE: LazyLock<[Regex; 3]> = LazyLock::new(|| {
    ["relevance", "progress", "coherence"].map(|field| {
        Regex::new(&format!(r"(?i)\b{field}\b\W{{0,4}}(\d+)(?:\s*/\s*10)?")).expect("static regex")
    })
});

/// Reads the first value of each of the three fields. Missing or out of range
/// values make the whole reply unparseable.
pub fn parse_judge_reply(raw: &str) -> Result<QualityScore, JudgeError> {
    let mut values = [0u8; 3];
    for (slot, re) in values.iter_mut().zip(SCORE_RE.iter()) {
        let caps = re
            .captures(raw)
            .ok_or_else(|| JudgeError::Unparseable(format!("no match for {}", re.as_str())))?;
        *slot = caps[1]
            .parse::<u8>()
            .map_err(|e| JudgeError::Unparseable(e.to_string()))?;
    }
    QualityScore::new(values[0], values[1], values[2])
}

pub fn judge_sampling() -> Sampling {
    Sampling {
        temperature: 0.0,
        top_p: 1.0,
        top_k: None,
        max_tokens: 40,
    }
}

pub fn judge_quality(
    judge: &dyn ChatBackend,
    task: &Task,
    step: &StepRecord,
) -> Result<QualityScore, JudgeError> {
    let reply = judge.complete(
        &[ChatMessage::user(build_judge_prompt(task, step))],
        &judge_sampling(),
    )?;
    parse_judge_reply(&reply.content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskCategory;

    #[test]
    fn template_layout() {
        let task = Task::new("liar", "Resolve the liar paradox.", TaskCategory::LoopProne).unwrap();
        let step = StepRecord::new(3, String::new(), "It is both.".into(), 0.0, None);
        assert_eq!(
            build_judge_prompt(&task, &step),
            "Task: Resolve the liar paradox.\nStep 3 response: It is both.\nScore this step. Reply exactly:\nRelevance: <0-10>\nProgress: <0-10>\nCoherence: <0-10>"
        );
    }

    #[test]
    fn parses_scores() {
        let q = parse_judge_reply("Relevance: 8 Progress: 7 Coherence: 9").unwrap();
        assert_eq!((q.relevance, q.progress, q.coherence), (8, 7, 9));
        assert_eq!(q.composite, 8.0);
        let q = parse_judge_reply("**Relevance**: 10/10\nprogress = 10\nCOHERENCE - 10").unwrap();
        assert_eq!(q.composite, 10.0);
    }

    #[test]
    fn rejects_bad_replies() {
        for bad in [
            "great job",
            "Relevance: 8 Progress: 7",
            "Relevance: 11 Progress: 7 Coherence: 9",
            "Relevance: 999 Progress: 7 Coherence: 9",
            "",
        ] {
            assert!(
                matches!(parse_judge_reply(bad), Err(JudgeError::Unparseable(_))),
                "{bad}"
            );
        }
    }
}
