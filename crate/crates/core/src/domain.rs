//! Shared vocabulary: tasks, cognitive states, step history, guidance and
//! companion configuration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected degradation profile of a task. Supplied by task metadata, never
/// inferred.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskCategory {
    LoopProne,
    DriftProne,
    Structured,
    #[default]
    Unknown,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::LoopProne,
        TaskCategory::DriftProne,
        TaskCategory::Structured,
        TaskCategory::Unknown,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub category: TaskCategory,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task description must not be empty")]
    EmptyDescription,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        category: TaskCategory,
    ) -> Result<Self, TaskError> {
        let task = Self {
            id: id.into(),
            description: description.into(),
            category,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.description.trim().is_empty() {
            return Err(TaskError::EmptyDescription);
        }
        Ok(())
    }
}

/// Four-way cognitive state reported by the LLM companion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CognitiveState {
    OnTrack,
    Looping,
    Drifting,
    Stuck,
}

impl CognitiveState {
    pub const ALL: [CognitiveState; 4] = [
        CognitiveState::OnTrack,
        CognitiveState::Looping,
        CognitiveState::Drifting,
        CognitiveState::Stuck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CognitiveState::OnTrack => "ON_TRACK",
            CognitiveState::Looping => "LOOPING",
            CognitiveState::Drifting => "DRIFTING",
            CognitiveState::Stuck => "STUCK",
        }
    }

    pub fn is_degraded(self) -> bool {
        collapse_state(self) == 1
    }
}

impl fmt::Display for CognitiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary collapse used by the probe: ON_TRACK is 0, every degraded state is 1.
pub fn collapse_state(state: CognitiveState) -> u8 {
    match state {
        CognitiveState::OnTrack => 0,
        CognitiveState::Looping | CognitiveState::Drifting | CognitiveState::Stuck => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuidanceSource {
    LlmCompanion,
    ProbeCompanion,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InterventionMode {
    #[default]
    Whisper,
    Surface,
    Autonomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub text: String,
    pub source: GuidanceSource,
    pub mode: InterventionMode,
    /// Step whose completion triggered the intervention.
    pub at_step: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("guidance text must not be empty")]
    EmptyText,
    #[error("guidance step must be >= 1")]
    BadStep,
}

impl Guidance {
    pub fn new(
        text: impl Into<String>,
        source: GuidanceSource,
        mode: InterventionMode,
        at_step: u32,
    ) -> Result<Self, GuidanceError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GuidanceError::EmptyText);
        }
        if at_step == 0 {
            return Err(GuidanceError::BadStep);
        }
        Ok(Self {
            text,
            source,
            mode,
            at_step,
        })
    }
}

/// One agent step `(p_t, r_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub index: u32,
    pub prompt: String,
    pub response: String,
    /// Seconds spent inside the backend call.
    pub gen_duration: f64,
    pub guidance_applied: Option<Guidance>,
    pub word_count: usize,
}

impl StepRecord {
    pub fn new(
        index: u32,
        prompt: String,
        response: String,
        gen_duration: f64,
        guidance_applied: Option<Guidance>,
    ) -> Self {
        let word_count = word_count(&response);
        Self {
            index,
            prompt,
            response,
            gen_duration,
            guidance_applied,
            word_count,
        }
    }
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Baseline,
    LlmCompanion,
    ProbeCompanion,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::Baseline,
        Condition::LlmCompanion,
        Condition::ProbeCompanion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "BASELINE",
            Condition::LlmCompanion => "LLM_COMPANION",
            Condition::ProbeCompanion => "PROBE_COMPANION",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "BASELINE" => Ok(Condition::Baseline),
            "LLM_COMPANION" | "LLM" => Ok(Condition::LlmCompanion),
            "PROBE_COMPANION" | "PROBE" => Ok(Condition::ProbeCompanion),
            _ => Err(format!("unknown condition `{s}`")),
        }
    }
}

/// The history `H_t` plus the guidance set `G_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub task: Task,
    pub condition: Condition,
    pub steps: Vec<StepRecord>,
    pub guidance_log: Vec<Guidance>,
    /// Active autonomous-mode reframing paragraph, if any. The task
    /// description itself is never modified.
    #[serde(default)]
    pub reframed_focus: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("step index {found} out of sequence, expected {expected}")]
    IndexGap { expected: u32, found: u32 },
    #[error("baseline run carries {0} guidance entries")]
    BaselineGuidance(usize),
    #[error("guidance at step {0} references no recorded step")]
    DanglingGuidance(u32),
}

impl RunHistory {
    pub fn new(task: Task, condition: Condition) -> Self {
        Self {
            task,
            condition,
            steps: Vec::new(),
            guidance_log: Vec::new(),
            reframed_focus: None,
        }
    }

    pub fn next_index(&self) -> u32 {
        self.steps.len() as u32 + 1
    }

    pub fn push_step(&mut self, step: StepRecord) -> Result<(), HistoryError> {
        let expected = self.next_index();
        if step.index != expected {
            return Err(HistoryError::IndexGap {
                expected,
                found: step.index,
            });
        }
        self.steps.push(step);
        Ok(())
    }

    /// Last `k` steps, oldest first.
    pub fn tail(&self, k: usize) -> &[StepRecord] {
        let start = self.steps.len().saturating_sub(k);
        &self.steps[start..]
    }

    /// Task text as the agent currently sees it.
    pub fn effective_description(&self) -> String {
        match &self.reframed_focus {
            Some(focus) => reframe_description(&self.task.description, focus),
            None => self.task.description.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), HistoryError> {
        for (i, step) in self.steps.iter().enumerate() {
            let expected = i as u32 + 1;
            if step.index != expected {
                return Err(HistoryError::IndexGap {
                    expected,
                    found: step.index,
                });
            }
        }
        if self.condition == Condition::Baseline && !self.guidance_log.is_empty() {
            return Err(HistoryError::BaselineGuidance(self.guidance_log.len()));
        }
        for g in &self.guidance_log {
            if g.at_step == 0 || g.at_step as usize > self.steps.len() {
                return Err(HistoryError::DanglingGuidance(g.at_step));
            }
        }
        Ok(())
    }
}

pub(crate) const REFRAME_HEADER: &str = "Reframed focus:";

pub(crate) fn reframe_description(original: &str, focus: &str) -> String {
    format!("{original}\n\n{REFRAME_HEADER}\n{focus}")
}

/// Miss / false-alarm / overhead weights. Must satisfy `alpha > beta > gamma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let all_finite = [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| w.is_finite());
        if !all_finite || self.gamma <= 0.0 {
            out.push(ConfigViolation::Range {
                field: "loss_weights",
                detail: format!(
                    "weights must be finite and positive, got ({}, {}, {})",
                    self.alpha, self.beta, self.gamma
                ),
            });
        }
        if !(self.alpha > self.beta && self.beta > self.gamma) {
            out.push(ConfigViolation::WeightOrder {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompanionConfig {
    /// Check cadence in steps. Shared by both detectors.
    pub watch_every: u32,
    /// Number of recent steps the companion (and the agent prompt) sees.
    pub history_window: usize,
    pub probe_threshold: f64,
    pub loss_weights: LossWeights,
    pub mode: InterventionMode,
    /// Surface-mode alert lifetime in completed steps.
    pub alert_expiry_steps: u32,
}

impl Default for CompanionConfig {
    fn default() -> Self {
        Self {
            watch_every: 2,
            history_window: 3,
            probe_threshold: 0.55,
            loss_weights: LossWeights::default(),
            mode: InterventionMode::Whisper,
            alert_expiry_steps: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigViolation {
    #[error("loss weights must satisfy alpha > beta > gamma, got ({alpha}, {beta}, {gamma})")]
    WeightOrder { alpha: f64, beta: f64, gamma: f64 },
    #[error("{field}: {detail}")]
    Range { field: &'static str, detail: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid companion config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigErrors(pub Vec<ConfigViolation>);

impl CompanionConfig {
    /// Returns the config unchanged when every invariant holds, otherwise the
    /// full list of violations.
    pub fn validate(self) -> Result<Self, ConfigErrors> {
        let mut violations = self.loss_weights.violations();
        if !(self.probe_threshold > 0.0 && self.probe_threshold < 1.0) {
            violations.push(ConfigViolation::Range {
                field: "probe_threshold",
                detail: format!("must lie in (0, 1), got {}", self.probe_threshold),
            });
        }
        if self.watch_every == 0 {
            violations.push(ConfigViolation::Range {
                field: "watch_every",
                detail: "must be >= 1".into(),
            });
        }
        if self.history_window == 0 {
            violations.push(ConfigViolation::Range {
                field: "history_window",
                detail: "must be >= 1".into(),
            });
        }
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ConfigErrors(violations))
        }
    }
}
