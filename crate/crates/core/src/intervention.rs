//! Turning detections into action: whisper injection, operator alerts and
//! autonomous task reframing.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::companion::Assessment;
use crate::domain::{reframe_description, Guidance, GuidanceSource, InterventionMode, Task};

/// Fixed nudge used when a detector has no guidance text of its own.
pub const GENERIC_GUIDANCE: &str = "You may be revisiting earlier reasoning. Re-read the task, state what is already established in one sentence, and take one new step.";

/// The line appended to the next agent prompt.
pub fn whisper_block(guidance: &str) -> String {
    format!("(Before continuing, consider: {guidance})")
}

/// Revised task text for autonomous mode. The original task is untouched.
pub fn autonomous_reframe(task: &Task, guidance: &Guidance) -> String {
    reframe_description(&task.description, &guidance.text)
}

/// Single pending-guidance slot per run; latest whisper wins.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct WhisperSlot {
    pending: Option<Guidance>,
}

impl WhisperSlot {
    /// Returns the guidance it displaced, if any.
    pub fn apply_whisper(&mut self, guidance: Guidance) -> Option<Guidance> {
        self.pending.replace(guidance)
    }

    pub fn pending(&self) -> Option<&Guidance> {
        self.pending.as_ref()
    }

    pub fn take(&mut self) -> Option<Guidance> {
        self.pending.take()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertState {
    Pending,
    Approved,
    Edited,
    Dismissed,
    Expired,
}

impl AlertState {
    pub fn is_terminal(self) -> bool {
        self != AlertState::Pending
    }
}

impl std::str::FromStr for AlertState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PENDING" => Ok(AlertState::Pending),
            "APPROVED" => Ok(AlertState::Approved),
            "EDITED" => Ok(AlertState::Edited),
            "DISMISSED" => Ok(AlertState::Dismissed),
            "EXPIRED" => Ok(AlertState::Expired),
            _ => Err(format!("unknown alert state `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Detection {
    Assessment(Assessment),
    ProbeProbability { probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: String,
    pub run_id: String,
    pub at_step: u32,
    pub source: GuidanceSource,
    pub detection: Detection,
    pub proposed_guidance: String,
    pub state: AlertState,
    pub decision_guidance: Option<String>,
    /// Step whose prompt carried the decided guidance.
    #[serde(default)]
    pub applied_at_step: Option<u32>,
}

impl Alert {
    /// Text to inject once approved or edited.
    pub fn effective_guidance(&self) -> Option<&str> {
        match self.state {
            AlertState::Approved => Some(&self.proposed_guidance),
            AlertState::Edited => self.decision_guidance.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionAction {
    Approve,
    Edit,
    Dismiss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: DecisionAction,
    #[serde(default)]
    pub guidance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlertError {
    #[error("no alert with id `{0}`")]
    NotFound(String),
    #[error("alert `{id}` is already {state:?}")]
    Conflict { id: String, state: AlertState },
    #[error("edit decisions require non-empty guidance")]
    EditRequiresGuidance,
}

/// Per-run alert queue. Decisions arrive from the service while the session
/// loop expires and consumes alerts, so every access goes through the lock.
#[derive(Debug, Default)]
pub struct AlertQueue {
    alerts: Mutex<Vec<Alert>>,
}

/// What a session must do before generating a step.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct TickOutcome {
    pub expired: Vec<Alert>,
    pub to_apply: Vec<(Alert, Guidance)>,
}

impl AlertQueue {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<Alert>> {
        self.alerts.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn raise(
        &self,
        run_id: &str,
        at_step: u32,
        source: GuidanceSource,
        detection: Detection,
        proposed_guidance: String,
    ) -> Alert {
        let mut alerts = self.lock();
        let alert = Alert {
            id: format!("{run_id}-alert-{}", alerts.len() + 1),
            run_id: run_id.to_string(),
            at_step,
            source,
            detection,
            proposed_guidance,
            state: AlertState::Pending,
            decision_guidance: None,
            applied_at_step: None,
        };
        alerts.push(alert.clone());
        alert
    }

    pub fn get(&self, id: &str) -> Option<Alert> {
        self.lock().iter().find(|a| a.id == id).cloned()
    }

    pub fn list(&self, state: Option<AlertState>) -> Vec<Alert> {
        self.lock()
            .iter()
            .filter(|a| state.is_none_or(|s| a.state == s))
            .cloned()
            .collect()
    }

    /// Applies an operator decision. Repeating the decision that produced the
    /// current state is a no-op.
    pub fn decide(&self, id: &str, decision: &Decision) -> Result<Alert, AlertError> {
        let mut alerts = self.lock();
        let alert = alerts
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or_else(|| AlertError::NotFound(id.to_string()))?;
        let edit_text = decision
            .guidance
            .as_deref()
            .map(str::trim)
            .filter(|g| !g.is_empty());
        let target = match decision.action {
            DecisionAction::Approve => AlertState::Approved,
            DecisionAction::Dismiss => AlertState::Dismissed,
            DecisionAction::Edit => {
                if edit_text.is_none() {
                    return Err(AlertError::EditRequiresGuidance);
                }
                AlertState::Edited
            }
        };
        match alert.state {
            AlertState::Pending => {
                alert.state = target;
                if target == AlertState::Edited {
                    alert.decision_guidance = edit_text.map(str::to_string);
                }
                Ok(alert.clone())
            }
            current
                if current == target
                    && (target != AlertState::Edited
                        || alert.decision_guidance.as_deref() == edit_text) =>
            {
                Ok(alert.clone())
            }
            current => Err(AlertError::Conflict {
                id: id.to_string(),
                state: current,
            }),
        }
    }

    /// Called before generating `next_step`: expires alerts that have sat
    /// undecided for `expiry_steps` completed steps and hands back decided
    /// guidance not yet applied.
    pub fn tick(&self, next_step: u32, expiry_steps: u32) -> TickOutcome {
        let completed = next_step.saturating_sub(1);
        let mut out = TickOutcome::default();
        for alert in self.lock().iter_mut() {
            match alert.state {
                AlertState::Pending if completed.saturating_sub(alert.at_step) >= expiry_steps => {
                    alert.state = AlertState::Expired;
                    out.expired.push(alert.clone());
                }
                AlertState::Approved | AlertState::Edited if alert.applied_at_step.is_none() => {
                    alert.applied_at_step = Some(next_step);
                    let text = alert
                        .effective_guidance()
                        .expect("decided alerts carry guidance")
                        .to_string();
                    let guidance = Guidance {
                        text,
                        source: alert.source,
                        mode: InterventionMode::Surface,
                        at_step: alert.at_step,
                    };
                    out.to_apply.push((alert.clone(), guidance));
                }
                _ => {}
            }
        }
        out
    }

    /// Expires everything still pending, e.g. when the run ends.
    pub fn expire_all(&self) -> Vec<Alert> {
        let mut expired = Vec::new();
        for alert in self.lock().iter_mut() {
            if alert.state == AlertState::Pending {
                alert.state = AlertState::Expired;
                expired.push(alert.clone());
            }
        }
        expired
    }
}
