//! Runtime monitoring of a reasoning agent for loops, drift and stalls, with
//! an LLM-judge companion and a hidden-state probe companion.

pub mod agent;
pub mod backend;
pub mod companion;
pub mod domain;
pub mod experiment;
pub mod intervention;
pub mod judge;
pub mod metrics;
pub mod probe;
pub mod record;
pub mod router;
pub mod scripted;
pub mod session;
pub mod synthetic;
pub mod trace;

pub use backend::{
    BackendError, BackendHandle, ChatBackend, ChatMessage, Completion, HttpBackend, Sampling,
};
pub use domain::{
    CognitiveState, CompanionConfig, Condition, Guidance, GuidanceSource, InterventionMode,
    LossWeights, RunHistory, StepRecord, Task, TaskCategory,
};
pub use record::{RunEvent, RunHeader, RunRecord, RunStatus, Timing};
pub use session::{
    run_header, run_session, run_session_observed, SessionBackends, SessionConfig, SessionError,
    SessionFailure,
};
