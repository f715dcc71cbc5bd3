//! Deterministic stand-ins for the agent, the companion judge and the quality
//! judge. They speak the same chat protocol as real backends, so sessions
//! cannot tell them apart.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatMessage, Completion, Sampling};
use crate::companion::render_assessment;
use crate::domain::{CognitiveState, REFRAME_HEADER};
use crate::metrics::jaccard;
use crate::synthetic::GaussianClasses;

/// Sentences a looping agent repeats verbatim; one is chosen per seed.
pub const LOOP_SENTENCES: [&str; 3] = [
    "So the key point remains that the first claim has to be checked again before anything else can be said about it.",
    "Once more we come back to the same question and the same answer, which still depends on the earlier assumption.",
    "As noted before, the argument returns to where it started and restates that premise without adding anything new.",
];

pub const LOOP_GUIDANCE: &str =
    "Stop restating the same point. Name one fact that is settled and test a new consequence of it.";

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "vo", "pe", "da", "zu", "fi", "ho", "ge", "by", "wa",
    "xe", "qu", "jo", "ce",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScriptedMode {
    Loop,
    Progress,
    Drift,
    Stuck,
}

fn default_topic() -> Vec<String> {
    [
        "task",
        "goal",
        "claim",
        "evidence",
        "premise",
        "answer",
        "reason",
        "conclusion",
    ]
    .map(String::from)
    .to_vec()
}

fn default_decay() -> f64 {
    0.5
}

fn default_start_words() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    pub mode: ScriptedMode,
    pub guidance_sensitivity: f64,
    pub seed: u64,
    /// Task vocabulary used by on-topic output.
    #[serde(default = "default_topic")]
    pub topic: Vec<String>,
    /// Per-step shrink factor for STUCK, and topic decay for DRIFT.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_start_words")]
    pub start_words: usize,
    /// Artificial generation latency.
    #[serde(default)]
    pub latency_ms: u64,
}

impl ScriptedBehavior {
    pub fn new(mode: ScriptedMode, guidance_sensitivity: f64, seed: u64) -> Self {
        Self {
            mode,
            guidance_sensitivity,
            seed,
            topic: default_topic(),
            decay: default_decay(),
            start_words: default_start_words(),
            latency_ms: 0,
        }
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn loop_sentence(&self) -> &'static str {
        LOOP_SENTENCES[(self.seed % LOOP_SENTENCES.len() as u64) as usize]
    }
}

/// One generated step and the state it was built to exhibit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedStep {
    pub text: String,
    pub state: CognitiveState,
}

fn step_rng(seed: u64, step: u32, salt: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((step as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ salt;
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Invented words that never recur across steps: the step number is baked
/// into each one.
fn fresh_words(seed: u64, step: u32, n: usize) -> Vec<String> {
    let mut rng = step_rng(seed, step, 0x51);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..4);
            let mut w: String = (0..len)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect();
            w.push_str(&format!("s{step}"));
            w
        })
        .collect()
}

fn sentence(words: Vec<String>) -> String {
    let mut s = words.join(" ");
    s.push('.');
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

fn progress_text(b: &ScriptedBehavior, step: u32) -> String {
    let mut words = vec!["next".to_string()];
    words.extend(b.topic.iter().take(3).cloned());
    words.extend(fresh_words(b.seed, step, 20));
    sentence(words)
}

/// Whether guidance seen at `step` breaks the pattern. Seeded per step.
pub fn responds_to_guidance(b: &ScriptedBehavior, step: u32) -> bool {
    step_rng(b.seed, step, 0x6A).random::<f64>() < b.guidance_sensitivity
}

/// Deterministic output for `step` given whether the agent has already
/// recovered in response to guidance.
pub fn scripted_step(b: &ScriptedBehavior, step: u32, recovered: bool) -> ScriptedStep {
    let on_track = |text| ScriptedStep {
        text,
        state: CognitiveState::OnTrack,
    };
    if recovered {
        return on_track(progress_text(b, step));
    }
    match b.mode {
        ScriptedMode::Progress => on_track(progress_text(b, step)),
        ScriptedMode::Loop => ScriptedStep {
            text: b.loop_sentence().to_string(),
            state: if step >= 2 {
                CognitiveState::Looping
            } else {
                CognitiveState::OnTrack
            },
        },
        ScriptedMode::Drift => {
            let total = b.topic.len();
            let kept = (total as f64 * b.decay.powi(step as i32 - 1)).round() as usize;
            let mut words: Vec<String> = b.topic.iter().take(kept).cloned().collect();
            words.extend(fresh_words(b.seed, step, 20 - kept.min(20)));
            ScriptedStep {
                text: sentence(words),
                state: if 2 * kept < total {
                    CognitiveState::Drifting
                } else {
                    CognitiveState::OnTrack
                },
            }
        }
        ScriptedMode::Stuck => {
            let n =
                ((b.start_words as f64 * b.decay.powi(step as i32 - 1)).round() as usize).max(1);
            ScriptedStep {
                text: sentence(fresh_words(b.seed, step, n)),
                state: if 2 * n < b.start_words {
                    CognitiveState::Stuck
                } else {
                    CognitiveState::OnTrack
                },
            }
        }
    }
}

/// Text for `step`. With `guidance_seen`, the agent abandons its pattern if
/// the seeded draw for that step falls under the sensitivity.
pub fn scripted_generate(b: &ScriptedBehavior, step: u32, guidance_seen: bool) -> String {
    let recovered = guidance_seen && responds_to_guidance(b, step);
    scripted_step(b, step, recovered).text
}

/// Synthetic hidden states attached to every agent reply.
#[derive(Debug, Clone)]
pub struct ScriptedFeatures {
    pub layer: u32,
    pub classes: Arc<GaussianClasses>,
    pub seed: u64,
}

#[derive(Debug, Default)]
struct AgentState {
    calls: u32,
    recovered: bool,
}

static STEP_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Write step (\d+) of your reasoning").expect("static regex"));

const WHISPER_MARKER: &str = "(Before continuing, consider:";

/// Agent backend following a [`ScriptedBehavior`]. Holds per-run state, so use
/// one instance per session.
#[derive(Debug)]
pub struct ScriptedAgent {
    behavior: ScriptedBehavior,
    features: Option<ScriptedFeatures>,
    state: Mutex<AgentState>,
}

impl ScriptedAgent {
    pub fn new(behavior: ScriptedBehavior) -> Self {
        Self {
            behavior,
            features: None,
            state: Mutex::new(AgentState::default()),
        }
    }

    pub fn with_features(mut self, features: ScriptedFeatures) -> Self {
        self.features = Some(features);
        self
    }

    pub fn behavior(&self) -> &ScriptedBehavior {
        &self.behavior
    }
}

impl ChatBackend for ScriptedAgent {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _sampling: &Sampling,
    ) -> Result<Completion, BackendError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let mut st = self.state.lock().expect("agent state poisoned");
        st.calls += 1;
        let step = STEP_RE
            .captures(prompt)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(st.calls);
        let guided = prompt.contains(WHISPER_MARKER) || prompt.contains(REFRAME_HEADER);
        if guided && !st.recovered && responds_to_guidance(&self.behavior, step) {
            st.recovered = true;
        }
        let out = scripted_step(&self.behavior, step, st.recovered);
        drop(st);
        if self.behavior.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.behavior.latency_ms));
        }
        let hidden_states = self.features.as_ref().map(|f| {
            let mut rng = step_rng(self.behavior.seed ^ f.seed, step, 0x7F);
            let v = f.classes.sample(out.state.is_degraded(), &mut rng);
            BTreeMap::from([(f.layer, v)])
        });
        Ok(Completion {
            content: out.text,
            hidden_states,
        })
    }
}

static HISTORY_STEP_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Step (\d+): (.*)$").expect("static regex"));

#[derive(Debug, Clone, PartialEq)]
pub enum JudgeScript {
    /// Reads the steps in the diagnostic prompt and reports repetition.
    Heuristic,
    /// Always answers with this text.
    Fixed(String),
}

/// Companion judge backend.
#[derive(Debug, Clone)]
pub struct ScriptedJudge {
    pub script: JudgeScript,
    pub latency_ms: u64,
}

impl ScriptedJudge {
    pub fn heuristic() -> Self {
        Self {
            script: JudgeScript::Heuristic,
            latency_ms: 0,
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self {
            script: JudgeScript::Fixed(reply.into()),
            latency_ms: 0,
        }
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }
}

/// Verdict over the rendered steps: LOOPING when consecutive steps overlap
/// heavily, STUCK when output keeps shrinking to under half its start.
pub fn heuristic_verdict(diagnostic_prompt: &str) -> String {
    let steps: Vec<&str> = HISTORY_STEP_RE
        .captures_iter(diagnostic_prompt)
        .map(|c| c.get(2).map_or("", |m| m.as_str()))
        .collect();
    let looping = steps.windows(2).any(|w| jaccard(w[0], w[1]) >= 0.6);
    if looping {
        return render_assessment(
            CognitiveState::Looping,
            "Consecutive steps repeat the same content.",
            Some(LOOP_GUIDANCE),
        );
    }
    let counts: Vec<usize> = steps.iter().map(|s| s.split_whitespace().count()).collect();
    let shrinking = counts.len() >= 2
        && counts.windows(2).all(|w| w[1] < w[0])
        && 2 * counts[counts.len() - 1] < counts[0];
    if shrinking {
        return render_assessment(
            CognitiveState::Stuck,
            "Each step says less than the one before.",
            Some("Write out the next concrete sub-step in full before judging it."),
        );
    }
    render_assessment(CognitiveState::OnTrack, "Steps build on each other.", None)
}

impl ChatBackend for ScriptedJudge {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _sampling: &Sampling,
    ) -> Result<Completion, BackendError> {
        if self.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.latency_ms));
        }
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let reply = match &self.script {
            JudgeScript::Heuristic => heuristic_verdict(prompt),
            JudgeScript::Fixed(text) => text.clone(),
        };
        Ok(Completion::text(reply))
    }
}

static JUDGE_PROMPT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)^Task: (.*)\nStep \d+ response: (.*)\nScore this step\.")
        .expect("static regex")
});

/// Quality judge that rewards on-topic, non-repeated steps. Scores carry a
/// small deterministic jitter derived from the response text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedQualityJudge;

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn scripted_quality_reply(judge_prompt: &str) -> String {
    let Some(caps) = JUDGE_PROMPT_RE.captures(judge_prompt) else {
        return "I cannot score this.".into();
    };
    let (task, response) = (&caps[1], &caps[2]);
    let h = fnv1a(response);
    let repeated = LOOP_SENTENCES.contains(&response);
    let on_topic = jaccard(task, response) > 0.0
        || crate::metrics::tokenize_words(response)
            .iter()
            .any(|w| default_topic().contains(w));
    let relevance = if on_topic { 8 } else { 4 } + (h % 2) as u8;
    let progress = if repeated { 2 } else { 7 } + ((h >> 8) % 3) as u8;
    let coherence = 6 + ((h >> 16) % 4) as u8;
    format!("Relevance: {relevance}\nProgress: {progress}\nCoherence: {coherence}")
}

impl ChatBackend for ScriptedQualityJudge {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _sampling: &Sampling,
    ) -> Result<Completion, BackendError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        Ok(Completion::text(scripted_quality_reply(prompt)))
    }
}
