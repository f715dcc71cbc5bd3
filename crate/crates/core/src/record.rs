//! Run-record files: one JSON object per line, header first, then the
//! append-only event log of the session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::Sampling;
use crate::companion::Assessment;
use crate::domain::{
    reframe_description, CompanionConfig, Condition, Guidance, InterventionMode, RunHistory,
    StepRecord, Task,
};
use crate::intervention::Alert;
use crate::judge::QualityScore;

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub run_id: String,
    pub task: Task,
    pub condition: Condition,
    pub companion: CompanionConfig,
    pub n_steps: u32,
    pub seed: u64,
    pub agent_sampling: Sampling,
    #[serde(default)]
    pub probe_layer: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds spent producing agent steps.
    pub t_agent: f64,
    /// Seconds spent assessing, scoring and dispatching interventions.
    pub t_companion: f64,
    pub wall: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunEvent {
    Header(RunHeader),
    Step {
        step: StepRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quality: Option<QualityScore>,
    },
    Assessment {
        assessment: Assessment,
        elapsed: f64,
    },
    ProbeScore {
        step: u32,
        layer: u32,
        probability: f64,
        fired: bool,
        elapsed: f64,
    },
    /// Guidance committed to the agent: a whisper, a reframe or a decided
    /// surface alert.
    Intervention {
        guidance: Guidance,
    },
    /// Alert snapshot after a state change.
    Alert {
        alert: Alert,
    },
    Timing(Timing),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub header: RunHeader,
    pub events: Vec<RunEvent>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unsupported run-record schema version {found} (expected {RUN_SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("run id `{0}` cannot be used as a file name")]
    InvalidRunId(String),
}

impl RunRecord {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = (&StepRecord, Option<&QualityScore>)> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::Step { step, quality } => Some((step, quality.as_ref())),
            _ => None,
        })
    }

    pub fn timing(&self) -> Option<&Timing> {
        self.events.iter().rev().find_map(|e| match e {
            RunEvent::Timing(t) => Some(t),
            _ => None,
        })
    }

    pub fn status(&self) -> RunStatus {
        self.timing().map_or(RunStatus::Running, |t| t.status)
    }

    pub fn interventions(&self) -> impl Iterator<Item = &Guidance> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::Intervention { guidance } => Some(guidance),
            _ => None,
        })
    }

    /// Rebuilds `H_t` and `G_t` from the log.
    pub fn history(&self) -> RunHistory {
        let mut h = RunHistory::new(self.header.task.clone(), self.header.condition);
        for e in &self.events {
            match e {
                RunEvent::Step { step, .. } => h.steps.push(step.clone()),
                RunEvent::Intervention { guidance } => {
                    if guidance.mode == InterventionMode::Autonomous {
                        h.reframed_focus = Some(guidance.text.clone());
                    }
                    h.guidance_log.push(guidance.clone());
                }
                _ => {}
            }
        }
        h
    }

    /// Task text the agent saw at the end of the run.
    pub fn final_description(&self) -> String {
        let h = self.history();
        match &h.reframed_focus {
            Some(f) => reframe_description(&h.task.description, f),
            None => h.task.description.clone(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in std::iter::once(&RunEvent::Header(self.header.clone())).chain(&self.events) {
            out.push_str(&serde_json::to_string(e).expect("run events serialize"));
            out.push('\n');
        }
        out
    }
}

fn schema(line: usize, message: impl Into<String>) -> RecordError {
    RecordError::Schema {
        line,
        message: message.into(),
    }
}

pub fn parse_run_record(text: &str) -> Result<RunRecord, RecordError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| schema(1, "empty run record"))?;
    let value: Value =
        serde_json::from_str(first).map_err(|e| schema(1, format!("malformed header: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema(1, "header lacks schema_version"))?;
    if version != RUN_SCHEMA_VERSION as u64 {
        return Err(RecordError::SchemaVersion { found: version });
    }
    let header = match serde_json::from_value(value) {
        Ok(RunEvent::Header(h)) => h,
        Ok(_) => return Err(schema(1, "first line is not a HEADER")),
        Err(e) => return Err(schema(1, format!("malformed header: {e}"))),
    };
    let mut record = RunRecord::new(header);
    let mut expected_step = 1;
    for (i, line) in lines {
        let line_no = i + 1;
        if record.timing().is_some() {
            return Err(schema(line_no, "event after TIMING"));
        }
        let event: RunEvent = serde_json::from_str(line)
            .map_err(|e| schema(line_no, format!("malformed event: {e}")))?;
        match &event {
            RunEvent::Header(_) => return Err(schema(line_no, "repeated HEADER")),
            RunEvent::Step { step, .. } => {
                if step.index != expected_step {
                    return Err(schema(
                        line_no,
                        format!(
                            "step {} out of sequence, expected {expected_step}",
                            step.index
                        ),
                    ));
                }
                expected_step += 1;
            }
            _ => {}
        }
        record.events.push(event);
    }
    Ok(record)
}

fn file_name(run_id: &str) -> Result<String, RecordError> {
    let ok = !run_id.is_empty()
        && !run_id.starts_with('.')
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        return Err(RecordError::InvalidRunId(run_id.to_string()));
    }
    Ok(format!("{run_id}.jsonl"))
}

/// Path a run with this id is stored at.
pub fn run_path(dir: &Path, run_id: &str) -> Result<PathBuf, RecordError> {
    Ok(dir.join(file_name(run_id)?))
}

/// Append-only writer for one run file. Each event is flushed as written.
pub struct RunWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunWriter {
    pub fn create(dir: &Path, header: &RunHeader) -> Result<Self, RecordError> {
        fs::create_dir_all(dir)?;
        let path = run_path(dir, &header.run_id)?;
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        let mut w = Self {
            path,
            out: BufWriter::new(file),
        };
        w.append(&RunEvent::Header(header.clone()))?;
        Ok(w)
    }

    pub fn append(&mut self, event: &RunEvent) -> Result<(), RecordError> {
        serde_json::to_writer(&mut self.out, event).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn persist_run(dir: &Path, record: &RunRecord) -> Result<PathBuf, RecordError> {
    let mut w = RunWriter::create(dir, &record.header)?;
    for e in &record.events {
        w.append(e)?;
    }
    Ok(w.path)
}

pub fn load_run(path: &Path) -> Result<RunRecord, RecordError> {
    parse_run_record(&fs::read_to_string(path)?)
}

/// Every `*.jsonl` run file in `dir`, ordered by file name.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>, RecordError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_run(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GuidanceSource, TaskCategory};

    fn record() -> RunRecord {
        let task = Task::new("liar", "Resolve the liar paradox.", TaskCategory::LoopProne).unwrap();
        let header = RunHeader {
            schema_version: RUN_SCHEMA_VERSION,
            run_id: "liar__LLM_COMPANION__run1".into(),
            task,
            condition: Condition::LlmCompanion,
            companion: CompanionConfig::default(),
            n_steps: 2,
            seed: u64::MAX,
            agent_sampling: Sampling::agent(),
            probe_layer: None,
        };
        let g = Guidance::new(
            "restate the goal",
            GuidanceSource::LlmCompanion,
            InterventionMode::Whisper,
            1,
        )
        .unwrap();
        let mut r = RunRecord::new(header);
        r.events.push(RunEvent::Step {
            step: StepRecord::new(1, "p1".into(), "r \"one\"\n".into(), 0.1 + 0.2, None),
            quality: Some(QualityScore::new(8, 7, 9).unwrap()),
        });
        r.events.push(RunEvent::Intervention {
            guidance: g.clone(),
        });
        r.events.push(RunEvent::Step {
            step: StepRecord::new(2, "p2".into(), "r two".into(), 1.0 / 3.0, Some(g)),
            quality: None,
        });
        r.events.push(RunEvent::Timing(Timing {
            t_agent: 0.1 + 0.2 + 1.0 / 3.0,
            t_companion: 1e-300,
            wall: 0.7,
            status: RunStatus::Complete,
            error: None,
        }));
        r
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let r = record();
        let path = persist_run(dir.path(), &r).unwrap();
        assert!(path.ends_with("liar__LLM_COMPANION__run1.jsonl"));
        let back = load_run(&path).unwrap();
        assert_eq!(back, r);
        let first = fs::read_to_string(&path).unwrap();
        let first = first.lines().next().unwrap();
        assert!(first.starts_with("{\"type\":\"HEADER\",\"schema_version\":1"));
        assert_eq!(back.history().guidance_log.len(), 1);
        assert_eq!(back.status(), RunStatus::Complete);
    }

    #[test]
    fn truncation_and_garbage_are_schema_errors() {
        let text = record().to_jsonl();
        let cut = &text[..text.len() - 20];
        assert!(matches!(
            parse_run_record(cut),
            Err(RecordError::Schema { .. })
        ));
        assert!(matches!(
            parse_run_record(""),
            Err(RecordError::Schema { line: 1, .. })
        ));
        assert!(matches!(
            parse_run_record("\u{0}\u{1}garbage"),
            Err(RecordError::Schema { .. })
        ));
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        assert!(matches!(
            parse_run_record(&bumped),
            Err(RecordError::SchemaVersion { found: 2 })
        ));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 3);
        assert!(matches!(
            parse_run_record(&lines.join("\n")),
            Err(RecordError::Schema { .. })
        ));
    }

    #[test]
    fn rejects_path_like_run_ids() {
        for bad in ["../x", "a/b", "", ".hidden"] {
            assert!(matches!(
                run_path(Path::new("/tmp"), bad),
                Err(RecordError::InvalidRunId(_))
            ));
        }
    }
}
