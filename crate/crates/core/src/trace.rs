//! Hidden-state trace files: one JSON record per agent step, written by the
//! extractor and consumed by probe training.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{mean_pool, ProbeDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PoolingMode {
    PooledOnly,
    RawWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub task_id: String,
    pub step_idx: u32,
    pub text: String,
    /// Pooled vector per layer.
    pub layers: BTreeMap<u32, Vec<f64>>,
    /// Per-token final-position states per layer, oldest first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_window: Option<BTreeMap<u32, Vec<Vec<f64>>>>,
    pub pooling_mode: PoolingMode,
    pub w: usize,
    pub d_model: usize,
    #[serde(default)]
    pub label: Option<u8>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("duplicate record for run `{run_id}` step {step_idx}")]
    Duplicate { run_id: String, step_idx: u32 },
    #[error("run `{run_id}` step {step_idx}: pooled vector at layer {layer} differs from raw window mean (relative error {error:e})")]
    PoolingMismatch {
        run_id: String,
        step_idx: u32,
        layer: u32,
        error: f64,
    },
    #[error("labelled record run `{run_id}` step {step_idx} has no layer {layer}")]
    MissingLayer {
        run_id: String,
        step_idx: u32,
        layer: u32,
    },
}

impl TraceRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.step_idx == 0 {
            return Err("step_idx must be >= 1".into());
        }
        if self.w == 0 || self.d_model == 0 {
            return Err("w and d_model must be >= 1".into());
        }
        if self.layers.is_empty() {
            return Err("no layers recorded".into());
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(format!("label {l} is not 0 or 1"));
            }
        }
        let check_vec = |what: &str, layer: u32, v: &[f64]| -> Result<(), String> {
            if v.len() != self.d_model {
                return Err(format!(
                    "{what} at layer {layer} has length {}, expected d_model {}",
                    v.len(),
                    self.d_model
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("{what} at layer {layer} has non-finite values"));
            }
            Ok(())
        };
        for (&layer, v) in &self.layers {
            check_vec("pooled vector", layer, v)?;
        }
        match (self.pooling_mode, &self.raw_window) {
            (PoolingMode::PooledOnly, Some(_)) => {
                return Err("raw_window present in POOLED_ONLY record".into())
            }
            (PoolingMode::RawWindow, None) => {
                return Err("RAW_WINDOW record without raw_window".into())
            }
            (PoolingMode::RawWindow, Some(raw)) => {
                for layer in self.layers.keys() {
                    let states = raw
                        .get(layer)
                        .ok_or_else(|| format!("raw_window missing layer {layer}"))?;
                    if states.is_empty() || states.len() > self.w {
                        return Err(format!(
                            "raw_window at layer {layer} has {} states, expected 1..={}",
                            states.len(),
                            self.w
                        ));
                    }
                    for s in states {
                        check_vec("raw state", *layer, s)?;
                    }
                }
            }
            (PoolingMode::PooledOnly, None) => {}
        }
        Ok(())
    }

    /// Recomputes pooling from the raw window and compares it with the stored
    /// vector using `|pooled - recomputed| <= rel_tol * |pooled|`.
    pub fn verify_pooling(&self, rel_tol: f64) -> Result<(), TraceError> {
        let Some(raw) = &self.raw_window else {
            return Ok(());
        };
        for (&layer, pooled) in &self.layers {
            let Some(states) = raw.get(&layer) else {
                continue;
            };
            let recomputed = mean_pool(states).map_err(|e| TraceError::Schema {
                line: 0,
                message: e.to_string(),
            })?;
            let diff = pooled
                .iter()
                .zip(&recomputed)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm = pooled.iter().map(|a| a * a).sum::<f64>().sqrt();
            let error = if norm > 0.0 { diff / norm } else { diff };
            if error > rel_tol {
                return Err(TraceError::PoolingMismatch {
                    run_id: self.run_id.clone(),
                    step_idx: self.step_idx,
                    layer,
                    error,
                });
            }
        }
        Ok(())
    }
}

/// Parses and validates one trace line. `line_no` is only used for errors.
pub fn parse_trace_line(text: &str, line_no: usize) -> Result<TraceRecord, TraceError> {
    let rec: TraceRecord = serde_json::from_str(text).map_err(|e| TraceError::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    rec.validate().map_err(|message| TraceError::Schema {
        line: line_no,
        message,
    })?;
    Ok(rec)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_trace_line(line, i + 1)?;
        if !seen.insert((rec.run_id.clone(), rec.step_idx)) {
            return Err(TraceError::Duplicate {
                run_id: rec.run_id,
                step_idx: rec.step_idx,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let mut text = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_trace(&text)
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), TraceError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| TraceError::Json {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Labelled examples at `layer`. Unlabelled records are skipped.
pub fn dataset_from_traces(
    records: &[TraceRecord],
    layer: u32,
    sources: Vec<String>,
) -> Result<ProbeDataset, TraceError> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let Some(label) = r.label else { continue };
        let v = r
            .layers
            .get(&layer)
            .ok_or_else(|| TraceError::MissingLayer {
                run_id: r.run_id.clone(),
                step_idx: r.step_idx,
                layer,
            })?;
        features.push(v.clone());
        labels.push(label);
    }
    let mut ds = ProbeDataset::new(layer, features, labels).map_err(|e| TraceError::Schema {
        line: 0,
        message: e.to_string(),
    })?;
    ds.source_traces = sources;
    Ok(ds)
}
