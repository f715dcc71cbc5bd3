//! Versioned, hash-checked JSON model file. Floats are written in shortest
//! round-trip form, so a reload is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::logistic::ProbeModel;

pub const MODEL_FORMAT: &str = "companion-probe";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a probe model file (format `{0}`)")]
    Format(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("content hash mismatch: file says {stored}, content hashes to {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("inconsistent model: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: ProbeModel,
    sha256: String,
}

fn content_hash(model: &ProbeModel) -> Result<String, ModelFileError> {
    let canonical = serde_json::to_vec(model)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

impl ProbeModel {
    fn check_consistency(&self) -> Result<(), ModelFileError> {
        let d = self.dimension;
        let s = &self.standardization;
        if self.weights.len() != d || s.mean.len() != d || s.scale.len() != d {
            return Err(ModelFileError::Invalid(format!(
                "dimension {d} but {} weights, {} means, {} scales",
                self.weights.len(),
                s.mean.len(),
                s.scale.len()
            )));
        }
        if s.scale.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ModelFileError::Invalid(
                "standardization scales must be positive".into(),
            ));
        }
        let finite = self
            .weights
            .iter()
            .chain(&s.mean)
            .chain(std::iter::once(&self.bias))
            .all(|v| v.is_finite());
        if !finite {
            return Err(ModelFileError::Invalid("non-finite parameter".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ModelFileError::Invalid(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelFileError> {
        self.check_consistency()?;
        let env = Envelope {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            sha256: content_hash(self)?,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != MODEL_FORMAT {
            return Err(ModelFileError::Format(env.format));
        }
        if env.version != MODEL_VERSION {
            return Err(ModelFileError::Version(env.version));
        }
        let computed = content_hash(&env.model)?;
        if computed != env.sha256 {
            return Err(ModelFileError::HashMismatch {
                stored: env.sha256,
                computed,
            });
        }
        env.model.check_consistency()?;
        Ok(env.model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{fit_logistic, FitOptions, ProbeDataset};

    fn model() -> ProbeModel {
        let ds = ProbeDataset::new(
            28,
            vec![
                vec![0.1, 1.0 / 3.0, 7.0],
                vec![-0.7, 2.0, 7.0],
                vec![1.1, -0.25, 7.0],
                vec![0.9, 0.6, 7.0],
            ],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        fit_logistic(&ds, &FitOptions::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let text = m.to_json().unwrap();
        let back = ProbeModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights.iter().zip(&m.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let x = [0.3, -0.1, 7.0];
        assert_eq!(
            back.predict_proba(&x).unwrap().to_bits(),
            m.predict_proba(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn tampering_is_detected() {
        let m = model();
        let text = m.to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["bias"] = serde_json::json!(m.bias + 1.0);
        let err = ProbeModel::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ModelFileError::HashMismatch { .. }));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(9);
        assert!(matches!(
            ProbeModel::from_json(&v.to_string()),
            Err(ModelFileError::Version(9))
        ));
        assert!(matches!(
            ProbeModel::from_json("{\"format\":"),
            Err(ModelFileError::Json(_))
        ));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        let m = model();
        m.save(&path).unwrap();
        assert_eq!(ProbeModel::load(&path).unwrap(), m);
    }
}
