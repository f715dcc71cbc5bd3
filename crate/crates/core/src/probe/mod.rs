//! Hidden-state probe: pooled features, class-weighted L2 logistic
//! regression, cross-validated AUROC and layer selection.

mod evaluation;
mod features;
mod logistic;
mod model_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluation::{
    auroc, cv_auroc, decide_intervention, evaluate_layer, probe_guidance, select_layer,
    stratified_folds, CvResult, LayerReport,
};
pub use features::{mean_pool, pool_window, FeatureVector, Standardizer};
pub use logistic::{
    balanced_class_weights, fit_logistic, fit_logistic_traced, sigmoid, FitOptions,
    LogisticObjective, ProbeModel, TrainMeta,
};
pub use model_file::{ModelFileError, MODEL_FORMAT, MODEL_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("pooling window is empty")]
    EmptyWindow,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("both classes are required for training")]
    SingleClass,
    #[error("non-finite feature value in example {example} at index {index}")]
    NonFiniteFeature { example: usize, index: usize },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("{n} examples cannot fill {folds} folds")]
    TooFewExamples { n: usize, folds: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no layer has a defined cross-validated AUROC")]
    AllUndefined,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Labelled pooled features for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub layer: u32,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    #[serde(default)]
    pub source_traces: Vec<String>,
}

impl ProbeDataset {
    pub fn new(layer: u32, features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, ProbeError> {
        let ds = Self {
            layer,
            features,
            labels,
            source_traces: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.features.len() != self.labels.len() {
            return Err(ProbeError::LengthMismatch {
                scores: self.features.len(),
                labels: self.labels.len(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(ProbeError::InvalidLabel(bad));
        }
        let dim = self.dimension();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != dim {
                return Err(ProbeError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(ProbeError::NonFiniteFeature {
                    example: i,
                    index: j,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    pub fn subset(&self, idx: &[usize]) -> ProbeDataset {
        ProbeDataset {
            layer: self.layer,
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            source_traces: self.source_traces.clone(),
        }
    }
}
