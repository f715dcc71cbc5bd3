use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, FitOptions};
use super::{ProbeDataset, ProbeError};
use crate::companion::should_check;
use crate::domain::CompanionConfig;
use crate::intervention::GENERIC_GUIDANCE;

/// Mann-Whitney AUROC with half credit for ties. `None` when either class is
/// absent.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>, ProbeError> {
    if scores.len() != labels.len() {
        return Err(ProbeError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(ProbeError::InvalidLabel(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Test-index sets for stratified k-fold. Each class is shuffled with the
/// seed and dealt round-robin, continuing where the previous class stopped.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Mean fold AUROC, undefined if any fold is.
    pub mean: Option<f64>,
    pub folds: Vec<Option<f64>>,
}

impl CvResult {
    pub fn undefined_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.is_none()).count()
    }
}

/// Stratified k-fold AUROC. A fold is undefined when its test split lacks a
/// class or its training split cannot be fitted.
pub fn cv_auroc(
    dataset: &ProbeDataset,
    folds: usize,
    opts: &FitOptions,
) -> Result<CvResult, ProbeError> {
    dataset.validate()?;
    if folds < 2 {
        return Err(ProbeError::InvalidParameter("need at least 2 folds".into()));
    }
    if dataset.len() < folds {
        return Err(ProbeError::TooFewExamples {
            n: dataset.len(),
            folds,
        });
    }
    let splits = stratified_folds(&dataset.labels, folds, opts.seed);
    let mut per_fold = Vec::with_capacity(folds);
    for test in &splits {
        let train: Vec<usize> = (0..dataset.len())
            .filter(|i| test.binary_search(i).is_err())
            .collect();
        let test_set = dataset.subset(test);
        let (n_neg, n_pos) = test_set.class_counts();
        if n_neg == 0 || n_pos == 0 {
            per_fold.push(None);
            continue;
        }
        let model = match fit_logistic(&dataset.subset(&train), opts) {
            Ok(m) => m,
            Err(ProbeError::SingleClass) => {
                per_fold.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let scores = test_set
            .features
            .iter()
            .map(|x| model.logit(x))
            .collect::<Result<Vec<_>, _>>()?;
        per_fold.push(auroc(&scores, &test_set.labels)?);
    }
    let mean = per_fold
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    Ok(CvResult {
        mean,
        folds: per_fold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: u32,
    pub train_auroc: Option<f64>,
    pub cv_auroc: Option<f64>,
    pub fold_detail: Vec<Option<f64>>,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn evaluate_layer(
    dataset: &ProbeDataset,
    folds: usize,
    opts: &FitOptions,
) -> Result<LayerReport, ProbeError> {
    let (n_neg, n_pos) = dataset.class_counts();
    let model = fit_logistic(dataset, opts)?;
    let scores = dataset
        .features
        .iter()
        .map(|x| model.logit(x))
        .collect::<Result<Vec<_>, _>>()?;
    let train_auroc = auroc(&scores, &dataset.labels)?;
    let cv = cv_auroc(dataset, folds, opts)?;
    Ok(LayerReport {
        layer: dataset.layer,
        train_auroc,
        cv_auroc: cv.mean,
        fold_detail: cv.folds,
        n_pos,
        n_neg,
    })
}

/// Layer with the highest defined CV AUROC; ties go to the shallower layer.
pub fn select_layer(reports: &[LayerReport]) -> Result<u32, ProbeError> {
    reports
        .iter()
        .filter_map(|r| r.cv_auroc.map(|a| (r.layer, a)))
        .fold(None, |best: Option<(u32, f64)>, (layer, a)| match best {
            Some((bl, ba)) if ba > a || (ba == a && bl < layer) => Some((bl, ba)),
            _ => Some((layer, a)),
        })
        .map(|(layer, _)| layer)
        .ok_or(ProbeError::AllUndefined)
}

/// Fires on scheduled steps when the probability reaches the threshold
/// (inclusive).
pub fn decide_intervention(probability: f64, cfg: &CompanionConfig, step: u32) -> bool {
    should_check(step, cfg.watch_every) && probability >= cfg.probe_threshold
}

/// The probe has no generative capacity; it always injects the same nudge.
pub fn probe_guidance(_probability: f64, _recent_repetition: f64) -> &'static str {
    GENERIC_GUIDANCE
}
