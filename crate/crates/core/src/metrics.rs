//! Repetition, length trend, effect size, overhead and the companion loss.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{LossWeights, RunHistory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("need at least 2 steps, got {0}")]
    TooShort(usize),
    #[error("each group needs at least 2 samples, got {n_a} and {n_b}")]
    TooFew { n_a: usize, n_b: usize },
    #[error("pooled variance is zero")]
    Degenerate,
    #[error("companion and agent time are both zero")]
    ZeroTotal,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("loss weights must satisfy alpha > beta > gamma")]
    WeightOrder,
}

/// Lowercased set of alphanumeric runs.
pub fn tokenize_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Word-level Jaccard similarity. Two empty token sets score 0.
pub fn jaccard(a: &str, b: &str) -> f64 {
    jaccard_sets(&tokenize_words(a), &tokenize_words(b))
}

pub fn jaccard_sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub from_step: u32,
    pub to_step: u32,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub mean_jaccard: f64,
    pub max_jaccard: f64,
    pub per_pair: Vec<PairSimilarity>,
}

pub fn repetition_stats(history: &RunHistory) -> Result<RepetitionStats, MetricsError> {
    let steps = &history.steps;
    if steps.len() < 2 {
        return Err(MetricsError::TooShort(steps.len()));
    }
    let sets: Vec<_> = steps.iter().map(|s| tokenize_words(&s.response)).collect();
    let per_pair: Vec<PairSimilarity> = steps
        .windows(2)
        .zip(sets.windows(2))
        .map(|(s, w)| PairSimilarity {
            from_step: s[0].index,
            to_step: s[1].index,
            jaccard: jaccard_sets(&w[0], &w[1]),
        })
        .collect();
    let mean_jaccard = per_pair.iter().map(|p| p.jaccard).sum::<f64>() / per_pair.len() as f64;
    let max_jaccard = per_pair.iter().map(|p| p.jaccard).fold(0.0, f64::max);
    Ok(RepetitionStats {
        mean_jaccard,
        max_jaccard,
        per_pair,
    })
}

/// OLS slope of word count against step index, in words per step.
pub fn length_trend(history: &RunHistory) -> Result<f64, MetricsError> {
    let points: Vec<(f64, f64)> = history
        .steps
        .iter()
        .map(|s| (s.index as f64, s.word_count as f64))
        .collect();
    ols_slope(&points)
}

pub(crate) fn ols_slope(points: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooShort(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::InvalidInput(
            "step indices are all equal".into(),
        ));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EffectLabel {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectLabel {
    /// `|d| < 0.2` negligible, `[0.2, 0.5]` small, `(0.5, 0.8]` medium, `> 0.8` large.
    pub fn from_d(d: f64) -> Self {
        let m = d.abs();
        if m < 0.2 {
            EffectLabel::Negligible
        } else if m <= 0.5 {
            EffectLabel::Small
        } else if m <= 0.8 {
            EffectLabel::Medium
        } else {
            EffectLabel::Large
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub d: f64,
    pub label: EffectLabel,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Pooled-SD Cohen's d. `group_a` is the treatment group, so a positive d
/// means `group_a` scored higher.
pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<EffectSize, MetricsError> {
    let (n_a, n_b) = (group_a.len(), group_b.len());
    if n_a < 2 || n_b < 2 {
        return Err(MetricsError::TooFew { n_a, n_b });
    }
    if group_a.iter().chain(group_b).any(|x| !x.is_finite()) {
        return Err(MetricsError::InvalidInput("non-finite sample".into()));
    }
    let pooled_var = ((n_a as f64 - 1.0) * sample_variance(group_a)
        + (n_b as f64 - 1.0) * sample_variance(group_b))
        / (n_a + n_b - 2) as f64;
    if !(pooled_var > 0.0) {
        return Err(MetricsError::Degenerate);
    }
    let d = (mean(group_a) - mean(group_b)) / pooled_var.sqrt();
    Ok(EffectSize {
        d,
        label: EffectLabel::from_d(d),
        n_a,
        n_b,
    })
}

/// Companion share of total wall time, in percent.
pub fn overhead_pct(t_companion: f64, t_agent: f64) -> Result<f64, MetricsError> {
    if !(t_companion >= 0.0 && t_agent >= 0.0) {
        return Err(MetricsError::InvalidInput(
            "durations must be non-negative".into(),
        ));
    }
    let total = t_agent + t_companion;
    if total == 0.0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok(100.0 * t_companion / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub degraded: bool,
    pub intervened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub missed_term: f64,
    pub unnecessary_term: f64,
    pub overhead_term: f64,
    pub total: f64,
}

/// Weighted miss / false-alarm / overhead loss. Indicator terms are averaged
/// over steps so runs of different length compare directly.
pub fn companion_loss(
    events: &[StepOutcome],
    overhead_fraction: f64,
    weights: LossWeights,
) -> Result<LossBreakdown, MetricsError> {
    if !weights.violations().is_empty() {
        return Err(MetricsError::WeightOrder);
    }
    if !(0.0..=1.0).contains(&overhead_fraction) {
        return Err(MetricsError::InvalidInput(format!(
            "overhead fraction {overhead_fraction} outside [0, 1]"
        )));
    }
    let n = events.len().max(1) as f64;
    let missed = events
        .iter()
        .filter(|e| e.degraded && !e.intervened)
        .count() as f64;
    let unnecessary = events
        .iter()
        .filter(|e| !e.degraded && e.intervened)
        .count() as f64;
    let missed_term = weights.alpha * missed / n;
    let unnecessary_term = weights.beta * unnecessary / n;
    let overhead_term = weights.gamma * overhead_fraction;
    Ok(LossBreakdown {
        missed_term,
        unnecessary_term,
        overhead_term,
        total: missed_term + unnecessary_term + overhead_term,
    })
}
