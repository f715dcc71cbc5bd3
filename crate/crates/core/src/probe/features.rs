use serde::{Deserialize, Serialize};

use super::ProbeError;

/// A pooled hidden-state feature for one step at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layer: u32,
    pub step: u32,
    pub run_id: String,
}

/// Elementwise mean of final-position states.
pub fn mean_pool(states: &[Vec<f64>]) -> Result<Vec<f64>, ProbeError> {
    let first = states.first().ok_or(ProbeError::EmptyWindow)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for s in states {
        if s.len() != dim {
            return Err(ProbeError::DimensionMismatch {
                expected: dim,
                found: s.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = states.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Pools the last `w` states, or all of them when fewer were generated.
pub fn pool_window(states: &[Vec<f64>], w: usize) -> Result<Vec<f64>, ProbeError> {
    if w == 0 {
        return Err(ProbeError::EmptyWindow);
    }
    let start = states.len().saturating_sub(w);
    mean_pool(&states[start..])
}

/// Per-feature z-scoring fitted on training rows. Constant features get
/// scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let dim = rows.first().map(Vec::len).ok_or(ProbeError::EmptyDataset)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if x.len() != self.dimension() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pooling_examples() {
        assert_eq!(mean_pool(&[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(
            mean_pool(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            mean_pool(&[vec![0.3, 7.0], vec![0.3, 7.0]]).unwrap(),
            vec![0.3, 7.0]
        );
        assert_eq!(mean_pool(&[]).unwrap_err(), ProbeError::EmptyWindow);
        assert_eq!(
            mean_pool(&[vec![1.0], vec![1.0, 2.0]]).unwrap_err(),
            ProbeError::DimensionMismatch {
                expected: 1,
                found: 2
            }
        );
    }

    #[test]
    fn window_takes_the_tail_or_everything() {
        let states: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        assert_eq!(pool_window(&states, 10).unwrap(), vec![6.5]);
        assert_eq!(pool_window(&states[..3], 10).unwrap(), vec![1.0]);
        assert_eq!(pool_window(&states, 1).unwrap(), vec![11.0]);
    }

    #[test]
    fn standardizer_handles_constant_features() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.transform(&[3.0, 5.0]).unwrap(), vec![1.0, 0.0]);
        let rows = vec![vec![0.0], vec![4.0]];
        assert_eq!(Standardizer::fit(&rows).unwrap().scale, vec![2.0]);
    }

    proptest! {
        #[test]
        fn pooling_is_linear(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..10),
            a in -10.0f64..10.0,
        ) {
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| a * v).collect()).collect();
            let lhs = mean_pool(&scaled).unwrap();
            let rhs: Vec<f64> = mean_pool(&rows).unwrap().iter().map(|v| a * v).collect();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()));
            }
        }
    }
}
