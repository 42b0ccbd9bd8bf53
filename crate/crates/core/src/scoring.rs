//! Model scoring. Every scorer produces values in `[0, 1]`, higher is better,
//! so aggregation policies never need to know which algorithm produced them.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{evaluate, Dataset, LearnerError};
use crate::scalar::Scalar;
use crate::weights::{WeightVector, WeightsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("multikrum needs n >= f + 3 models, got n={n}, f={f}")]
    TooFewModels { n: usize, f: usize },
    #[error("cannot reduce an empty score list")]
    EmptyScores,
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoringAlgorithm {
    #[default]
    Accuracy,
    Multikrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreReduce {
    #[default]
    Median,
    Min,
    Max,
    Mean,
}

impl fmt::Display for ScoreReduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreReduce::Median => "median",
            ScoreReduce::Min => "min",
            ScoreReduce::Max => "max",
            ScoreReduce::Mean => "mean",
        })
    }
}

pub fn accuracy_score<T: Scalar>(w: &WeightVector<T>, test: &Dataset<T>) -> Result<f64, ScoringError> {
    Ok(evaluate(w, test)?.accuracy)
}

/// Conventional Byzantine bound floor((n − 1) / 3).
pub fn default_byzantine_count(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Raw Krum distances: for each model, the sum of squared L2 distances to its
/// `n − f − 2` nearest other models, accumulated nearest first.
pub fn krum_distances<T: Scalar>(models: &[WeightVector<T>], f: usize) -> Result<Vec<T>, ScoringError> {
    let n = models.len();
    if n < f + 3 {
        return Err(ScoringError::TooFewModels { n, f });
    }
    let neighbours = n - f - 2;
    let mut pair = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = models[i].squared_distance(&models[j])?;
            pair[i * n + j] = d;
            pair[j * n + i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<T> = (0..n).filter(|&j| j != i).map(|j| pair[i * n + j]).collect();
            row.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            row[..neighbours].iter().fold(T::zero(), |acc, &d| acc + d)
        })
        .collect())
}

/// s_i = 1 − d_i / max_j d_j, or all ones when every distance is zero.
pub fn multikrum_scores<T: Scalar>(models: &[WeightVector<T>], f: usize) -> Result<Vec<f64>, ScoringError> {
    let raw = krum_distances(models, f)?;
    Ok(normalize_distances(&raw))
}

pub fn normalize_distances<T: Scalar>(raw: &[T]) -> Vec<f64> {
    let max = raw.iter().map(|d| d.to_wire()).fold(0.0f64, f64::max);
    if max == 0.0 {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|d| (1.0 - d.to_wire() / max).clamp(0.0, 1.0)).collect()
}

pub fn reduce_scores(values: &[f64], r: ScoreReduce) -> Result<f64, ScoringError> {
    if values.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    Ok(match r {
        ScoreReduce::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        ScoreReduce::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScoreReduce::Mean => values.iter().sum::<f64>() / values.len() as f64,
        ScoreReduce::Median => median(values),
    })
}

/// Mean of the two middle values for even lengths. `values` must be non-empty.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}
