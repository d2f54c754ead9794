//! Small, dependency-free max-margin classifiers.
//!
//! Two families are provided: a linear one-vs-rest machine (activity type)
//! and an RBF-kernel one-vs-one machine with per-class weighted box
//! constraints (transport mode). Both operate on standardized features.

pub mod kernel;
pub mod linear;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training data contains {0} class(es); at least two are required")]
    TooFewClasses(usize),
    #[error("feature vectors have inconsistent dimensions ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no training samples")]
    Empty,
    #[error("label {0} is outside the class list")]
    UnknownLabel(usize),
}

/// Per-feature standardization learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_dims(rows: &[Vec<f64>]) -> Result<usize, TrainError> {
    let d = rows.first().ok_or(TrainError::Empty)?.len();
    for r in rows {
        if r.len() != d {
            return Err(TrainError::DimensionMismatch { expected: d, found: r.len() });
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_standardizes_and_handles_constant_columns() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Scaler::fit(&rows);
        assert_eq!(s.transform(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.scale[1], 1.0);
    }

    #[test]
    fn softmax_sums_to_one_and_keeps_order() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&p), 0);
    }
}
