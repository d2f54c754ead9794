//! Linear max-margin classifier, one-vs-rest, trained by dual coordinate
//! descent on the L2-regularized hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, softmax, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearParams {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self { c: 1.0, max_epochs: 1000, tolerance: 1e-4, seed: 0 }
    }
}

/// One weight vector (with trailing bias) per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOvr {
    pub n_classes: usize,
    pub weights: Vec<Vec<f64>>,
}

impl LinearOvr {
    /// `labels[i]` indexes into `0..n_classes`.
    pub fn train(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, params: &LinearParams) -> Result<Self, TrainError> {
        let d = check_dims(rows)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(TrainError::UnknownLabel(bad));
        }
        let present = (0..n_classes).filter(|c| labels.contains(c)).count();
        if present < 2 {
            return Err(TrainError::TooFewClasses(present));
        }
        let weights = (0..n_classes)
            .map(|c| {
                let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
                train_binary(rows, &y, d, params)
            })
            .collect();
        Ok(Self { n_classes, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len() - 1)
    }

    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let d = w.len() - 1;
                w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
            })
            .collect()
    }

    /// Softmax over the one-vs-rest margins.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.decision(x))
    }
}

// Hsieh et al. style coordinate descent; the bias is an extra constant feature.
fn train_binary(rows: &[Vec<f64>], y: &[f64], d: usize, params: &LinearParams) -> Vec<f64> {
    let n = rows.len();
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut max_pg = f64::NEG_INFINITY;
        let mut min_pg = f64::INFINITY;
        for &i in &order {
            let xi = &rows[i];
            let g = y[i] * (w[..d].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + w[d]) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= params.c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, params.c);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w[..d].iter_mut().zip(xi) {
                    *wj += delta * xj;
                }
                w[d] += delta;
            }
        }
        if max_pg - min_pg < params.tolerance {
            break;
        }
    }
    w
}
