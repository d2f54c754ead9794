//! RBF-kernel support vector classification, one-vs-one voting.
//!
//! The binary solver is sequential minimal optimization with second-order
//! working-set selection and per-sample box constraints, so class weights
//! enter as `C * w_class`.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, TrainError};

pub const DEFAULT_C: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfParams {
    pub c: f64,
    /// `None` selects `1 / D`.
    pub gamma: Option<f64>,
    /// `None` selects `min_k n_k / n_i` from the training counts.
    pub class_weights: Option<Vec<f64>>,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Seeded per-class subsampling cap, to bound training cost.
    pub max_per_class: Option<usize>,
    pub seed: u64,
}

impl Default for RbfParams {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            gamma: None,
            class_weights: None,
            tolerance: 1e-3,
            max_iter: 10_000_000,
            max_per_class: None,
            seed: 0,
        }
    }
}

/// `w_i = min_k n_k / n_i` over the classes present; absent classes get 0.
pub fn balanced_class_weights(counts: &[usize]) -> Vec<f64> {
    let min = counts.iter().copied().filter(|&n| n > 0).min().unwrap_or(0);
    counts.iter().map(|&n| if n == 0 { 0.0 } else { min as f64 / n as f64 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub positive: usize,
    pub negative: usize,
    /// `(support vector index, alpha * y)`.
    pub coef: Vec<(usize, f64)>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfOvo {
    pub n_classes: usize,
    pub gamma: f64,
    pub c: f64,
    pub class_weights: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub support_vectors: Vec<Vec<f64>>,
    pub pairs: Vec<PairModel>,
}

#[inline]
fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl RbfOvo {
    pub fn train(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, params: &RbfParams) -> Result<Self, TrainError> {
        let d = check_dims(rows)?;
        if labels.len() != rows.len() {
            return Err(TrainError::DimensionMismatch { expected: rows.len(), found: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(TrainError::UnknownLabel(bad));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        if let Some(cap) = params.max_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            for idx in &mut by_class {
                if idx.len() > cap {
                    idx.shuffle(&mut rng);
                    idx.truncate(cap);
                    idx.sort_unstable();
                }
            }
        }
        let class_counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let present = class_counts.iter().filter(|&&n| n > 0).count();
        if present < 2 {
            return Err(TrainError::TooFewClasses(present));
        }
        let gamma = params.gamma.unwrap_or(1.0 / d as f64);
        let class_weights = params.class_weights.clone().unwrap_or_else(|| balanced_class_weights(&class_counts));

        let mut sv_map: HashMap<usize, usize> = HashMap::new();
        let mut support_vectors = Vec::new();
        let mut pairs = Vec::new();
        for p in 0..n_classes {
            for q in p + 1..n_classes {
                if by_class[p].is_empty() || by_class[q].is_empty() {
                    continue;
                }
                let idx: Vec<usize> = by_class[p].iter().chain(&by_class[q]).copied().collect();
                let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == p { 1.0 } else { -1.0 }).collect();
                let bound: Vec<f64> = idx.iter().map(|&i| params.c * class_weights[labels[i]]).collect();
                let x: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
                let (alpha, rho) = smo(&x, &y, &bound, gamma, params.tolerance, params.max_iter);
                let mut coef = Vec::new();
                for (k, a) in alpha.iter().enumerate() {
                    if *a > 0.0 {
                        let global = idx[k];
                        let sv = *sv_map.entry(global).or_insert_with(|| {
                            support_vectors.push(rows[global].clone());
                            support_vectors.len() - 1
                        });
                        coef.push((sv, a * y[k]));
                    }
                }
                pairs.push(PairModel { positive: p, negative: q, coef, rho });
            }
        }
        Ok(Self { n_classes, gamma, c: params.c, class_weights, class_counts, support_vectors, pairs })
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let k: Vec<f64> = self.support_vectors.iter().map(|sv| rbf(self.gamma, sv, x)).collect();
        self.pairs
            .iter()
            .map(|pm| pm.coef.iter().map(|(i, c)| c * k[*i]).sum::<f64>() - pm.rho)
            .collect()
    }

    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0usize; self.n_classes];
        for (pm, dv) in self.pairs.iter().zip(self.decision_values(x)) {
            votes[if dv > 0.0 { pm.positive } else { pm.negative }] += 1;
        }
        votes
    }

    /// Class with the most pairwise wins; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let votes = self.votes(x);
        let mut best = 0;
        for (i, v) in votes.iter().enumerate() {
            if *v > votes[best] {
                best = i;
            }
        }
        best
    }
}

struct RowCache<'a> {
    x: &'a [&'a [f64]],
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> RowCache<'a> {
    fn new(x: &'a [&'a [f64]], gamma: f64) -> Self {
        let n = x.len().max(1);
        // about 64 MiB of rows
        let capacity = (8 * 1024 * 1024 / n).clamp(2, n.max(2));
        Self { x, gamma, rows: HashMap::new(), order: VecDeque::new(), capacity }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.x[i];
            let r: Vec<f64> = self.x.iter().map(|xt| rbf(self.gamma, xi, xt)).collect();
            self.rows.insert(i, r);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

/// Solves the weighted-box dual for one binary problem. Returns `(alpha, rho)`.
fn smo(x: &[&[f64]], y: &[f64], bound: &[f64], gamma: f64, eps: f64, max_iter: usize) -> (Vec<f64>, f64) {
    const TAU: f64 = 1e-12;
    let n = x.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = RowCache::new(x, gamma);
    let is_upper = |a: f64, c: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = max_iter.max(100 * n);
    for _ in 0..max_iter {
        // first index: maximal violating in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !is_upper(alpha[t], bound[t]) } else { !is_lower(alpha[t]) };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        let ki: Vec<f64> = cache.row(i).to_vec();
        let mut gmin = f64::INFINITY;
        let mut obj_min = f64::INFINITY;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t], bound[t]) };
            if !in_low {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let a = (2.0 - 2.0 * ki[t]).max(TAU);
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = t;
                }
            }
        }
        if gmax - gmin < eps || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let kj: Vec<f64> = cache.row(j).to_vec();
        let (ci, cj) = (bound[i], bound[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t], bound[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    (alpha, rho)
}
