//! Evaluation protocols: place matching, step error, confusion matrices and
//! sleep-session agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LatLon;
use crate::location::PointOfInterest;
use crate::sleep::SleepSession;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label sequences differ in length: {truth} vs {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0:?} is not in the class set")]
    UnknownLabel(String),
    #[error("recording {recording}: truth sessions overlap at {t}")]
    OverlappingTruth { recording: String, t: i64 },
    #[error("recording {recording}: malformed annotation: {message}")]
    Annotation { recording: String, message: String },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> Option<MeanStd> {
    if x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

// ---------------------------------------------------------------------------
// Place matching

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchThresholds {
    pub max_dist_m: f64,
    /// Minimum time overlap as a fraction of the truth stay's duration.
    pub min_overlap: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self { max_dist_m: 100.0, min_overlap: 0.5 }
    }
}

/// A stay reduced to what matching needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaySpan {
    pub center: LatLon,
    pub arrive_t: i64,
    pub depart_t: i64,
}

impl StaySpan {
    pub fn from_poi(p: &PointOfInterest) -> Option<Self> {
        Some(Self { center: p.center?, arrive_t: p.arrive_t, depart_t: p.depart_t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoiMatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl PoiMatchResult {
    /// Ratios are `None` when their denominator is zero.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Self { tp, fp, fn_, precision, recall, f1 }
    }

    /// Pools counts across subjects before recomputing the ratios.
    pub fn sum<'a>(results: impl IntoIterator<Item = &'a PoiMatchResult>) -> Self {
        let (tp, fp, fn_) = results.into_iter().fold((0, 0, 0), |a, r| (a.0 + r.tp, a.1 + r.fp, a.2 + r.fn_));
        Self::from_counts(tp, fp, fn_)
    }
}

/// Whether a detection may stand for a truth stay under both thresholds.
pub fn compatible(truth: &StaySpan, detected: &StaySpan, thr: &MatchThresholds) -> bool {
    if truth.center.distance_m(&detected.center) > thr.max_dist_m {
        return false;
    }
    let dur = (truth.depart_t - truth.arrive_t).max(0) as f64;
    let overlap = (truth.depart_t.min(detected.depart_t) - truth.arrive_t.max(detected.arrive_t)).max(0) as f64;
    if dur == 0.0 {
        return detected.arrive_t <= truth.arrive_t && detected.depart_t >= truth.depart_t;
    }
    overlap / dur >= thr.min_overlap
}

/// Maximum-cardinality one-to-one matching; returns `(truth, detected)` pairs.
/// Candidates are tried nearest first, and augmenting paths make the result optimal.
pub fn match_pois(truth: &[StaySpan], detected: &[StaySpan], thr: &MatchThresholds) -> (PoiMatchResult, Vec<(usize, usize)>) {
    let adj: Vec<Vec<usize>> = truth
        .iter()
        .map(|t| {
            let mut c: Vec<usize> = (0..detected.len()).filter(|&j| compatible(t, &detected[j], thr)).collect();
            c.sort_by(|&a, &b| {
                t.center.distance_m(&detected[a].center).total_cmp(&t.center.distance_m(&detected[b].center)).then(a.cmp(&b))
            });
            c
        })
        .collect();
    let owner = max_bipartite_matching(&adj, detected.len());
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(j, o)| o.map(|i| (i, j))).collect();
    pairs.sort_unstable();
    let tp = pairs.len();
    (PoiMatchResult::from_counts(tp, detected.len() - tp, truth.len() - tp), pairs)
}

/// Augmenting-path matching on an adjacency list; returns the owner of each right vertex.
fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        augment(u, adj, &mut seen, &mut owner);
    }
    owner
}

/// Exhaustive maximum matching size, exponential in the left side; a reference for small instances.
pub fn brute_force_matching_size(compat: &[Vec<bool>]) -> usize {
    fn go(i: usize, compat: &[Vec<bool>], used: &mut Vec<bool>) -> usize {
        if i == compat.len() {
            return 0;
        }
        let mut best = go(i + 1, compat, used);
        for j in 0..used.len() {
            if compat[i][j] && !used[j] {
                used[j] = true;
                best = best.max(1 + go(i + 1, compat, used));
                used[j] = false;
            }
        }
        best
    }
    let n_right = compat.first().map_or(0, Vec::len);
    go(0, compat, &mut vec![false; n_right])
}

// ---------------------------------------------------------------------------
// Step error

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub group: String,
    pub truth: u32,
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGroupStats {
    pub group: String,
    pub n: usize,
    pub predicted: MeanStd,
    pub abs_error: MeanStd,
    /// Percent; `None` if every recording in the group had zero true steps.
    pub rel_error: Option<MeanStd>,
    /// Recordings left out of the relative error because their truth was zero.
    pub rel_excluded: usize,
}

/// Per-group statistics in order of first appearance.
pub fn step_error(records: &[StepRecord]) -> Vec<StepGroupStats> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.group.as_str()) {
            order.push(&r.group);
        }
    }
    order
        .into_iter()
        .map(|g| {
            let rs: Vec<&StepRecord> = records.iter().filter(|r| r.group == g).collect();
            let pred: Vec<f64> = rs.iter().map(|r| f64::from(r.predicted)).collect();
            let abs: Vec<f64> = rs.iter().map(|r| (f64::from(r.predicted) - f64::from(r.truth)).abs()).collect();
            let rel: Vec<f64> = rs
                .iter()
                .zip(&abs)
                .filter(|(r, _)| r.truth > 0)
                .map(|(r, a)| a / f64::from(r.truth) * 100.0)
                .collect();
            StepGroupStats {
                group: g.to_string(),
                n: rs.len(),
                predicted: mean_std(&pred).expect("group is non-empty"),
                abs_error: mean_std(&abs).expect("group is non-empty"),
                rel_excluded: rs.len() - rel.len(),
                rel_error: mean_std(&rel),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Confusion matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Self {
        Self { labels, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Rows in percent; empty rows stay at zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s > 0 { c as f64 * 100.0 / s as f64 } else { 0.0 }).collect()
            })
            .collect()
    }

    pub fn recall(&self, i: usize) -> Option<f64> {
        let s: u64 = self.counts[i].iter().sum();
        (s > 0).then(|| self.counts[i][i] as f64 / s as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| (0..self.labels.len()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / t as f64)
    }
}

pub fn confusion<L: PartialEq + ToString>(truth: &[L], predicted: &[L], classes: &[L]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let idx = |l: &L| classes.iter().position(|c| c == l).ok_or_else(|| EvalError::UnknownLabel(l.to_string()));
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        counts[idx(t)?][idx(p)?] += 1;
    }
    Ok(ConfusionMatrix { labels: classes.iter().map(ToString::to_string).collect(), counts })
}

// ---------------------------------------------------------------------------
// Sleep sessions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SleepEventKind {
    #[serde(rename = "Recording Start")]
    RecordingStart,
    #[serde(rename = "In Bed")]
    InBed,
    #[serde(rename = "Sleep Start")]
    SleepStart,
    #[serde(rename = "Sleep End")]
    SleepEnd,
    #[serde(rename = "Off Bed")]
    OffBed,
    #[serde(rename = "No wear")]
    NoWear,
    #[serde(rename = "Wear")]
    Wear,
    #[serde(rename = "Recording End")]
    RecordingEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepEvent {
    pub t: i64,
    pub event: SleepEventKind,
}

/// One annotated recording: a line of the sleep ground-truth JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepAnnotation {
    pub recording: String,
    pub events: Vec<SleepEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSession {
    pub ss: i64,
    pub se: i64,
    /// Awake spells inside the session; `None` when the annotation cannot tell.
    pub interrupts: Option<Vec<(i64, i64)>>,
}

impl TruthSession {
    fn tti_min(&self) -> Option<f64> {
        self.interrupts.as_ref().map(|v| v.iter().map(|(a, b)| (b - a) as f64 / 60_000.0).sum())
    }
}

impl SleepAnnotation {
    /// Sessions from the event list. Inside an In Bed / Off Bed pair, the
    /// first Sleep Start and last Sleep End bound the session and the gaps
    /// between are interrupts; bare Sleep Start / Sleep End pairs are
    /// sessions without interrupt information.
    pub fn sessions(&self) -> Result<Vec<TruthSession>> {
        let bad = |message: String| EvalError::Annotation { recording: self.recording.clone(), message };
        let mut events = self.events.clone();
        events.sort_by_key(|e| e.t);
        let mut out = Vec::new();
        let mut in_bed = false;
        let mut spells: Vec<(i64, i64)> = Vec::new();
        let mut open: Option<i64> = None;
        let flush = |spells: &mut Vec<(i64, i64)>, out: &mut Vec<TruthSession>| {
            if let (Some(first), Some(last)) = (spells.first().copied(), spells.last().copied()) {
                let interrupts = spells.windows(2).map(|w| (w[0].1, w[1].0)).collect();
                out.push(TruthSession { ss: first.0, se: last.1, interrupts: Some(interrupts) });
            }
            spells.clear();
        };
        for e in &events {
            match e.event {
                SleepEventKind::InBed => {
                    if in_bed {
                        return Err(bad(format!("In Bed at {} while already in bed", e.t)));
                    }
                    in_bed = true;
                }
                SleepEventKind::OffBed => {
                    if open.is_some() {
                        return Err(bad(format!("Off Bed at {} inside a sleep spell", e.t)));
                    }
                    in_bed = false;
                    flush(&mut spells, &mut out);
                }
                SleepEventKind::SleepStart => {
                    if open.is_some() {
                        return Err(bad(format!("Sleep Start at {} inside a sleep spell", e.t)));
                    }
                    open = Some(e.t);
                }
                SleepEventKind::SleepEnd => {
                    let Some(s) = open.take() else {
                        return Err(bad(format!("Sleep End at {} without Sleep Start", e.t)));
                    };
                    if in_bed {
                        spells.push((s, e.t));
                    } else {
                        out.push(TruthSession { ss: s, se: e.t, interrupts: None });
                    }
                }
                _ => {}
            }
        }
        if open.is_some() {
            return Err(bad("unterminated sleep spell".into()));
        }
        flush(&mut spells, &mut out);
        out.sort_by_key(|s| s.ss);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPair {
    pub recording: String,
    pub truth: Vec<TruthSession>,
    pub predicted: Vec<SleepSession>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepEvalResult {
    pub recordings: usize,
    pub count_matched: usize,
    pub css: f64,
    /// Absolute errors in minutes (NI in interruptions) over count-matched recordings.
    pub ae: BTreeMap<String, AeStats>,
}

/// Fraction of recordings whose predicted session count equals the truth.
pub fn css(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64
}

fn ae_stats(x: &[f64]) -> Option<AeStats> {
    let ms = mean_std(x)?;
    Some(AeStats { mean: ms.mean, std: ms.std, max: x.iter().copied().fold(0.0, f64::max), n: x.len() })
}

pub fn sleep_eval(recordings: &[RecordingPair]) -> Result<SleepEvalResult> {
    let mut counts = Vec::with_capacity(recordings.len());
    let mut errs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut matched = 0;
    for r in recordings {
        let mut truth = r.truth.clone();
        truth.sort_by_key(|s| s.ss);
        if let Some(w) = truth.windows(2).find(|w| w[1].ss < w[0].se) {
            return Err(EvalError::OverlappingTruth { recording: r.recording.clone(), t: w[1].ss });
        }
        let mut pred = r.predicted.clone();
        pred.sort_by_key(|s| s.ss);
        counts.push((truth.len(), pred.len()));
        if truth.len() != pred.len() {
            continue;
        }
        matched += 1;
        for (t, p) in truth.iter().zip(&pred) {
            let min = |a: i64, b: i64| (a - b).abs() as f64 / 60_000.0;
            let t_gst = (t.se - t.ss) as f64 / 60_000.0;
            errs.entry("GST").or_default().push((p.gst_min - t_gst).abs());
            errs.entry("SS").or_default().push(min(p.ss, t.ss));
            errs.entry("SE").or_default().push(min(p.se, t.se));
            if let (Some(tti), Some(iv)) = (t.tti_min(), t.interrupts.as_ref()) {
                errs.entry("TTI").or_default().push((p.tti_min - tti).abs());
                errs.entry("NI").or_default().push((f64::from(p.ni) - iv.len() as f64).abs());
                errs.entry("NST").or_default().push((p.nst_min - (t_gst - tti)).abs());
            }
        }
    }
    let ae = errs.into_iter().filter_map(|(k, v)| Some((k.to_string(), ae_stats(&v)?))).collect();
    Ok(SleepEvalResult { recordings: recordings.len(), count_matched: matched, css: css(&counts), ae })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub thresholds: Option<MatchThresholds>,
    pub steps: Vec<StepGroupStats>,
    pub activity_types: Option<ConfusionMatrix>,
    pub pois: BTreeMap<String, PoiMatchResult>,
    pub pois_total: Option<PoiMatchResult>,
    pub transport: Option<ConfusionMatrix>,
    /// Keyed by scorer name.
    pub sleep: BTreeMap<String, SleepEvalResult>,
}

fn opt2(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn confusion_md(out: &mut String, title: &str, m: &ConfusionMatrix, percent: bool) {
    let _ = writeln!(out, "## {title}\n");
    let _ = writeln!(out, "| | {} |", m.labels.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(m.labels.len()));
    let norm = m.row_normalized();
    for (i, l) in m.labels.iter().enumerate() {
        let cells: Vec<String> = if percent {
            norm[i].iter().map(|v| format!("{v:.1}")).collect()
        } else {
            m.counts[i].iter().map(u64::to_string).collect()
        };
        let _ = writeln!(out, "| {l} | {} |", cells.join(" | "));
    }
    out.push('\n');
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n\n");
        let _ = writeln!(out, "config hash: `{}`\n", self.config_hash);
        if !self.steps.is_empty() {
            out.push_str("## Step counting\n\n| group | # | predicted | absolute error | relative error (%) |\n|---|---|---|---|---|\n");
            for g in &self.steps {
                let rel = g.rel_error.map_or("n/a".into(), |r| format!("{:.0} ± {:.1}", r.mean, r.std));
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.0} ± {:.1} | {:.0} ± {:.1} | {} |",
                    g.group, g.n, g.predicted.mean, g.predicted.std, g.abs_error.mean, g.abs_error.std, rel
                );
            }
            out.push('\n');
        }
        if let Some(m) = &self.activity_types {
            confusion_md(&mut out, "Activity types (row %, per window)", m, true);
        }
        if !self.pois.is_empty() {
            if let Some(t) = &self.thresholds {
                let _ = writeln!(out, "## Visited places\n\nmax distance {} m, min overlap {}\n", t.max_dist_m, t.min_overlap);
            } else {
                out.push_str("## Visited places\n\n");
            }
            out.push_str("| subject | TP | FP | FN | precision | recall | F1 |\n|---|---|---|---|---|---|---|\n");
            let rows = self.pois.iter().map(|(k, v)| (k.as_str(), v)).chain(self.pois_total.as_ref().map(|t| ("sum", t)));
            for (s, r) in rows {
                let _ = writeln!(
                    out,
                    "| {s} | {} | {} | {} | {} | {} | {} |",
                    r.tp,
                    r.fp,
                    r.fn_,
                    opt2(r.precision),
                    opt2(r.recall),
                    opt2(r.f1)
                );
            }
            out.push('\n');
        }
        if let Some(m) = &self.transport {
            confusion_md(&mut out, "Transportation modes (counts, per window)", m, false);
        }
        for (scorer, s) in &self.sleep {
            let _ = writeln!(out, "## Sleep ({scorer})\n\n| indicator | μ | σ | max |\n|---|---|---|---|");
            for k in ["GST", "SS", "SE", "TTI", "NI", "NST"] {
                match s.ae.get(k) {
                    Some(a) => {
                        let _ = writeln!(out, "| {k} | {:.1} | {:.1} | {:.1} |", a.mean, a.std, a.max);
                    }
                    None => {
                        let _ = writeln!(out, "| {k} | - | - | - |");
                    }
                }
            }
            let _ = writeln!(out, "| CSS | {:.2}% | | |\n", s.css * 100.0);
        }
        out
    }
}
