//! Minute-level sleep/wake scoring from activity counts and sleep-session
//! segmentation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::ActivityCounts;
use crate::dsp;

const MINUTE_MS: i64 = 60_000;

#[derive(Debug, Error, PartialEq)]
pub enum SleepError {
    #[error("negative activity counts {counts} at {minute_start}")]
    NegativeCounts { minute_start: i64, counts: f64 },
    #[error("epochs are not in increasing minute order at {0}")]
    Unordered(i64),
    #[error("session end {se} is not after start {ss}")]
    InvalidSession { ss: i64, se: i64 },
}

pub type Result<T> = std::result::Result<T, SleepError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Cole,
    Sadeh,
}

impl Scorer {
    pub const ALL: [Scorer; 2] = [Scorer::Cole, Scorer::Sadeh];

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Cole => "cole",
            Scorer::Sadeh => "sadeh",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepLabel {
    Sleep,
    Wake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub minute_start: i64,
    pub counts: f64,
    pub label: SleepLabel,
    pub scorer: Scorer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColeParams {
    /// Weights for minutes -4..=+2 around the scored epoch.
    pub weights: [f64; 7],
    pub scale: f64,
    pub threshold: f64,
}

impl Default for ColeParams {
    fn default() -> Self {
        Self { weights: [106.0, 54.0, 58.0, 76.0, 230.0, 74.0, 67.0], scale: 0.001, threshold: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadehParams {
    /// `(b0, b_mw5, b_nat, b_sd6, b_lg)`.
    pub coefficients: [f64; 5],
    pub nat_range: [f64; 2],
}

impl Default for SadehParams {
    fn default() -> Self {
        Self { coefficients: [7.601, 0.065, 1.08, 0.056, 0.703], nat_range: [50.0, 100.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SleepConfig {
    pub cole: ColeParams,
    pub sadeh: SadehParams,
    /// Multiplies counts before scoring.
    pub count_scale: f64,
    pub merge_gap_min: u32,
    pub min_session_min: u32,
    /// Exact-zero runs longer than this are treated as non-wear; 0 disables.
    pub non_wear_zero_min: u32,
}

impl Default for SleepConfig {
    fn default() -> Self {
        Self {
            cole: ColeParams::default(),
            sadeh: SadehParams::default(),
            count_scale: 1.0,
            merge_gap_min: 20,
            min_session_min: 60,
            non_wear_zero_min: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepSession {
    pub ss: i64,
    pub se: i64,
    pub gst_min: f64,
    pub tti_min: f64,
    pub ni: u32,
    pub nst_min: f64,
}

impl SleepSession {
    /// Builds a session from its bounds and total interrupt time.
    pub fn new(ss: i64, se: i64, tti_min: f64, ni: u32) -> Result<Self> {
        if se <= ss {
            return Err(SleepError::InvalidSession { ss, se });
        }
        let gst_min = (se - ss) as f64 / MINUTE_MS as f64;
        Ok(Self { ss, se, gst_min, tti_min, ni, nst_min: gst_min - tti_min })
    }
}

/// The six per-session values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepIndicators {
    pub gst_min: f64,
    pub ss: i64,
    pub se: i64,
    pub tti_min: f64,
    pub ni: u32,
    pub nst_min: f64,
}

pub fn sleep_indicators(s: &SleepSession) -> SleepIndicators {
    SleepIndicators { gst_min: s.gst_min, ss: s.ss, se: s.se, tti_min: s.tti_min, ni: s.ni, nst_min: s.nst_min }
}

/// Splits epochs into runs of consecutive minutes.
fn contiguous_runs<T>(items: &[T], minute: impl Fn(&T) -> i64) -> Vec<&[T]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || minute(&items[i]) != minute(&items[i - 1]) + MINUTE_MS {
            if i > start {
                out.push(&items[start..i]);
            }
            start = i;
        }
    }
    out
}

fn check(counts: &[ActivityCounts]) -> Result<()> {
    for (i, c) in counts.iter().enumerate() {
        if !(c.counts >= 0.0) {
            return Err(SleepError::NegativeCounts { minute_start: c.minute_start, counts: c.counts });
        }
        if i > 0 && c.minute_start <= counts[i - 1].minute_start {
            return Err(SleepError::Unordered(c.minute_start));
        }
    }
    Ok(())
}

/// Removes exact-zero runs longer than the non-wear threshold.
pub fn exclude_non_wear(counts: &[ActivityCounts], cfg: &SleepConfig) -> Vec<ActivityCounts> {
    if cfg.non_wear_zero_min == 0 {
        return counts.to_vec();
    }
    let mut keep = vec![true; counts.len()];
    let mut i = 0;
    while i < counts.len() {
        if counts[i].counts != 0.0 {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < counts.len() && counts[j].counts == 0.0 && counts[j].minute_start == counts[j - 1].minute_start + MINUTE_MS {
            j += 1;
        }
        if j - i > cfg.non_wear_zero_min as usize {
            keep[i..j].iter_mut().for_each(|k| *k = false);
        }
        i = j;
    }
    counts.iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| *c).collect()
}

fn padded(a: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else {
        a.get(i as usize).copied().unwrap_or(0.0)
    }
}

pub fn cole_score(a: &[f64], p: &ColeParams) -> Vec<f64> {
    (0..a.len() as isize)
        .map(|t| p.scale * (-4..=2).map(|k| p.weights[(k + 4) as usize] * padded(a, t + k)).sum::<f64>())
        .collect()
}

pub fn sadeh_score(a: &[f64], p: &SadehParams) -> Vec<f64> {
    let [b0, b1, b2, b3, b4] = p.coefficients;
    (0..a.len() as isize)
        .map(|t| {
            let window: Vec<f64> = (-5..=5).map(|k| padded(a, t + k)).collect();
            let mw5 = window.iter().sum::<f64>() / 11.0;
            let nat = window.iter().filter(|&&c| c >= p.nat_range[0] && c < p.nat_range[1]).count() as f64;
            let last6: Vec<f64> = (-5..=0).map(|k| padded(a, t + k)).collect();
            let sd6 = dsp::sample_std_dev(&last6);
            let lg = (padded(a, t) + 1.0).ln();
            b0 - b1 * mw5 - b2 * nat - b3 * sd6 - b4 * lg
        })
        .collect()
}

/// Scores each minute. Missing minutes split the sequence; each run is zero-padded at its ends.
pub fn score_epochs(counts: &[ActivityCounts], scorer: Scorer, cfg: &SleepConfig) -> Result<Vec<EpochScore>> {
    check(counts)?;
    let mut out = Vec::with_capacity(counts.len());
    for run in contiguous_runs(counts, |c| c.minute_start) {
        let a: Vec<f64> = run.iter().map(|c| c.counts * cfg.count_scale).collect();
        let sleep: Vec<bool> = match scorer {
            Scorer::Cole => cole_score(&a, &cfg.cole).into_iter().map(|d| d < cfg.cole.threshold).collect(),
            Scorer::Sadeh => sadeh_score(&a, &cfg.sadeh).into_iter().map(|ps| ps >= 0.0).collect(),
        };
        out.extend(run.iter().zip(sleep).map(|(c, s)| EpochScore {
            minute_start: c.minute_start,
            counts: c.counts,
            label: if s { SleepLabel::Sleep } else { SleepLabel::Wake },
            scorer,
        }));
    }
    Ok(out)
}

/// Groups sleep minutes into sessions. Sleep runs separated by fewer than
/// `merge_gap_min` wake minutes are merged; the wake minutes between them
/// become interrupts. Sessions never span missing minutes.
pub fn segment_sessions(scores: &[EpochScore], cfg: &SleepConfig) -> Vec<SleepSession> {
    let mut out = Vec::new();
    for run in contiguous_runs(scores, |e| e.minute_start) {
        // maximal sleep runs as [first, last] epoch indices
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        for (i, e) in run.iter().enumerate() {
            if e.label != SleepLabel::Sleep {
                continue;
            }
            match blocks.last_mut() {
                Some(b) if b.1 + 1 == i => b.1 = i,
                _ => blocks.push((i, i)),
            }
        }
        let mut k = 0;
        while k < blocks.len() {
            let (first, mut last) = blocks[k];
            let mut tti = 0usize;
            let mut ni = 0u32;
            while k + 1 < blocks.len() && blocks[k + 1].0 - last - 1 < cfg.merge_gap_min as usize {
                tti += blocks[k + 1].0 - last - 1;
                ni += 1;
                last = blocks[k + 1].1;
                k += 1;
            }
            k += 1;
            let ss = run[first].minute_start;
            let se = run[last].minute_start + MINUTE_MS;
            if (se - ss) < cfg.min_session_min as i64 * MINUTE_MS {
                continue;
            }
            if let Ok(s) = SleepSession::new(ss, se, tti as f64, ni) {
                out.push(s);
            }
        }
    }
    out
}
