//! Per-minute physical-activity indicators: counts, steps, level and type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, Sos};
use crate::ingest::{DeviceProfile, Frame};
use crate::ml::linear::{LinearOvr, LinearParams};
use crate::ml::{argmax, Scaler, TrainError};
use crate::model::{Classifier, ModelError, ModelFile, ModelKind};

#[derive(Debug, Error)]
pub enum ActivityError {
    #[error("frame at {start_ms} has {found} samples, expected {expected}")]
    WrongFrameLength { start_ms: i64, expected: usize, found: usize },
    #[error("frame at {start_ms} contains a non-finite value")]
    NonFinite { start_ms: i64 },
    #[error("frame at {start_ms} is too short for feature extraction")]
    TooShort { start_ms: i64 },
    #[error("negative activity counts {0}")]
    NegativeCounts(f64),
    #[error("cut points must be strictly increasing and non-negative: {0:?}")]
    InvalidCutPoints([f64; 3]),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("model class list {0:?} does not match the activity type set")]
    ClassMismatch(Vec<String>),
}

pub type Result<T> = std::result::Result<T, ActivityError>;

/// Converts the integrated band-passed acceleration of one minute (m/s²·s)
/// into ActiGraph-like counts: one count per 0.01664 g over 0.1 s.
pub const COUNT_UNIT_SCALE: f64 = 1.0 / (0.1 * 0.01664 * crate::ingest::STANDARD_GRAVITY);

pub const DEFAULT_CUT_POINTS: [f64; 3] = [100.0, 1800.0, 4000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityCounts {
    pub minute_start: i64,
    pub counts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLevel {
    Sedentary,
    Moderate,
    Vigorous,
    VeryVigorous,
}

impl ActivityLevel {
    pub const ALL: [ActivityLevel; 4] =
        [ActivityLevel::Sedentary, ActivityLevel::Moderate, ActivityLevel::Vigorous, ActivityLevel::VeryVigorous];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLevel::Sedentary => "sedentary",
            ActivityLevel::Moderate => "moderate",
            ActivityLevel::Vigorous => "vigorous",
            ActivityLevel::VeryVigorous => "very_vigorous",
        }
    }
}

impl fmt::Display for ActivityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityType {
    Lay,
    Stand,
    Walk,
    Run,
    Cycle,
    Stairs,
}

impl ActivityType {
    pub const ALL: [ActivityType; 6] = [
        ActivityType::Lay,
        ActivityType::Stand,
        ActivityType::Walk,
        ActivityType::Run,
        ActivityType::Cycle,
        ActivityType::Stairs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityType::Lay => "lay",
            ActivityType::Stand => "stand",
            ActivityType::Walk => "walk",
            ActivityType::Run => "run",
            ActivityType::Cycle => "cycle",
            ActivityType::Stairs => "stairs",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap_or(0)
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown activity type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAlgorithm {
    PhoneProfile,
    WatchProfile,
}

impl From<DeviceProfile> for StepAlgorithm {
    fn from(p: DeviceProfile) -> Self {
        match p {
            DeviceProfile::Smartphone => StepAlgorithm::PhoneProfile,
            DeviceProfile::Smartwatch => StepAlgorithm::WatchProfile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEstimate {
    pub window_start: i64,
    pub steps: u32,
    pub algorithm: StepAlgorithm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTypePrediction {
    pub window_start: i64,
    pub label: ActivityType,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub phone_threshold_k: f64,
    pub watch_threshold_k: f64,
    pub context_s: f64,
    pub min_distance_s: f64,
    /// Band-passed magnitude a peak must exceed, in m/s².
    pub min_peak: f64,
    pub max_interval_s: f64,
    pub max_dispersion: f64,
    pub min_bout_peaks: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            phone_threshold_k: 0.6,
            watch_threshold_k: 0.45,
            context_s: 5.0,
            min_distance_s: 0.3,
            min_peak: 0.5,
            max_interval_s: 2.0,
            max_dispersion: 0.3,
            min_bout_peaks: 4,
        }
    }
}

impl StepConfig {
    pub fn threshold_k(&self, algorithm: StepAlgorithm) -> f64 {
        match algorithm {
            StepAlgorithm::PhoneProfile => self.phone_threshold_k,
            StepAlgorithm::WatchProfile => self.watch_threshold_k,
        }
    }
}

fn check_finite(frame: &Frame<'_>) -> Result<()> {
    if frame.samples.iter().all(|s| s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
        Ok(())
    } else {
        Err(ActivityError::NonFinite { start_ms: frame.start_ms })
    }
}

fn axes(frame: &Frame<'_>) -> [Vec<f64>; 3] {
    [
        frame.samples.iter().map(|s| s.x).collect(),
        frame.samples.iter().map(|s| s.y).collect(),
        frame.samples.iter().map(|s| s.z).collect(),
    ]
}

/// Counts for one frame: each axis is band-passed, the vector norm of the
/// filtered axes is integrated over the frame.
pub fn frame_counts(frame: &Frame<'_>, filter: &Sos) -> Result<f64> {
    let expected = frame.expected_len();
    if frame.samples.len() != expected || expected == 0 {
        return Err(ActivityError::WrongFrameLength {
            start_ms: frame.start_ms,
            expected,
            found: frame.samples.len(),
        });
    }
    check_finite(frame)?;
    let pad = dsp::activity_padlen(frame.rate_hz);
    let [x, y, z] = axes(frame).map(|a| filter.filtfilt(&a, pad));
    let sum: f64 = (0..x.len()).map(|i| (x[i] * x[i] + y[i] * y[i] + z[i] * z[i]).sqrt()).sum();
    Ok(sum / frame.rate_hz)
}

pub fn activity_counts(frames: &[Frame<'_>]) -> Result<Vec<ActivityCounts>> {
    let Some(first) = frames.first() else { return Ok(Vec::new()) };
    let mut filter = dsp::activity_bandpass(first.rate_hz);
    let mut filter_rate = first.rate_hz;
    frames
        .iter()
        .map(|f| {
            if f.rate_hz != filter_rate {
                filter = dsp::activity_bandpass(f.rate_hz);
                filter_rate = f.rate_hz;
            }
            Ok(ActivityCounts { minute_start: f.start_ms, counts: frame_counts(f, &filter)? })
        })
        .collect()
}

pub fn validate_cut_points(cut: [f64; 3]) -> Result<()> {
    if cut[0] >= 0.0 && cut[0] < cut[1] && cut[1] < cut[2] && cut[2].is_finite() {
        Ok(())
    } else {
        Err(ActivityError::InvalidCutPoints(cut))
    }
}

/// Thresholds counts against `cut`; a value equal to a cut point belongs to the higher level.
pub fn classify_level(counts: f64, cut: [f64; 3]) -> Result<ActivityLevel> {
    if !(counts >= 0.0) {
        return Err(ActivityError::NegativeCounts(counts));
    }
    Ok(if counts >= cut[2] {
        ActivityLevel::VeryVigorous
    } else if counts >= cut[1] {
        ActivityLevel::Vigorous
    } else if counts >= cut[0] {
        ActivityLevel::Moderate
    } else {
        ActivityLevel::Sedentary
    })
}

/// Sample indices of accepted steps in a band-passed magnitude signal.
pub fn detect_steps(signal: &[f64], fs: f64, algorithm: StepAlgorithm, cfg: &StepConfig) -> Vec<usize> {
    let n = signal.len();
    if n < 3 {
        return Vec::new();
    }
    let context = ((cfg.context_s * fs).round() as usize) | 1;
    let (mu, sigma) = dsp::sliding_mean_std(signal, context);
    let k = cfg.threshold_k(algorithm);
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            signal[i] > signal[i - 1]
                && signal[i] >= signal[i + 1]
                && signal[i] > mu[i] + k * sigma[i]
                && signal[i] > cfg.min_peak
        })
        .collect();

    // keep the tallest peaks first, dropping neighbours closer than the minimum distance
    let min_dist = (cfg.min_distance_s * fs).round() as usize;
    candidates.sort_by(|&a, &b| signal[b].total_cmp(&signal[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_dist) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();

    let max_gap = cfg.max_interval_s * fs;
    let mut steps = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    let mut flush = |run: &mut Vec<usize>| {
        if run.len() >= cfg.min_bout_peaks {
            steps.extend_from_slice(run);
        }
        run.clear();
    };
    for p in accepted {
        if let Some(&last) = run.last() {
            let d = (p - last) as f64;
            let breaks = if d > max_gap {
                true
            } else if run.len() >= 2 {
                let intervals: Vec<f64> = run.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
                let med = dsp::median(&intervals);
                (d - med).abs() / med >= cfg.max_dispersion
            } else {
                false
            };
            if breaks {
                flush(&mut run);
            }
        }
        run.push(p);
    }
    flush(&mut run);
    steps
}

/// Steps per frame. Back-to-back frames are joined before detection so bouts
/// crossing a frame boundary are not cut.
pub fn count_steps(frames: &[Frame<'_>], profile: DeviceProfile, cfg: &StepConfig) -> Result<Vec<StepEstimate>> {
    let algorithm = StepAlgorithm::from(profile);
    let mut out = Vec::with_capacity(frames.len());
    let mut i = 0;
    while i < frames.len() {
        let mut j = i + 1;
        while j < frames.len() && frames[j].start_ms == frames[j - 1].end_ms() && frames[j].rate_hz == frames[i].rate_hz {
            j += 1;
        }
        let group = &frames[i..j];
        for f in group {
            check_finite(f)?;
        }
        let fs = group[0].rate_hz;
        let times: Vec<i64> = group.iter().flat_map(|f| f.samples.iter().map(|s| s.t)).collect();
        let mag: Vec<f64> = group.iter().flat_map(|f| f.samples.iter().map(|s| s.magnitude())).collect();
        let filtered = dsp::activity_bandpass(fs).filtfilt(&mag, dsp::activity_padlen(fs));
        let peaks = detect_steps(&filtered, fs, algorithm, cfg);
        for f in group {
            let steps = peaks.iter().filter(|&&p| times[p] >= f.start_ms && times[p] < f.end_ms()).count();
            out.push(StepEstimate { window_start: f.start_ms, steps: steps as u32, algorithm });
        }
        i = j;
    }
    Ok(out)
}

pub const TYPE_FEATURE_NAMES: [&str; 22] = [
    "x_mean",
    "x_std",
    "x_median",
    "x_peaks",
    "x_energy",
    "y_mean",
    "y_std",
    "y_median",
    "y_peaks",
    "y_energy",
    "z_mean",
    "z_std",
    "z_median",
    "z_peaks",
    "z_energy",
    "mag_mean",
    "mag_std",
    "corr_xy",
    "corr_xz",
    "corr_yz",
    "mag_spectral_entropy",
    "mag_dominant_freq",
];

pub const TYPE_FEATURE_DIM: usize = TYPE_FEATURE_NAMES.len();

/// Local maxima above one standard deviation over the mean.
fn peak_count(x: &[f64]) -> f64 {
    let sd = dsp::std_dev(x);
    if sd <= 1e-12 || x.len() < 3 {
        return 0.0;
    }
    let thr = dsp::mean(x) + sd;
    (1..x.len() - 1).filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > thr).count() as f64
}

/// Normalized Shannon entropy and peak frequency of the non-DC spectrum.
pub fn spectral_shape(x: &[f64], fs: f64) -> (f64, f64) {
    let spec = dsp::periodogram(x, fs);
    let bins = spec.get(1..).unwrap_or(&[]);
    let total: f64 = bins.iter().map(|b| b.1).sum();
    if bins.len() < 2 || total <= 1e-18 {
        return (0.0, 0.0);
    }
    let h: f64 = bins
        .iter()
        .map(|b| b.1 / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let mut best = 0;
    for (i, b) in bins.iter().enumerate() {
        if b.1 > bins[best].1 {
            best = i;
        }
    }
    (h / (bins.len() as f64).ln(), bins[best].0)
}

pub fn extract_type_features(frame: &Frame<'_>) -> Result<Vec<f64>> {
    check_finite(frame)?;
    if frame.samples.len() < 3 {
        return Err(ActivityError::TooShort { start_ms: frame.start_ms });
    }
    let ax = axes(frame);
    let mag: Vec<f64> = frame.samples.iter().map(|s| s.magnitude()).collect();
    let mut f = Vec::with_capacity(TYPE_FEATURE_DIM);
    for a in &ax {
        f.push(dsp::mean(a));
        f.push(dsp::std_dev(a));
        f.push(dsp::median(a));
        f.push(peak_count(a));
        f.push(a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64);
    }
    f.push(dsp::mean(&mag));
    f.push(dsp::std_dev(&mag));
    f.push(dsp::correlation(&ax[0], &ax[1]));
    f.push(dsp::correlation(&ax[0], &ax[2]));
    f.push(dsp::correlation(&ax[1], &ax[2]));
    let (entropy, dominant) = spectral_shape(&mag, frame.rate_hz);
    f.push(entropy);
    f.push(dominant);
    Ok(f)
}

/// Fits the scaler and linear one-vs-rest machine on labelled feature rows.
pub fn train_type_model(rows: &[Vec<f64>], labels: &[ActivityType], params: &LinearParams) -> Result<ModelFile> {
    let scaler = Scaler::fit(rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let ys: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let clf = LinearOvr::train(&xs, &ys, ActivityType::ALL.len(), params)?;
    Ok(ModelFile::new(
        ModelKind::ActivityType,
        ActivityType::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        &TYPE_FEATURE_NAMES,
        scaler,
        Classifier::Linear(clf),
    ))
}

/// Verifies that a loaded model can score activity-type features.
pub fn check_type_model(model: &ModelFile) -> Result<()> {
    model.check(ModelKind::ActivityType, &TYPE_FEATURE_NAMES)?;
    let expected: Vec<&str> = ActivityType::ALL.iter().map(|t| t.as_str()).collect();
    if model.classes.iter().map(String::as_str).ne(expected) {
        return Err(ActivityError::ClassMismatch(model.classes.clone()));
    }
    Ok(())
}

pub fn classify_type(window_start: i64, features: &[f64], model: &ModelFile) -> Result<ActivityTypePrediction> {
    let scores = model.scores(features)?;
    let label = ActivityType::ALL[argmax(&scores)];
    Ok(ActivityTypePrediction { window_start, label, scores })
}
