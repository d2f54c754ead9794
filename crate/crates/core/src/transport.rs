//! Trip segmentation between visited places and per-second transportation
//! mode classification.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp;
use crate::ingest::{CoverageMap, Frame};
use crate::location::PointOfInterest;
use crate::ml::kernel::{RbfOvo, RbfParams};
use crate::ml::{Scaler, TrainError};
use crate::model::{Classifier, ModelError, ModelFile, ModelKind};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("frame at {start_ms} has {found} samples, expected {expected}")]
    ShortFrame { start_ms: i64, expected: usize, found: usize },
    #[error("frame at {start_ms} contains a non-finite value")]
    NonFinite { start_ms: i64 },
    #[error("trip {start_t}..{end_t} has {found} classified seconds, needs {needed}")]
    InsufficientFrames { start_t: i64, end_t: i64, found: usize, needed: usize },
    #[error("median filter width must be odd and positive, got {0}")]
    FilterWidth(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("model class list {0:?} does not match the transport mode set")]
    ClassMismatch(Vec<String>),
}

pub type Result<T> = std::result::Result<T, TransportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    WalkRun,
    Bike,
    Car,
    Bus,
    TrainSubway,
}

impl TransportMode {
    pub const ALL: [TransportMode; 5] =
        [TransportMode::WalkRun, TransportMode::Bike, TransportMode::Car, TransportMode::Bus, TransportMode::TrainSubway];

    pub fn as_str(self) -> &'static str {
        match self {
            TransportMode::WalkRun => "walk_run",
            TransportMode::Bike => "bike",
            TransportMode::Car => "car",
            TransportMode::Bus => "bus",
            TransportMode::TrainSubway => "train_subway",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Maps raw seven-mode annotations onto the five classes; `still` and
    /// unrecognised labels map to `None`.
    pub fn from_raw(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "walk" | "walking" | "run" | "running" | "walk_run" => Some(TransportMode::WalkRun),
            "bike" | "bicycle" | "cycling" => Some(TransportMode::Bike),
            "car" => Some(TransportMode::Car),
            "bus" => Some(TransportMode::Bus),
            "train" | "subway" | "metro" | "train_subway" => Some(TransportMode::TrainSubway),
            _ => None,
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown transport mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub min_trip_s: f64,
    pub min_coverage: f64,
    pub median_width: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { min_trip_s: 120.0, min_coverage: 0.5, median_width: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub start_t: i64,
    pub end_t: i64,
    pub origin_poi: Option<String>,
    pub dest_poi: Option<String>,
    /// Straight-line distance between the two place centers, when known.
    pub distance_m: Option<f64>,
    /// `(second_start_ms, mode)` in time order.
    pub mode_sequence: Vec<(i64, TransportMode)>,
    pub dominant_mode: Option<TransportMode>,
}

impl Trip {
    pub fn mode_seconds(&self) -> BTreeMap<TransportMode, u32> {
        let mut m = BTreeMap::new();
        for (_, mode) in &self.mode_sequence {
            *m.entry(*mode).or_insert(0) += 1;
        }
        m
    }
}

/// Output row for a classified trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start: i64,
    pub end: i64,
    pub dominant_mode: TransportMode,
    pub mode_seconds: BTreeMap<TransportMode, u32>,
}

impl TripRecord {
    pub fn from_trip(trip: &Trip) -> Option<Self> {
        Some(Self {
            start: trip.start_t,
            end: trip.end_t,
            dominant_mode: trip.dominant_mode?,
            mode_seconds: trip.mode_seconds(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum SkipReason {
    TooShort,
    LowCoverage { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrip {
    pub start_t: i64,
    pub end_t: i64,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub trips: Vec<Trip>,
    pub skipped: Vec<SkippedTrip>,
}

/// One candidate trip per gap between consecutive places, kept when long
/// enough and sufficiently covered by accelerometer recording.
pub fn segment_trips(pois: &[PointOfInterest], coverage: &CoverageMap, cfg: &TransportConfig) -> Segmentation {
    let mut ordered: Vec<&PointOfInterest> = pois.iter().collect();
    ordered.sort_by_key(|p| (p.arrive_t, p.depart_t));
    let min_ms = (cfg.min_trip_s * 1000.0).round() as i64;
    let mut out = Segmentation::default();
    for w in ordered.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (start_t, end_t) = (a.depart_t, b.arrive_t);
        if end_t - start_t < min_ms {
            if end_t > start_t {
                out.skipped.push(SkippedTrip { start_t, end_t, reason: SkipReason::TooShort });
            }
            continue;
        }
        let fraction = coverage.recording_within(start_t, end_t) as f64 / (end_t - start_t) as f64;
        if fraction < cfg.min_coverage {
            log::info!("skipping trip {start_t}..{end_t}: accelerometer coverage {fraction:.2}");
            out.skipped.push(SkippedTrip { start_t, end_t, reason: SkipReason::LowCoverage { fraction } });
            continue;
        }
        let distance_m = match (a.center, b.center) {
            (Some(x), Some(y)) => Some(x.distance_m(&y)),
            _ => None,
        };
        out.trips.push(Trip {
            start_t,
            end_t,
            origin_poi: Some(a.poi_id.clone()),
            dest_poi: Some(b.poi_id.clone()),
            distance_m,
            mode_sequence: Vec::new(),
            dominant_mode: None,
        });
    }
    out
}

pub const PSD_BANDS: usize = 5;
pub const PSD_BAND_HZ: f64 = 2.0;

pub const TRANSPORT_FEATURE_NAMES: [&str; 21] = [
    "x_mean", "x_std", "x_min", "x_max", "y_mean", "y_std", "y_min", "y_max", "z_mean", "z_std", "z_min", "z_max",
    "mag_mean", "mag_std", "mag_min", "mag_max", "psd_0_2hz", "psd_2_4hz", "psd_4_6hz", "psd_6_8hz", "psd_8_10hz",
];

pub const TRANSPORT_FEATURE_DIM: usize = TRANSPORT_FEATURE_NAMES.len();

/// Magnitude power in 2 Hz bands over 0-10 Hz; the top band includes 10 Hz.
pub fn psd_bands(mag: &[f64], fs: f64) -> [f64; PSD_BANDS] {
    let mut bands = [0.0; PSD_BANDS];
    for (f, p) in dsp::periodogram(mag, fs).into_iter().skip(1) {
        let idx = (f / PSD_BAND_HZ).floor() as usize;
        if idx < PSD_BANDS {
            bands[idx] += p;
        } else if f <= PSD_BAND_HZ * PSD_BANDS as f64 + 1e-9 {
            bands[PSD_BANDS - 1] += p;
        }
    }
    bands
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn extract_transport_features(frame: &Frame<'_>) -> Result<Vec<f64>> {
    let expected = frame.expected_len();
    if frame.samples.len() < expected || frame.samples.len() < 4 {
        return Err(TransportError::ShortFrame { start_ms: frame.start_ms, expected, found: frame.samples.len() });
    }
    if !frame.samples.iter().all(|s| s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
        return Err(TransportError::NonFinite { start_ms: frame.start_ms });
    }
    let mut f = Vec::with_capacity(TRANSPORT_FEATURE_DIM);
    let mut stats = |v: &[f64]| {
        let (lo, hi) = min_max(v);
        f.extend([dsp::mean(v), dsp::std_dev(v), lo, hi]);
    };
    let ax: [Vec<f64>; 3] = [
        frame.samples.iter().map(|s| s.x).collect(),
        frame.samples.iter().map(|s| s.y).collect(),
        frame.samples.iter().map(|s| s.z).collect(),
    ];
    let mag: Vec<f64> = frame.samples.iter().map(|s| s.magnitude()).collect();
    for a in &ax {
        stats(a);
    }
    stats(&mag);
    f.extend(psd_bands(&mag, frame.rate_hz));
    Ok(f)
}

/// Fits a scaler and the class-weighted RBF machine.
pub fn train_transport(rows: &[Vec<f64>], labels: &[TransportMode], params: &RbfParams) -> Result<ModelFile> {
    let scaler = Scaler::fit(rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let ys: Vec<usize> = labels.iter().map(|m| m.index()).collect();
    let clf = RbfOvo::train(&xs, &ys, TransportMode::ALL.len(), params)?;
    Ok(ModelFile::new(
        ModelKind::TransportMode,
        TransportMode::ALL.iter().map(|m| m.as_str().to_string()).collect(),
        &TRANSPORT_FEATURE_NAMES,
        scaler,
        Classifier::Rbf(clf),
    ))
}

pub fn check_transport_model(model: &ModelFile) -> Result<()> {
    model.check(ModelKind::TransportMode, &TRANSPORT_FEATURE_NAMES)?;
    let expected: Vec<&str> = TransportMode::ALL.iter().map(|m| m.as_str()).collect();
    if model.classes.iter().map(String::as_str).ne(expected) {
        return Err(TransportError::ClassMismatch(model.classes.clone()));
    }
    Ok(())
}

/// Median over class indices with a window shrinking symmetrically at the edges.
pub fn median_filter(labels: &[TransportMode], width: usize) -> Result<Vec<TransportMode>> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(TransportError::FilterWidth(width));
    }
    let half = width / 2;
    let n = labels.len();
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let mut w: Vec<TransportMode> = labels[i - h..=i + h].to_vec();
            w.sort_unstable();
            w[h]
        })
        .collect())
}

/// Most frequent mode; ties go to the earlier mode in class order.
pub fn dominant(labels: &[TransportMode]) -> Option<TransportMode> {
    let mut counts = [0usize; 5];
    for m in labels {
        counts[m.index()] += 1;
    }
    let best = (0..5).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    (counts[best] > 0).then_some(TransportMode::ALL[best])
}

/// Labels every 1 s frame inside the trip, smooths and sets the dominant mode.
pub fn classify_trip(trip: &Trip, frames: &[Frame<'_>], model: &ModelFile, cfg: &TransportConfig) -> Result<Trip> {
    let mut raw = Vec::new();
    let mut times = Vec::new();
    for f in frames.iter().filter(|f| f.start_ms >= trip.start_t && f.end_ms() <= trip.end_t) {
        let features = match extract_transport_features(f) {
            Ok(v) => v,
            Err(TransportError::ShortFrame { .. }) => continue,
            Err(e) => return Err(e),
        };
        raw.push(TransportMode::ALL[model.predict(&features)?]);
        times.push(f.start_ms);
    }
    let needed = cfg.min_trip_s.round() as usize;
    if raw.len() < needed {
        return Err(TransportError::InsufficientFrames { start_t: trip.start_t, end_t: trip.end_t, found: raw.len(), needed });
    }
    let filtered = median_filter(&raw, cfg.median_width)?;
    let mut out = trip.clone();
    out.dominant_mode = dominant(&filtered);
    out.mode_sequence = times.into_iter().zip(filtered).collect();
    Ok(out)
}
