//! In-browser demo of the step detector, sleep scorers and geohash cells.
//!
//! The plain functions are ordinary Rust and tested natively; the
//! `#[wasm_bindgen]` wrappers at the bottom hand results to JavaScript as
//! flat arrays or JSON strings.

use obeskit_core::activity::{activity_counts, count_steps, detect_steps, ActivityCounts, StepAlgorithm};
use obeskit_core::dsp;
use obeskit_core::geoagg::geohash::{self, Geohash};
use obeskit_core::ingest::{resample, window, AccelSample, AccelStream, DeviceProfile};
use obeskit_core::pipeline::ExtractConfig;
use obeskit_core::sim::{motion_samples, Motion};
use obeskit_core::sleep::{score_epochs, segment_sessions, Scorer, SleepLabel, SleepSession};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const DEMO_RATE_HZ: f64 = 20.0;

fn stream(samples: Vec<AccelSample>, profile: DeviceProfile) -> AccelStream {
    AccelStream {
        subject_id: "demo".into(),
        device_profile: Some(profile),
        tz: None,
        samples,
        nominal_rate_hz: DEMO_RATE_HZ,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaitTrace {
    /// Band-passed acceleration magnitude at 20 Hz.
    pub signal: Vec<f64>,
    /// Sample indices of detected steps.
    pub steps: Vec<usize>,
    /// The generator's own step count.
    pub truth: u32,
}

/// Synthesizes walking (or shaking, when `shake`) and runs the step detector on it.
pub fn gait_demo(cadence_hz: f64, amplitude: f64, seconds: f64, shake: bool, watch: bool, seed: u64) -> GaitTrace {
    let motion = if shake { Motion::Shake } else { Motion::Walk { cadence_hz, amplitude } };
    let samples = motion_samples(&motion, 0, seconds, DEMO_RATE_HZ, seed);
    let truth = if shake { 0 } else { (cadence_hz * seconds).round() as u32 };
    let mag: Vec<f64> = samples.iter().map(AccelSample::magnitude).collect();
    let signal = dsp::activity_bandpass(DEMO_RATE_HZ).filtfilt(&mag, dsp::activity_padlen(DEMO_RATE_HZ));
    let profile = if watch { DeviceProfile::Smartwatch } else { DeviceProfile::Smartphone };
    let steps = detect_steps(&signal, DEMO_RATE_HZ, StepAlgorithm::from(profile), &Default::default());
    GaitTrace { signal, steps, truth }
}

/// Per-second step counts from the full windowed pipeline, for comparison with `gait_demo`.
pub fn windowed_steps(samples: Vec<AccelSample>, watch: bool) -> Vec<u32> {
    let profile = if watch { DeviceProfile::Smartwatch } else { DeviceProfile::Smartphone };
    let s = stream(samples, profile);
    let Ok(s) = resample(&s, DEMO_RATE_HZ) else { return Vec::new() };
    let Ok(w) = window(&s, 1.0, 1.0) else { return Vec::new() };
    count_steps(&w.frames, profile, &Default::default()).map(|v| v.into_iter().map(|e| e.steps).collect()).unwrap_or_default()
}

/// Minute counts for a night: an hour awake, `sleep_h` hours in bed with one
/// awakening, an hour awake.
pub fn night_counts(sleep_h: f64, seed: u64) -> Vec<f64> {
    let bed_s = sleep_h * 3600.0;
    let mut samples = motion_samples(&Motion::Light, 0, 3600.0, DEMO_RATE_HZ, seed);
    let sleep = Motion::Sleep { onset_min: 15, wake_min: 10, interrupts: vec![((sleep_h * 30.0) as u32, 12)] };
    samples.extend(motion_samples(&sleep, 3_600_000, bed_s, DEMO_RATE_HZ, seed + 1));
    let t = 3_600_000 + (bed_s * 1000.0) as i64;
    samples.extend(motion_samples(&Motion::Light, t, 3600.0, DEMO_RATE_HZ, seed + 2));
    let s = stream(samples, DeviceProfile::Smartwatch);
    let scale = ExtractConfig::default().count_scale;
    let Ok(w) = window(&s, 60.0, 60.0) else { return Vec::new() };
    activity_counts(&w.frames).map(|v| v.into_iter().map(|c| c.counts * scale).collect()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SleepDemo {
    /// One flag per minute.
    pub asleep: Vec<bool>,
    pub sessions: Vec<SleepSession>,
}

/// Scores minute counts (one per minute from t = 0) with `"cole"` or `"sadeh"`.
pub fn score_night(counts: &[f64], scorer: &str) -> Result<SleepDemo, String> {
    let scorer = match scorer {
        "cole" => Scorer::Cole,
        "sadeh" => Scorer::Sadeh,
        other => return Err(format!("unknown scorer {other:?}")),
    };
    let cfg = ExtractConfig::default().sleep;
    let minutes: Vec<ActivityCounts> =
        counts.iter().enumerate().map(|(i, &c)| ActivityCounts { minute_start: i as i64 * 60_000, counts: c }).collect();
    let scores = score_epochs(&minutes, scorer, &cfg).map_err(|e| e.to_string())?;
    Ok(SleepDemo {
        asleep: scores.iter().map(|s| s.label == SleepLabel::Sleep).collect(),
        sessions: segment_sessions(&scores, &cfg),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub code: String,
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
    /// Enclosing cells from precision 1 up to the parent.
    pub parents: Vec<String>,
}

fn cell(g: &Geohash) -> Cell {
    let b = g.bbox();
    Cell {
        code: g.as_str().to_string(),
        min_lat: b.min_lat,
        min_lon: b.min_lon,
        max_lat: b.max_lat,
        max_lon: b.max_lon,
        parents: (1..g.precision()).map(|p| g.truncate(p).as_str().to_string()).collect(),
    }
}

pub fn encode_cell(lat: f64, lon: f64, precision: usize) -> Result<Cell, String> {
    geohash::encode(lat, lon, precision).map(|g| cell(&g)).map_err(|e| e.to_string())
}

pub fn decode_cell(code: &str) -> Result<Cell, String> {
    Geohash::parse(code).map(|g| cell(&g)).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// JavaScript bindings

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// JSON `{signal, steps, truth}`.
#[wasm_bindgen(js_name = gaitDemo)]
pub fn gait_demo_js(cadence_hz: f64, amplitude: f64, seconds: f64, shake: bool, watch: bool, seed: u32) -> Result<String, JsValue> {
    if !(seconds > 0.0 && seconds <= 600.0) {
        return Err(JsValue::from_str("seconds must be in (0, 600]"));
    }
    to_js(Ok(gait_demo(cadence_hz, amplitude, seconds, shake, watch, u64::from(seed))))
}

#[wasm_bindgen(js_name = nightCounts)]
pub fn night_counts_js(sleep_h: f64, seed: u32) -> Vec<f64> {
    night_counts(sleep_h.clamp(1.0, 12.0), u64::from(seed))
}

/// JSON `{asleep, sessions}`.
#[wasm_bindgen(js_name = scoreNight)]
pub fn score_night_js(counts: Vec<f64>, scorer: &str) -> Result<String, JsValue> {
    to_js(score_night(&counts, scorer))
}

/// JSON cell with bounds and parent codes.
#[wasm_bindgen(js_name = encodeCell)]
pub fn encode_cell_js(lat: f64, lon: f64, precision: usize) -> Result<String, JsValue> {
    to_js(encode_cell(lat, lon, precision))
}

#[wasm_bindgen(js_name = decodeCell)]
pub fn decode_cell_js(code: &str) -> Result<String, JsValue> {
    to_js(decode_cell(code))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walking_steps_match_cadence() {
        let g = gait_demo(2.0, 3.0, 60.0, false, true, 1);
        assert_eq!(g.truth, 120);
        assert!(g.steps.len().abs_diff(120) <= 2, "{}", g.steps.len());
        assert_eq!(g.signal.len(), 1200);
    }

    #[test]
    fn shaking_gives_no_steps() {
        let g = gait_demo(2.0, 3.0, 30.0, true, true, 2);
        assert!(g.steps.is_empty(), "{:?}", g.steps);
        let samples = motion_samples(&Motion::Shake, 0, 30.0, DEMO_RATE_HZ, 2);
        assert_eq!(windowed_steps(samples, true).iter().sum::<u32>(), 0);
    }

    #[test]
    fn night_is_one_session_near_bed_time() {
        let counts = night_counts(8.0, 3);
        assert_eq!(counts.len(), 10 * 60);
        let d = score_night(&counts, "cole").unwrap();
        assert_eq!(d.sessions.len(), 1, "{:?}", d.sessions);
        let s = &d.sessions[0];
        // truth: asleep 15 min after 01:00 until 10 min before 09:00
        assert!((s.gst_min - (480.0 - 25.0)).abs() <= 12.0, "{s:?}");
        assert_eq!(d.asleep.len(), counts.len());
        assert!(score_night(&counts, "nope").is_err());
    }

    #[test]
    fn cells_and_parents() {
        let c = encode_cell(57.64911, 10.40744, 11).unwrap();
        assert_eq!(c.code, "u4pruydqqvj");
        assert_eq!(c.parents.len(), 10);
        assert_eq!(c.parents[4], "u4pru");
        assert!(c.min_lat <= 57.64911 && 57.64911 <= c.max_lat);
        assert_eq!(decode_cell("u4pru").unwrap().parents, ["u", "u4", "u4p", "u4pr"]);
        assert!(decode_cell("u4pa").is_err());
        assert!(encode_cell(95.0, 0.0, 5).is_err());
    }

    #[test]
    fn json_wrappers_serialize() {
        let v: serde_json::Value = serde_json::from_str(&encode_cell_js(0.0, 0.0, 3).unwrap()).unwrap();
        assert_eq!(v["code"], "s00");
        let v: serde_json::Value = serde_json::from_str(&score_night_js(vec![0.0; 120], "sadeh").unwrap()).unwrap();
        assert_eq!(v["asleep"].as_array().unwrap().len(), 120);
    }
}
