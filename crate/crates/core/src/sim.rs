//! Scenario-driven generator of synthetic accelerometer and location streams
//! with their ground truth.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{NaiveDateTime, TimeZone};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::ActivityType;
use crate::eval::{SleepAnnotation, SleepEvent, SleepEventKind};
use crate::geo::{offset_m, LatLon};
use crate::ingest::{AccelSample, AccelStream, DeviceProfile, LocationSample, LocationStream, STANDARD_GRAVITY};
use crate::location::PoiCategory;
use crate::transport::TransportMode;

const G: f64 = STANDARD_GRAVITY;
const MINUTE_MS: i64 = 60_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("block {index}: cannot parse time {value:?}")]
    BadTime { index: usize, value: String },
    #[error("block {index} ends before it starts")]
    EmptyBlock { index: usize },
    #[error("blocks {a} and {b} overlap")]
    Overlap { a: usize, b: usize },
    #[error("block {index}: unknown place {place:?}")]
    UnknownPlace { index: usize, place: String },
    #[error("block {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("unknown timezone {0:?}")]
    TimeZone(String),
    #[error("sampling rate {0} Hz is outside 5..=50")]
    Rate(f64),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Lay,
    Sit,
    Stand,
}

impl Posture {
    fn gravity(self) -> [f64; 3] {
        match self {
            Posture::Lay => [G, 0.0, 0.0],
            Posture::Sit => [0.0, G * 0.5, G * 0.75f64.sqrt()],
            Posture::Stand => [0.0, 0.0, G],
        }
    }
}

/// What the accelerometer sees during a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Still { posture: Posture },
    /// Awake at rest with occasional small movements.
    Sedentary { posture: Posture },
    /// Light non-ambulatory activity such as moving around a room.
    Light,
    Walk { cadence_hz: f64, amplitude: f64 },
    Run { cadence_hz: f64, amplitude: f64 },
    Stairs,
    Cycle,
    /// Device handled or shaken without walking.
    Shake,
    /// Time in bed; asleep except for the onset, interrupt and final-wake spells.
    Sleep {
        #[serde(default)]
        onset_min: u32,
        #[serde(default)]
        wake_min: u32,
        /// `(start_min, length_min)` relative to the block start.
        #[serde(default)]
        interrupts: Vec<(u32, u32)>,
    },
    Ride { mode: TransportMode },
    /// Device worn nowhere: exact zeros.
    NoWear,
    /// Device not recording: no samples.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Place {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: PoiCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Travel {
    pub from: String,
    pub to: String,
    pub mode: TransportMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    /// Local time `YYYY-MM-DDTHH:MM[:SS]` in the scenario timezone.
    pub start: String,
    pub end: String,
    pub motion: Motion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub travel: Option<Travel>,
    /// Label for the step-error grouping, e.g. the carrying position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub subject: String,
    pub timezone: String,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default = "default_device")]
    pub device: DeviceProfile,
    #[serde(default = "default_gps_period")]
    pub gps_period_s: f64,
    /// Horizontal jitter of location fixes, metres.
    #[serde(default = "default_gps_noise")]
    pub gps_noise_m: f64,
    /// Local-time window outside which the accelerometer is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_window: Option<(String, String)>,
    #[serde(default)]
    pub places: Vec<Place>,
    pub blocks: Vec<Block>,
}

fn default_rate() -> f64 {
    20.0
}
fn default_device() -> DeviceProfile {
    DeviceProfile::Smartwatch
}
fn default_gps_period() -> f64 {
    30.0
}
fn default_gps_noise() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthStay {
    pub place: String,
    pub category: PoiCategory,
    pub lat: f64,
    pub lon: f64,
    pub arrive: i64,
    pub depart: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSteps {
    pub start: i64,
    pub end: i64,
    pub steps: u32,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub start: i64,
    pub end: i64,
    pub label: ActivityType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrip {
    pub start: i64,
    pub end: i64,
    pub mode: TransportMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub stays: Vec<TruthStay>,
    pub steps: Vec<TruthSteps>,
    pub activity: Vec<TruthLabel>,
    pub trips: Vec<TruthTrip>,
    pub sleep: Option<SleepAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub accel: AccelStream,
    pub location: LocationStream,
    pub truth: Truth,
}

fn parse_local(s: &str, tz: Tz, index: usize) -> Result<i64> {
    let bad = || SimError::BadTime { index, value: s.to_string() };
    let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .map_err(|_| bad())?;
    tz.from_local_datetime(&naive).earliest().map(|d| d.timestamp_millis()).ok_or_else(bad)
}

/// Block boundaries in epoch milliseconds after validation.
pub fn resolve_blocks(s: &Scenario) -> Result<Vec<(i64, i64)>> {
    let tz: Tz = s.timezone.parse().map_err(|_| SimError::TimeZone(s.timezone.clone()))?;
    let spans: Vec<(i64, i64)> = s
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| Ok((parse_local(&b.start, tz, i)?, parse_local(&b.end, tz, i)?)))
        .collect::<Result<_>>()?;
    let known = |id: &str| s.places.iter().any(|p| p.id == id);
    for (i, (b, &(a, e))) in s.blocks.iter().zip(&spans).enumerate() {
        if e <= a {
            return Err(SimError::EmptyBlock { index: i });
        }
        for id in b.place.iter().chain(b.travel.iter().flat_map(|t| [&t.from, &t.to])) {
            if !known(id) {
                return Err(SimError::UnknownPlace { index: i, place: id.clone() });
            }
        }
        if b.place.is_some() && b.travel.is_some() {
            return Err(SimError::Invalid { index: i, message: "a block is either a stay or a trip".into() });
        }
        if let Motion::Sleep { onset_min, wake_min, interrupts } = &b.motion {
            let len = ((e - a) / MINUTE_MS) as u32;
            let mut prev_end = *onset_min;
            for &(s0, l) in interrupts {
                if s0 < prev_end || l == 0 {
                    return Err(SimError::Invalid { index: i, message: "sleep interrupts must be ordered, positive and after onset".into() });
                }
                prev_end = s0 + l;
            }
            if prev_end + wake_min >= len {
                return Err(SimError::Invalid { index: i, message: "no sleep left in the block".into() });
            }
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i]);
    for w in order.windows(2) {
        if spans[w[1]].0 < spans[w[0]].1 {
            return Err(SimError::Overlap { a: w[0], b: w[1] });
        }
    }
    Ok(spans)
}

/// Walking truth: one step per gait cycle.
pub fn truth_steps(cadence_hz: f64, duration_s: f64) -> u32 {
    // peaks sit a quarter cycle into each period
    ((cadence_hz * duration_s) - 0.25).ceil().max(0.0) as u32
}

#[derive(Debug, Clone, Copy)]
struct Comp {
    axis: usize,
    f: f64,
    a: f64,
    phase: f64,
}

impl Comp {
    fn at(&self, t: f64) -> f64 {
        self.a * (2.0 * PI * self.f * t + self.phase).sin()
    }
}

/// A prepared signal for one block; `t` is seconds since the block start.
#[derive(Debug, Clone, Default)]
struct Gen {
    zero: bool,
    gravity: [f64; 3],
    comps: Vec<Comp>,
    /// Components active only inside `bursts`.
    burst_comps: Vec<Comp>,
    bursts: Vec<(f64, f64)>,
    /// `(time, amplitude, width)` gaussian bumps on z.
    jolts: Vec<(f64, f64, f64)>,
    noise: f64,
    /// Sub-generators replacing this one inside the given spans.
    spans: Vec<(f64, f64, Box<Gen>)>,
}

impl Gen {
    fn value(&self, t: f64, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> [f64; 3] {
        if let Some((_, _, g)) = self.spans.iter().find(|(a, b, _)| t >= *a && t < *b) {
            return g.value(t, rng, normal);
        }
        if self.zero {
            return [0.0; 3];
        }
        let mut v = self.gravity;
        for c in &self.comps {
            v[c.axis] += c.at(t);
        }
        if self.bursts.iter().any(|(a, b)| t >= *a && t < *b) {
            for c in &self.burst_comps {
                v[c.axis] += c.at(t);
            }
        }
        for &(c, amp, w) in &self.jolts {
            let d = (t - c) / w;
            if d.abs() < 6.0 {
                v[2] += amp * (-0.5 * d * d).exp();
            }
        }
        for x in v.iter_mut() {
            *x += self.noise * normal.sample(rng);
        }
        v
    }
}

fn rand_comps(rng: &mut ChaCha8Rng, n: usize, f: (f64, f64), a: (f64, f64), max_f: f64) -> Vec<Comp> {
    (0..n)
        .map(|i| Comp {
            axis: i % 3,
            f: rng.random_range(f.0..f.1).min(max_f),
            a: rng.random_range(a.0..a.1),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

fn intermittent(rng: &mut ChaCha8Rng, len_s: f64, on: (f64, f64), off: (f64, f64)) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = rng.random_range(0.0..off.1);
    while t < len_s {
        let d = rng.random_range(on.0..on.1);
        out.push((t, (t + d).min(len_s)));
        t += d + rng.random_range(off.0..off.1);
    }
    out
}

fn gait(cadence: f64, amp: f64, gravity: [f64; 3], rng: &mut ChaCha8Rng) -> Gen {
    Gen {
        gravity,
        comps: vec![
            Comp { axis: 2, f: cadence, a: amp, phase: 0.0 },
            Comp { axis: 2, f: 2.0 * cadence, a: 0.1 * amp, phase: rng.random_range(0.0..2.0 * PI) },
            Comp { axis: 0, f: cadence / 2.0, a: 0.3 * amp, phase: rng.random_range(0.0..2.0 * PI) },
            Comp { axis: 1, f: cadence, a: 0.15 * amp, phase: rng.random_range(0.0..2.0 * PI) },
        ],
        noise: 0.05,
        ..Gen::default()
    }
}

fn light(gravity: [f64; 3], rng: &mut ChaCha8Rng, len_s: f64) -> Gen {
    Gen {
        gravity,
        comps: rand_comps(rng, 3, (0.6, 2.4), (0.04, 0.08), 2.4),
        burst_comps: rand_comps(rng, 3, (0.6, 2.4), (0.08, 0.13), 2.4),
        bursts: intermittent(rng, len_s, (5.0, 40.0), (5.0, 30.0)),
        noise: 0.01,
        ..Gen::default()
    }
}

fn ride(mode: TransportMode, rng: &mut ChaCha8Rng, len_s: f64, max_f: f64) -> Gen {
    let sit = Posture::Sit.gravity();
    match mode {
        TransportMode::WalkRun => gait(rng.random_range(1.7..2.3), rng.random_range(2.0..3.5), Posture::Stand.gravity(), rng),
        TransportMode::Bike => cycle(rng, max_f),
        TransportMode::Car => Gen {
            gravity: sit,
            comps: [
                rand_comps(rng, 2, (0.15, 0.4), (0.25, 0.45), max_f),
                rand_comps(rng, 3, (3.8, 4.6), (0.12, 0.2), max_f),
            ]
            .concat(),
            noise: 0.03,
            ..Gen::default()
        },
        TransportMode::Bus => Gen {
            gravity: sit,
            comps: [
                rand_comps(rng, 2, (0.08, 0.25), (0.6, 0.9), max_f),
                rand_comps(rng, 3, (2.2, 3.0), (0.25, 0.35), max_f),
            ]
            .concat(),
            noise: 0.05,
            ..Gen::default()
        },
        TransportMode::TrainSubway => {
            let mut jolts = Vec::new();
            let mut t = rng.random_range(0.0..1.0);
            while t < len_s {
                jolts.push((t, rng.random_range(0.15..0.3), 0.05));
                t += rng.random_range(1.0..1.4);
            }
            Gen {
                gravity: sit,
                comps: [rand_comps(rng, 2, (0.5, 0.8), (0.1, 0.18), max_f), rand_comps(rng, 2, (4.2, 4.8), (0.04, 0.07), max_f)]
                    .concat(),
                jolts,
                noise: 0.02,
                ..Gen::default()
            }
        }
    }
}

fn cycle(rng: &mut ChaCha8Rng, max_f: f64) -> Gen {
    let f = rng.random_range(1.1..1.5);
    Gen {
        gravity: [G * 0.3, 0.0, G * 0.91f64.sqrt()],
        comps: vec![
            Comp { axis: 0, f, a: rng.random_range(1.2..1.8), phase: 0.0 },
            Comp { axis: 1, f: 2.0 * f, a: rng.random_range(0.3..0.5), phase: rng.random_range(0.0..2.0 * PI) },
            Comp { axis: 2, f: rng.random_range(3.5..4.5f64).min(max_f), a: rng.random_range(0.2..0.35), phase: 0.0 },
        ],
        noise: 0.05,
        ..Gen::default()
    }
}

fn sleep_gen(len_s: f64, awake: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Gen {
    let lay = Posture::Lay.gravity();
    let mut jolts = Vec::new();
    let mut t = rng.random_range(60.0..600.0);
    while t < len_s {
        jolts.push((t, rng.random_range(0.1..0.25), 0.3));
        t += rng.random_range(300.0..1200.0);
    }
    let spans = awake.iter().map(|&(a, b)| (a, b, Box::new(light(lay, rng, b - a)))).collect();
    Gen { gravity: lay, jolts, noise: 0.004, spans, ..Gen::default() }
}

/// Band-limited vibration above the gait band plus isolated knocks.
fn shake(rng: &mut ChaCha8Rng, len_s: f64, max_f: f64) -> Gen {
    let mut jolts = Vec::new();
    let mut t = rng.random_range(0.0..2.0);
    while t < len_s {
        jolts.push((t, rng.random_range(2.0..5.0), rng.random_range(0.04..0.08)));
        t += rng.random_range(2.3..4.5);
    }
    Gen {
        gravity: Posture::Stand.gravity(),
        comps: (0..3)
            .map(|axis| Comp { axis, f: rng.random_range(6.0..9.0f64).min(max_f), a: rng.random_range(1.0..3.0), phase: rng.random_range(0.0..2.0 * PI) })
            .collect(),
        jolts,
        noise: 0.1,
        ..Gen::default()
    }
}

fn make_gen(motion: &Motion, len_s: f64, rate_hz: f64, rng: &mut ChaCha8Rng) -> Option<Gen> {
    let max_f = 0.45 * rate_hz;
    Some(match motion {
        Motion::Off => return None,
        Motion::NoWear => Gen { zero: true, ..Gen::default() },
        Motion::Still { posture } => Gen { gravity: posture.gravity(), noise: 0.004, ..Gen::default() },
        Motion::Sedentary { posture } => Gen {
            gravity: posture.gravity(),
            burst_comps: rand_comps(rng, 3, (0.6, 2.0), (0.03, 0.06), max_f),
            bursts: intermittent(rng, len_s, (2.0, 8.0), (5.0, 30.0)),
            noise: 0.004,
            ..Gen::default()
        },
        Motion::Light => light(Posture::Stand.gravity(), rng, len_s),
        Motion::Walk { cadence_hz, amplitude } | Motion::Run { cadence_hz, amplitude } => {
            gait(*cadence_hz, *amplitude, Posture::Stand.gravity(), rng)
        }
        Motion::Stairs => {
            let mut g = gait(rng.random_range(1.4..1.7), rng.random_range(3.0..4.0), Posture::Stand.gravity(), rng);
            g.comps.push(Comp { axis: 2, f: 0.05, a: 0.6, phase: 0.0 });
            g.comps.push(Comp { axis: 1, f: g.comps[0].f / 2.0, a: 1.2, phase: 0.3 });
            g
        }
        Motion::Cycle => cycle(rng, max_f),
        Motion::Shake => shake(rng, len_s, max_f),
        Motion::Sleep { onset_min, wake_min, interrupts } => {
            let m = |x: u32| f64::from(x) * 60.0;
            let mut awake = vec![(0.0, m(*onset_min))];
            awake.extend(interrupts.iter().map(|&(s, l)| (m(s), m(s + l))));
            awake.push((len_s - m(*wake_min), len_s));
            sleep_gen(len_s, &awake, rng)
        }
        Motion::Ride { mode } => ride(*mode, rng, len_s, max_f),
    })
}

fn activity_label(m: &Motion) -> Option<ActivityType> {
    Some(match m {
        Motion::Still { posture: Posture::Lay } | Motion::Sedentary { posture: Posture::Lay } => ActivityType::Lay,
        Motion::Still { posture: Posture::Stand } | Motion::Sedentary { posture: Posture::Stand } => ActivityType::Stand,
        Motion::Walk { .. } => ActivityType::Walk,
        Motion::Run { .. } => ActivityType::Run,
        Motion::Cycle => ActivityType::Cycle,
        Motion::Stairs => ActivityType::Stairs,
        _ => return None,
    })
}

/// Samples of one motion over `[t0, t0 + len_s)`, on the `rate_hz` grid.
pub fn motion_samples(motion: &Motion, t0: i64, len_s: f64, rate_hz: f64, seed: u64) -> Vec<AccelSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some(gen) = make_gen(motion, len_s, rate_hz, &mut rng) else { return Vec::new() };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let period = 1000.0 / rate_hz;
    let n = (len_s * rate_hz).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let [x, y, z] = gen.value(t, &mut rng, &normal);
            AccelSample::new(t0 + (i as f64 * period).round() as i64, round4(x), round4(y), round4(z))
        })
        .collect()
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn round7(v: f64) -> f64 {
    (v * 1e7).round() / 1e7
}

/// Runs a scenario. The same scenario and seed always give the same output.
pub fn simulate(s: &Scenario, seed: u64) -> Result<SimOutput> {
    if !(5.0..=50.0).contains(&s.rate_hz) {
        return Err(SimError::Rate(s.rate_hz));
    }
    let tz: Tz = s.timezone.parse().map_err(|_| SimError::TimeZone(s.timezone.clone()))?;
    let spans = resolve_blocks(s)?;
    let window = match &s.accel_window {
        Some((a, b)) => Some((parse_local(a, tz, usize::MAX)?, parse_local(b, tz, usize::MAX)?)),
        None => None,
    };
    let place = |id: &str| s.places.iter().find(|p| p.id == id).expect("validated");
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i]);

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let period = 1000.0 / s.rate_hz;
    let mut accel = Vec::new();
    let mut fixes = Vec::new();
    let mut truth = Truth::default();
    let mut sleep_events = Vec::new();

    for &i in &order {
        let b = &s.blocks[i];
        let (a, e) = spans[i];
        let len_s = (e - a) as f64 / 1000.0;
        let block_seed: u64 = master.random();
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed);

        // accelerometer on the global grid, clipped to the recording window
        let (wa, we) = window.unwrap_or((i64::MIN, i64::MAX));
        let (ca, ce) = (a.max(wa), e.min(we));
        if ca < ce {
            if let Some(gen) = make_gen(&b.motion, len_s, s.rate_hz, &mut rng) {
                let mut k = (ca as f64 / period).ceil() as i64;
                loop {
                    let t = (k as f64 * period).round() as i64;
                    if t >= ce {
                        break;
                    }
                    let [x, y, z] = gen.value((t - a) as f64 / 1000.0, &mut rng, &normal);
                    accel.push(AccelSample::new(t, round4(x), round4(y), round4(z)));
                    k += 1;
                }
            }
        }

        // location fixes every gps_period_s
        let gps_ms = (s.gps_period_s * 1000.0).round() as i64;
        let positions: Option<Box<dyn Fn(i64) -> LatLon>> = if let Some(id) = &b.place {
            let p = place(id);
            let c = LatLon { lat: p.lat, lon: p.lon };
            Some(Box::new(move |_| c))
        } else if let Some(tr) = &b.travel {
            let (f, to) = (place(&tr.from), place(&tr.to));
            let (f, to) = (LatLon { lat: f.lat, lon: f.lon }, LatLon { lat: to.lat, lon: to.lon });
            Some(Box::new(move |t| {
                let u = (t - a) as f64 / (e - a) as f64;
                LatLon { lat: f.lat + u * (to.lat - f.lat), lon: f.lon + u * (to.lon - f.lon) }
            }))
        } else {
            None
        };
        if let Some(pos) = positions {
            let mut t = a.div_euclid(gps_ms) * gps_ms;
            if t < a {
                t += gps_ms;
            }
            while t < e {
                let c = pos(t);
                let p = offset_m(c, s.gps_noise_m * normal.sample(&mut rng), s.gps_noise_m * normal.sample(&mut rng));
                fixes.push(LocationSample { t, lat: round7(p.lat), lon: round7(p.lon), accuracy: 10.0 });
                t += gps_ms;
            }
        }

        // truth
        if let Some(id) = &b.place {
            let p = place(id);
            match truth.stays.last_mut() {
                Some(last) if last.place == *id && last.depart == a => last.depart = e,
                _ => truth.stays.push(TruthStay { place: id.clone(), category: p.category, lat: p.lat, lon: p.lon, arrive: a, depart: e }),
            }
        }
        if let Some(tr) = &b.travel {
            truth.trips.push(TruthTrip { start: a, end: e, mode: tr.mode });
        }
        if let Motion::Walk { cadence_hz, .. } | Motion::Run { cadence_hz, .. } = b.motion {
            let group = b.group.clone().unwrap_or_else(|| s.device.to_string());
            truth.steps.push(TruthSteps { start: a, end: e, steps: truth_steps(cadence_hz, len_s), group });
        }
        if let Some(label) = activity_label(&b.motion) {
            truth.activity.push(TruthLabel { start: a, end: e, label });
        }
        if let Motion::Sleep { onset_min, wake_min, interrupts } = &b.motion {
            let at = |m: u32| a + i64::from(m) * MINUTE_MS;
            let ev = |t, event| SleepEvent { t, event };
            sleep_events.push(ev(a, SleepEventKind::InBed));
            sleep_events.push(ev(at(*onset_min), SleepEventKind::SleepStart));
            for &(s0, l) in interrupts {
                sleep_events.push(ev(at(s0), SleepEventKind::SleepEnd));
                sleep_events.push(ev(at(s0 + l), SleepEventKind::SleepStart));
            }
            sleep_events.push(ev(e - i64::from(*wake_min) * MINUTE_MS, SleepEventKind::SleepEnd));
            sleep_events.push(ev(e, SleepEventKind::OffBed));
        }
    }
    if !sleep_events.is_empty() {
        let mut events = vec![SleepEvent { t: spans.iter().map(|s| s.0).min().unwrap_or(0), event: SleepEventKind::RecordingStart }];
        events.append(&mut sleep_events);
        events.push(SleepEvent { t: spans.iter().map(|s| s.1).max().unwrap_or(0), event: SleepEventKind::RecordingEnd });
        truth.sleep = Some(SleepAnnotation { recording: s.subject.clone(), events });
    }

    let accel = AccelStream {
        subject_id: s.subject.clone(),
        device_profile: Some(s.device),
        tz: Some(s.timezone.clone()),
        samples: accel,
        nominal_rate_hz: s.rate_hz,
        warnings: Vec::new(),
    };
    let location = LocationStream {
        subject_id: s.subject.clone(),
        device_profile: None,
        tz: Some(s.timezone.clone()),
        samples: fixes,
        nominal_rate_hz: 1.0 / s.gps_period_s,
        warnings: Vec::new(),
    };
    Ok(SimOutput { accel, location, truth })
}

// ---------------------------------------------------------------------------
// Labeled windows for model training

/// One window of a given activity type, `len_s` long, at `rate_hz`.
pub fn activity_window(kind: ActivityType, t0: i64, len_s: f64, rate_hz: f64, rng: &mut ChaCha8Rng) -> Vec<AccelSample> {
    let motion = match kind {
        ActivityType::Lay => {
            if rng.random_bool(0.5) {
                Motion::Still { posture: Posture::Lay }
            } else {
                Motion::Sedentary { posture: Posture::Lay }
            }
        }
        ActivityType::Stand => {
            if rng.random_bool(0.5) {
                Motion::Still { posture: Posture::Stand }
            } else {
                Motion::Sedentary { posture: Posture::Stand }
            }
        }
        ActivityType::Walk => Motion::Walk { cadence_hz: rng.random_range(1.6..2.3), amplitude: rng.random_range(2.0..4.0) },
        ActivityType::Run => Motion::Run { cadence_hz: rng.random_range(2.5..3.2), amplitude: rng.random_range(6.0..10.0) },
        ActivityType::Cycle => Motion::Cycle,
        ActivityType::Stairs => Motion::Stairs,
    };
    motion_samples(&motion, t0, len_s, rate_hz, rng.random())
}

pub fn transport_window(mode: TransportMode, t0: i64, len_s: f64, rate_hz: f64, rng: &mut ChaCha8Rng) -> Vec<AccelSample> {
    motion_samples(&Motion::Ride { mode }, t0, len_s, rate_hz, rng.random())
}

// ---------------------------------------------------------------------------
// Built-in scenario families

/// An hour of gait bouts (100 steps each) interleaved with stillness and
/// shake-only segments filling about a fifth of the time.
pub fn gait_suite(seed: u64, rate_hz: f64) -> (Vec<AccelSample>, Vec<TruthSteps>, Vec<(i64, i64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 1000.0 / rate_hz;
    let mut samples = Vec::new();
    let mut bouts = Vec::new();
    let mut shakes = Vec::new();
    let mut t = 0i64;
    let mut push = |motion: &Motion, len_s: f64, t: &mut i64, rng: &mut ChaCha8Rng| {
        let n = (len_s * rate_hz).round() as i64;
        let s = motion_samples(motion, *t, len_s, rate_hz, rng.random());
        samples.extend(s);
        *t += (n as f64 * period).round() as i64;
    };
    let still = Motion::Still { posture: Posture::Stand };
    let mut k = 0;
    while t < 3_600_000 - 120_000 {
        push(&still, 10.0, &mut t, &mut rng);
        if k % 5 == 4 {
            let start = t;
            let len = rng.random_range(50.0..70.0);
            push(&Motion::Shake, len, &mut t, &mut rng);
            shakes.push((start, t));
        } else {
            let cadence = rng.random_range(1.5..2.5);
            let amplitude = rng.random_range(2.0..5.0);
            // 100 whole cycles
            let len = 100.0 / cadence;
            let start = t;
            push(&Motion::Walk { cadence_hz: cadence, amplitude }, len, &mut t, &mut rng);
            let n_samples = (len * rate_hz).round();
            let steps = truth_steps(cadence, n_samples / rate_hz);
            bouts.push(TruthSteps { start, end: t, steps, group: "gait".into() });
        }
        k += 1;
    }
    push(&still, 10.0, &mut t, &mut rng);
    (samples, bouts, shakes)
}

/// A night at home: evening activity, time in bed with interruptions, morning activity.
pub fn night_scenario(index: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let bed_h = 21 + (index % 3) as u32; // 21:xx..23:xx
    let bed_m: u32 = rng.random_range(0..50);
    let in_bed_min: u32 = rng.random_range(480..600);
    let onset: u32 = rng.random_range(5..30);
    let wake: u32 = rng.random_range(2..15);
    let mut interrupts = Vec::new();
    let n_int = rng.random_range(0..3u32);
    let mut cursor = onset + 60;
    for _ in 0..n_int {
        let s0 = cursor + rng.random_range(30..120);
        let l = rng.random_range(5..15);
        if s0 + l + wake + 60 < in_bed_min {
            interrupts.push((s0, l));
            cursor = s0 + l;
        }
    }
    let day0 = chrono::NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date") + chrono::Duration::days(index as i64);
    let fmt = |d: chrono::NaiveDateTime| d.format("%Y-%m-%dT%H:%M").to_string();
    let bed = day0.and_hms_opt(bed_h, bed_m, 0).expect("valid time");
    let up = bed + chrono::Duration::minutes(i64::from(in_bed_min));
    let evening = bed - chrono::Duration::minutes(120);
    let morning = up + chrono::Duration::minutes(90);
    let home = "home".to_string();
    Scenario {
        subject: format!("night-{index:02}"),
        timezone: "Europe/Athens".into(),
        rate_hz: 10.0,
        device: DeviceProfile::Smartwatch,
        gps_period_s: 60.0,
        gps_noise_m: 5.0,
        accel_window: None,
        places: vec![Place { id: home.clone(), lat: 40.63, lon: 22.94, category: PoiCategory::Home }],
        blocks: vec![
            Block { start: fmt(evening), end: fmt(bed), motion: Motion::Light, place: Some(home.clone()), travel: None, group: None },
            Block {
                start: fmt(bed),
                end: fmt(up),
                motion: Motion::Sleep { onset_min: onset, wake_min: wake, interrupts },
                place: Some(home.clone()),
                travel: None,
                group: None,
            },
            Block { start: fmt(up), end: fmt(morning), motion: Motion::Light, place: Some(home), travel: None, group: None },
        ],
    }
}

/// Dwell-suite scenario: several stays of at least 15 minutes at places at
/// least 500 m apart, joined by trips.
pub fn dwell_scenario(index: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03));
    let n_places = rng.random_range(3..6usize);
    let base = LatLon { lat: 40.60 + 0.01 * index as f64, lon: 22.90 };
    let mut places: Vec<Place> = Vec::new();
    while places.len() < n_places {
        let c = offset_m(base, rng.random_range(-4000.0..4000.0), rng.random_range(-4000.0..4000.0));
        if places.iter().all(|p| LatLon { lat: p.lat, lon: p.lon }.distance_m(&c) >= 700.0) {
            places.push(Place {
                id: format!("place-{}", places.len()),
                lat: c.lat,
                lon: c.lon,
                category: PoiCategory::ALL[rng.random_range(0..11)],
            });
        }
    }
    let mut t = chrono::NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date").and_hms_opt(8, 0, 0).expect("valid time");
    let fmt = |d: chrono::NaiveDateTime| d.format("%Y-%m-%dT%H:%M").to_string();
    let mut blocks = Vec::new();
    let n_stays = rng.random_range(4..8usize);
    let mut at = 0usize;
    for k in 0..n_stays {
        let dwell = chrono::Duration::minutes(rng.random_range(15..90));
        blocks.push(Block {
            start: fmt(t),
            end: fmt(t + dwell),
            motion: Motion::Sedentary { posture: Posture::Sit },
            place: Some(places[at].id.clone()),
            travel: None,
            group: None,
        });
        t += dwell;
        if k + 1 < n_stays {
            let next = (at + rng.random_range(1..n_places)) % n_places;
            let d = LatLon { lat: places[at].lat, lon: places[at].lon }.distance_m(&LatLon { lat: places[next].lat, lon: places[next].lon });
            let mode = if d < 1500.0 { TransportMode::WalkRun } else { TransportMode::Bus };
            let speed = if mode == TransportMode::WalkRun { 1.3 } else { 6.0 };
            let trip = chrono::Duration::minutes(((d / speed / 60.0).ceil() as i64).max(3));
            blocks.push(Block {
                start: fmt(t),
                end: fmt(t + trip),
                motion: Motion::Off,
                place: None,
                travel: Some(Travel { from: places[at].id.clone(), to: places[next].id.clone(), mode }),
                group: None,
            });
            t += trip;
            at = next;
        }
    }
    Scenario {
        subject: format!("dwell-{index:02}"),
        timezone: "Europe/Athens".into(),
        rate_hz: 10.0,
        device: DeviceProfile::Smartphone,
        gps_period_s: 30.0,
        gps_noise_m: 6.0,
        accel_window: None,
        places,
        blocks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub subjects: usize,
    pub days: u32,
    /// First day, `YYYY-MM-DD`; should be a Monday.
    pub start_date: String,
    pub timezone: String,
    pub rate_hz: f64,
    /// Local hours of accelerometer recording on the last day.
    pub accel_hours: (u32, u32),
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects: 6,
            days: 8,
            start_date: "2024-03-04".into(),
            timezone: "Europe/Athens".into(),
            rate_hz: 10.0,
            accel_hours: (7, 16),
        }
    }
}

/// School-age cohort sharing a school, a park and a few shops.
pub fn cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<Scenario>> {
    let start = chrono::NaiveDate::parse_from_str(&spec.start_date, "%Y-%m-%d")
        .map_err(|_| SimError::BadTime { index: 0, value: spec.start_date.clone() })?;
    let centre = LatLon { lat: 40.6264, lon: 22.9484 };
    let shared = |id: &str, n: f64, e: f64, category| {
        let c = offset_m(centre, n, e);
        Place { id: id.into(), lat: c.lat, lon: c.lon, category }
    };
    let school = shared("school", 0.0, 0.0, PoiCategory::Other);
    let park = shared("park", 900.0, 700.0, PoiCategory::Park);
    let fast_food = shared("fast-food", -800.0, 900.0, PoiCategory::FastFood);
    let grocery = shared("grocery", 700.0, -900.0, PoiCategory::SupermarketGrocery);
    let mut out = Vec::new();
    for s in 0..spec.subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64 * 7919));
        let angle = 2.0 * PI * s as f64 / spec.subjects.max(1) as f64;
        let r = rng.random_range(1500.0..2500.0);
        let h = offset_m(centre, r * angle.sin(), r * angle.cos());
        let home = Place { id: "home".into(), lat: h.lat, lon: h.lon, category: PoiCategory::Other };
        let commute = if s % 2 == 0 { TransportMode::Bus } else { TransportMode::Car };
        let mut blocks = Vec::new();
        let fmt = |d: chrono::NaiveDate, h: u32, m: u32| format!("{}T{:02}:{:02}", d.format("%Y-%m-%d"), h, m);
        let mut add = |d0: chrono::NaiveDate, (h0, m0): (u32, u32), d1: chrono::NaiveDate, (h1, m1): (u32, u32), motion: Motion, place: Option<&str>, travel: Option<Travel>| {
            blocks.push(Block { start: fmt(d0, h0, m0), end: fmt(d1, h1, m1), motion, place: place.map(String::from), travel, group: None });
        };
        let sit = || Motion::Sedentary { posture: Posture::Sit };
        let trip = |from: &str, to: &str, mode| Some(Travel { from: from.into(), to: to.into(), mode });
        for d in 0..spec.days {
            let day = start + chrono::Duration::days(i64::from(d));
            let next = day + chrono::Duration::days(1);
            let weekday = chrono::Datelike::weekday(&day).num_days_from_monday() < 5;
            let onset = rng.random_range(10..25);
            if d == 0 {
                add(day, (0, 0), day, (7, 0), Motion::Sleep { onset_min: 0, wake_min: 5, interrupts: vec![] }, Some("home"), None);
            }
            if weekday {
                add(day, (7, 0), day, (7, 30), Motion::Light, Some("home"), None);
                add(day, (7, 30), day, (7, 50), Motion::Ride { mode: commute }, None, trip("home", "school", commute));
                add(day, (7, 50), day, (10, 0), sit(), Some("school"), None);
                add(day, (10, 0), day, (10, 20), Motion::Walk { cadence_hz: rng.random_range(1.8..2.2), amplitude: rng.random_range(2.0..3.0) }, Some("school"), None);
                add(day, (10, 20), day, (14, 30), sit(), Some("school"), None);
                let (after, motion) = match (s + d as usize) % 3 {
                    0 => ("park", Motion::Run { cadence_hz: rng.random_range(2.6..3.0), amplitude: rng.random_range(5.0..7.0) }),
                    1 => ("fast-food", sit()),
                    _ => ("grocery", Motion::Light),
                };
                add(day, (14, 30), day, (14, 45), Motion::Walk { cadence_hz: rng.random_range(1.8..2.2), amplitude: 2.5 }, None, trip("school", after, TransportMode::WalkRun));
                add(day, (14, 45), day, (15, 45), motion, Some(after), None);
                add(day, (15, 45), day, (16, 5), Motion::Walk { cadence_hz: rng.random_range(1.8..2.2), amplitude: 2.5 }, None, trip(after, "home", TransportMode::WalkRun));
                add(day, (16, 5), day, (18, 0), sit(), Some("home"), None);
                add(day, (18, 0), day, (22, 30), Motion::Light, Some("home"), None);
            } else {
                add(day, (7, 0), day, (10, 0), Motion::Light, Some("home"), None);
                add(day, (10, 0), day, (10, 20), Motion::Cycle, None, trip("home", "park", TransportMode::Bike));
                add(day, (10, 20), day, (12, 0), Motion::Walk { cadence_hz: 2.0, amplitude: 2.5 }, Some("park"), None);
                add(day, (12, 0), day, (12, 20), Motion::Cycle, None, trip("park", "home", TransportMode::Bike));
                add(day, (12, 20), day, (22, 30), Motion::Light, Some("home"), None);
            }
            add(day, (22, 30), next, (7, 0), Motion::Sleep { onset_min: onset, wake_min: 5, interrupts: vec![] }, Some("home"), None);
        }
        let last = start + chrono::Duration::days(i64::from(spec.days.saturating_sub(1)));
        let fmt_w = |h: u32| format!("{}T{:02}:00", last.format("%Y-%m-%d"), h);
        out.push(Scenario {
            subject: format!("subject-{:03}", s + 1),
            timezone: spec.timezone.clone(),
            rate_hz: spec.rate_hz,
            device: DeviceProfile::Smartwatch,
            gps_period_s: 30.0,
            gps_noise_m: 6.0,
            accel_window: Some((fmt_w(spec.accel_hours.0), fmt_w(spec.accel_hours.1))),
            places: vec![home, school.clone(), park.clone(), fast_food.clone(), grocery.clone()],
            blocks,
        });
    }
    Ok(out)
}

/// Gazetteer rows covering the cohort's shared places.
pub fn cohort_gazetteer(scenarios: &[Scenario]) -> Vec<crate::location::GazetteerEntry> {
    let mut seen = BTreeMap::new();
    for s in scenarios {
        for p in &s.places {
            if p.id != "home" && p.category != PoiCategory::Other {
                seen.entry(p.id.clone()).or_insert_with(|| crate::location::GazetteerEntry {
                    place_id: p.id.clone(),
                    lat: p.lat,
                    lon: p.lon,
                    category: p.category,
                });
            }
        }
    }
    seen.into_values().collect()
}


#[cfg(test)]
mod gait_tests {
    use super::*;
    use crate::activity::{count_steps, StepConfig};
    use crate::ingest::{resample, window};

    fn detected(samples: Vec<AccelSample>, rate_hz: f64, profile: DeviceProfile) -> Vec<(i64, u32)> {
        let stream = AccelStream {
            subject_id: "g".into(),
            device_profile: Some(profile),
            tz: None,
            samples,
            nominal_rate_hz: rate_hz,
            warnings: Vec::new(),
        };
        let stream = resample(&stream, 20.0).unwrap();
        let w = window(&stream, 1.0, 1.0).unwrap();
        count_steps(&w.frames, profile, &StepConfig::default())
            .unwrap()
            .into_iter()
            .map(|e| (e.window_start, e.steps))
            .collect()
    }

    fn check(rate_hz: f64, profile: DeviceProfile, seed: u64) {
        let (samples, bouts, shakes) = gait_suite(seed, rate_hz);
        let est = detected(samples, rate_hz, profile);
        let within = |a: i64, b: i64| est.iter().filter(|(t, _)| *t >= a && *t < b).map(|(_, s)| *s).sum::<u32>();
        for b in &bouts {
            let got = within(b.start, b.end);
            assert!(got.abs_diff(b.steps) <= 2, "{profile:?} {rate_hz} Hz bout at {}: truth {} got {got}", b.start, b.steps);
        }
        for &(a, b) in &shakes {
            assert_eq!(within(a, b), 0, "{profile:?} shake at {a}");
        }
    }

    #[test]
    fn gait_suite_within_two_steps() {
        for seed in 0..3 {
            check(20.0, DeviceProfile::Smartwatch, seed);
            check(20.0, DeviceProfile::Smartphone, seed);
            check(10.0, DeviceProfile::Smartwatch, seed);
        }
    }
}
