//! Visited-place detection on location traces, home/school labelling,
//! gazetteer categorization and coordinate redaction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{centroid, GridIndex, LatLon};
use crate::geoagg::geohash::{self, Geohash, GeohashError};
use crate::ingest::LocationSample;

mod density;
use density::DensityGrid;

#[derive(Debug, Error)]
pub enum LocationError {
    #[error("cannot read gazetteer {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("gazetteer row {row}: {message}")]
    Gazetteer { row: usize, message: String },
    #[error("point of interest {0} must be categorized before redaction")]
    NotCategorized(String),
    #[error("point of interest {0} still carries coordinates")]
    NotRedacted(String),
    #[error(transparent)]
    Geohash(#[from] GeohashError),
    #[error("unknown time zone {0:?}")]
    TimeZone(String),
}

pub type Result<T> = std::result::Result<T, LocationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Restaurant,
    FastFood,
    Takeaway,
    Cafe,
    Bar,
    SupermarketGrocery,
    FoodOutlet,
    WineLiquor,
    Park,
    RecreationIndoor,
    SportsFacility,
    School,
    Home,
    Other,
    Unknown,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 15] = [
        PoiCategory::Restaurant,
        PoiCategory::FastFood,
        PoiCategory::Takeaway,
        PoiCategory::Cafe,
        PoiCategory::Bar,
        PoiCategory::SupermarketGrocery,
        PoiCategory::FoodOutlet,
        PoiCategory::WineLiquor,
        PoiCategory::Park,
        PoiCategory::RecreationIndoor,
        PoiCategory::SportsFacility,
        PoiCategory::School,
        PoiCategory::Home,
        PoiCategory::Other,
        PoiCategory::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Restaurant => "restaurant",
            PoiCategory::FastFood => "fast_food",
            PoiCategory::Takeaway => "takeaway",
            PoiCategory::Cafe => "cafe",
            PoiCategory::Bar => "bar",
            PoiCategory::SupermarketGrocery => "supermarket_grocery",
            PoiCategory::FoodOutlet => "food_outlet",
            PoiCategory::WineLiquor => "wine_liquor",
            PoiCategory::Park => "park",
            PoiCategory::RecreationIndoor => "recreation_indoor",
            PoiCategory::SportsFacility => "sports_facility",
            PoiCategory::School => "school",
            PoiCategory::Home => "home",
            PoiCategory::Other => "other",
            PoiCategory::Unknown => "unknown",
        }
    }

    /// Categories a gazetteer entry may carry.
    pub fn is_mappable(self) -> bool {
        !matches!(self, PoiCategory::Home | PoiCategory::Unknown)
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOfInterest {
    pub poi_id: String,
    /// Spatial cluster the stay belongs to; repeated visits share it.
    pub cluster: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<LatLon>,
    pub arrive_t: i64,
    pub depart_t: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<PoiCategory>,
    pub member_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geohash: Option<Geohash>,
}

impl PointOfInterest {
    pub fn dwell_ms(&self) -> i64 {
        self.depart_t - self.arrive_t
    }
}

/// The post-redaction output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub poi_id: String,
    pub arrive: i64,
    pub depart: i64,
    pub category: PoiCategory,
    pub geohash: Geohash,
}

impl PoiRecord {
    pub fn from_redacted(poi: &PointOfInterest) -> Result<Self> {
        if poi.center.is_some() {
            return Err(LocationError::NotRedacted(poi.poi_id.clone()));
        }
        let category = poi.category.ok_or_else(|| LocationError::NotCategorized(poi.poi_id.clone()))?;
        let geohash = poi.geohash.clone().ok_or_else(|| LocationError::NotRedacted(poi.poi_id.clone()))?;
        Ok(Self { poi_id: poi.poi_id.clone(), arrive: poi.arrive_t, depart: poi.depart_t, category, geohash })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub sample: LocationSample,
    pub moveability: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoiConfig {
    pub eps_m: f64,
    pub min_pts: usize,
    pub min_stay_s: f64,
    pub max_gap_s: f64,
    pub v_ref_mps: f64,
    pub move_window: usize,
    pub match_radius_m: f64,
    pub min_history_days: f64,
    pub geohash_precision: usize,
}

impl Default for PoiConfig {
    fn default() -> Self {
        Self {
            eps_m: 50.0,
            min_pts: 10,
            min_stay_s: 600.0,
            max_gap_s: 1800.0,
            v_ref_mps: 1.5,
            move_window: 5,
            match_radius_m: 75.0,
            min_history_days: 7.0,
            geohash_precision: 7,
        }
    }
}

/// Path length over elapsed time in a centered window, normalized by `v_ref` and capped at 1.
pub fn moveability(trace: &[LocationSample], window: usize, v_ref: f64) -> Vec<f64> {
    let n = trace.len();
    let half = window / 2;
    let step: Vec<f64> = trace.windows(2).map(|w| w[0].position().distance_m(&w[1].position())).collect();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n.saturating_sub(1));
            let dt = (trace[hi].t - trace[lo].t) as f64 / 1000.0;
            if hi <= lo || dt <= 0.0 {
                return 0.0;
            }
            let path: f64 = step[lo..hi].iter().sum();
            (path / dt / v_ref).min(1.0)
        })
        .collect()
}

/// Moveability and weighted neighbourhood density for every sample.
pub fn density_points(trace: &[LocationSample], cfg: &PoiConfig) -> Vec<DensityPoint> {
    let points: Vec<LatLon> = trace.iter().map(LocationSample::position).collect();
    let mv = moveability(trace, cfg.move_window, cfg.v_ref_mps);
    let weights: Vec<f64> = mv.iter().map(|m| 1.0 - m).collect();
    let grid = DensityGrid::new(&points, &weights, cfg.eps_m);
    (0..trace.len())
        .map(|i| DensityPoint { sample: trace[i], moveability: mv[i], density: grid.density(i, &weights) })
        .collect()
}

/// Density-based clustering where each neighbour counts `1 - moveability`.
/// Returns one cluster id per sample (`None` for noise).
fn cluster(trace: &[LocationSample], cfg: &PoiConfig) -> Vec<Option<usize>> {
    let points: Vec<LatLon> = trace.iter().map(LocationSample::position).collect();
    let mv = moveability(trace, cfg.move_window, cfg.v_ref_mps);
    let weights: Vec<f64> = mv.iter().map(|m| 1.0 - m).collect();
    let grid = DensityGrid::new(&points, &weights, cfg.eps_m);
    let core: Vec<bool> = (0..trace.len()).map(|i| grid.density(i, &weights) >= cfg.min_pts as f64).collect();
    grid.cluster(&core)
}

/// Drops members farther than `eps` from the centroid until the set is stable.
fn trim(members: &mut Vec<usize>, trace: &[LocationSample], eps: f64) -> Option<LatLon> {
    loop {
        let c = centroid(members.iter().map(|&i| trace[i].position()))?;
        let before = members.len();
        members.retain(|&i| trace[i].position().distance_m(&c) <= eps);
        if members.len() == before {
            return Some(c);
        }
    }
}

/// Detects stays in a time-sorted trace. Visits to one place separated by
/// more than `max_gap_s`, by another place, or by a trip of at least
/// `min_pts` unclustered samples become separate points of interest.
pub fn detect_pois(trace: &[LocationSample], cfg: &PoiConfig) -> Vec<PointOfInterest> {
    if trace.len() < cfg.min_pts.max(2) {
        return Vec::new();
    }
    let labels = cluster(trace, cfg);
    let max_gap_ms = (cfg.max_gap_s * 1000.0).round() as i64;
    let min_stay_ms = (cfg.min_stay_s * 1000.0).round() as i64;

    let mut runs: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut current: Option<(usize, Vec<usize>)> = None;
    let mut noise_since_member = 0usize;
    for (i, label) in labels.iter().enumerate() {
        let Some(id) = *label else {
            noise_since_member += 1;
            continue;
        };
        let continues = match &current {
            Some((cid, members)) => {
                let last = *members.last().unwrap_or(&i);
                *cid == id && trace[i].t - trace[last].t <= max_gap_ms && noise_since_member < cfg.min_pts
            }
            None => false,
        };
        if continues {
            if let Some((_, members)) = current.as_mut() {
                members.push(i);
            }
        } else {
            if let Some(run) = current.take() {
                runs.push(run);
            }
            current = Some((id, vec![i]));
        }
        noise_since_member = 0;
    }
    runs.extend(current);

    let mut out = Vec::new();
    for (id, mut members) in runs {
        let Some(center) = trim(&mut members, trace, cfg.eps_m) else { continue };
        if members.len() < 2 {
            continue;
        }
        let arrive_t = trace[members[0]].t;
        let depart_t = trace[*members.last().unwrap_or(&members[0])].t;
        if depart_t - arrive_t < min_stay_ms || depart_t <= arrive_t {
            continue;
        }
        out.push(PointOfInterest {
            poi_id: format!("poi-{:05}", out.len()),
            cluster: id,
            center: Some(center),
            arrive_t,
            depart_t,
            category: None,
            member_points: members.len(),
            geohash: None,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithheldReason {
    InsufficientHistory,
    NoOvernightEvidence,
    NoWeekdayEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOutcome {
    Labeled { cluster: usize },
    Withheld { reason: WithheldReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeSchool {
    pub home: LabelOutcome,
    pub school: LabelOutcome,
}

pub fn parse_tz(name: &str) -> Result<Tz> {
    name.parse::<Tz>().map_err(|_| LocationError::TimeZone(name.to_string()))
}

fn local_instant(tz: Tz, date: NaiveDate, hour: u32) -> i64 {
    let naive = date.and_time(NaiveTime::from_hms_opt(hour, 0, 0).unwrap_or_default());
    match tz.from_local_datetime(&naive).earliest() {
        Some(dt) => dt.timestamp_millis(),
        // inside a spring-forward hole: the hour after exists
        None => tz
            .from_local_datetime(&(naive + Duration::hours(1)))
            .earliest()
            .map_or_else(|| naive.and_utc().timestamp_millis(), |dt| dt.timestamp_millis()),
    }
}

/// Milliseconds of `[from, to)` that fall between `start_h` and `end_h` local
/// time on days accepted by `day_filter`.
pub fn local_window_overlap(from: i64, to: i64, tz: Tz, start_h: u32, end_h: u32, day_filter: impl Fn(Weekday) -> bool) -> i64 {
    let (Some(a), Some(b)) = (DateTime::from_timestamp_millis(from), DateTime::from_timestamp_millis(to)) else {
        return 0;
    };
    let mut day = a.with_timezone(&tz).date_naive() - Duration::days(1);
    let last = b.with_timezone(&tz).date_naive();
    let mut total = 0;
    while day <= last {
        if day_filter(day.weekday()) {
            let ws = local_instant(tz, day, start_h);
            let we = local_instant(tz, day, end_h);
            total += (to.min(we) - from.max(ws)).max(0);
        }
        day += Duration::days(1);
    }
    total
}

fn is_weekday(d: Weekday) -> bool {
    !matches!(d, Weekday::Sat | Weekday::Sun)
}

/// Home is the cluster with the most 00:00-06:00 local dwell; school the
/// cluster (other than home) with the most weekday 08:00-16:00 dwell. Ties
/// go to the lower cluster id.
pub fn label_home_school(pois: &mut [PointOfInterest], tz: Tz, cfg: &PoiConfig) -> HomeSchool {
    let withheld = |reason| LabelOutcome::Withheld { reason };
    let first = pois.iter().map(|p| p.arrive_t).min();
    let last = pois.iter().map(|p| p.depart_t).max();
    let span_ms = match (first, last) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    };
    if (span_ms as f64) < cfg.min_history_days * 86_400_000.0 {
        let w = withheld(WithheldReason::InsufficientHistory);
        return HomeSchool { home: w, school: w };
    }
    let mut night: BTreeMap<usize, i64> = BTreeMap::new();
    let mut day: BTreeMap<usize, i64> = BTreeMap::new();
    for p in pois.iter() {
        *night.entry(p.cluster).or_default() += local_window_overlap(p.arrive_t, p.depart_t, tz, 0, 6, |_| true);
        *day.entry(p.cluster).or_default() += local_window_overlap(p.arrive_t, p.depart_t, tz, 8, 16, is_weekday);
    }
    let best = |m: &BTreeMap<usize, i64>, skip: Option<usize>| {
        m.iter()
            .filter(|(c, v)| **v > 0 && Some(**c) != skip)
            .fold(None::<(usize, i64)>, |acc, (c, v)| match acc {
                Some((_, bv)) if bv >= *v => acc,
                _ => Some((*c, *v)),
            })
            .map(|(c, _)| c)
    };
    let home = best(&night, None);
    let school = best(&day, home);
    for p in pois.iter_mut() {
        if Some(p.cluster) == home {
            p.category = Some(PoiCategory::Home);
        } else if Some(p.cluster) == school {
            p.category = Some(PoiCategory::School);
        }
    }
    HomeSchool {
        home: home.map_or(withheld(WithheldReason::NoOvernightEvidence), |cluster| LabelOutcome::Labeled { cluster }),
        school: school.map_or(withheld(WithheldReason::NoWeekdayEvidence), |cluster| LabelOutcome::Labeled { cluster }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub place_id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: PoiCategory,
}

/// Immutable spatial index over gazetteer entries.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    grid: GridIndex,
    radius_m: f64,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>, match_radius_m: f64) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !LatLon::new(e.lat, e.lon).is_valid() {
                return Err(LocationError::Gazetteer { row: i + 1, message: format!("coordinates ({}, {}) out of range", e.lat, e.lon) });
            }
            if !e.category.is_mappable() {
                return Err(LocationError::Gazetteer { row: i + 1, message: format!("category {} not allowed", e.category) });
            }
        }
        let points: Vec<LatLon> = entries.iter().map(|e| LatLon::new(e.lat, e.lon)).collect();
        let grid = GridIndex::new(&points, match_radius_m);
        Ok(Self { entries, grid, radius_m: match_radius_m })
    }

    pub fn from_csv_reader<R: Read>(reader: R, match_radius_m: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<GazetteerEntry>().enumerate() {
            entries.push(row.map_err(|e| LocationError::Gazetteer { row: i + 1, message: e.to_string() })?);
        }
        Self::new(entries, match_radius_m)
    }

    pub fn load(path: &Path, match_radius_m: f64) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|source| LocationError::Io { path: path.display().to_string(), source })?;
        Self::from_csv_reader(f, match_radius_m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nearest entry within the match radius; equal distances go to the smaller `place_id`.
    pub fn nearest(&self, p: LatLon) -> Option<&GazetteerEntry> {
        self.grid
            .candidates(p)
            .into_iter()
            .map(|i| (&self.entries[i], p.distance_m(&LatLon::new(self.entries[i].lat, self.entries[i].lon))))
            .filter(|(_, d)| *d <= self.radius_m)
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.place_id.cmp(&b.0.place_id)))
            .map(|(e, _)| e)
    }
}

/// Assigns the nearest gazetteer category, or `unknown`. PoIs without a center are left untouched.
pub fn categorize_poi(poi: &PointOfInterest, gazetteer: &Gazetteer) -> PointOfInterest {
    let mut out = poi.clone();
    if let Some(c) = poi.center {
        out.category = Some(gazetteer.nearest(c).map_or(PoiCategory::Unknown, |e| e.category));
    }
    out
}

/// Replaces the center with its geohash of record. Idempotent.
pub fn redact_coordinates(poi: &PointOfInterest, precision: usize) -> Result<PointOfInterest> {
    if poi.category.is_none() {
        return Err(LocationError::NotCategorized(poi.poi_id.clone()));
    }
    let mut out = poi.clone();
    if let Some(c) = out.center.take() {
        out.geohash = Some(geohash::encode(c.lat, c.lon, precision)?);
    }
    Ok(out)
}
