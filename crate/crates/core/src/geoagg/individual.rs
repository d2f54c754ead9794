//! Base series per subject and the indicator values derived from them.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, TimeZone};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::aggregate::{DailySeries, IndividualRecord};
use super::catalog::{category_group, RESIDENT_VISIT_GROUPS, VOTE_VISIT_GROUPS};
use super::geohash::Geohash;
use crate::activity::{ActivityLevel, ActivityType};
use crate::location::{PoiCategory, PointOfInterest};
use crate::sleep::SleepSession;
use crate::transport::{Trip, TransportMode};

/// One scored minute of accelerometer data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinuteRecord {
    pub minute_start: i64,
    pub counts: f64,
    pub steps: u32,
    pub level: ActivityLevel,
    pub activity_type: Option<ActivityType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndicatorConfig {
    pub min_day_hours: f64,
    /// A minute with at least this many steps counts as walking time.
    pub walking_steps_per_min: u32,
    /// Share of sedentary minutes at or above which sedentary behavior is flagged.
    pub sedentary_behavior_fraction: f64,
    /// Local hour that closes the after-school window.
    pub after_school_end_h: u32,
    /// Lowest activity-count cut point; a daily mean below it is a sedentary average level.
    pub sedentary_cut: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            min_day_hours: 8.0,
            walking_steps_per_min: 60,
            sedentary_behavior_fraction: 0.5,
            after_school_end_h: 21,
            sedentary_cut: 100.0,
        }
    }
}

pub fn local_day(t_ms: i64, tz: Tz) -> Option<NaiveDate> {
    DateTime::from_timestamp_millis(t_ms).map(|d| d.with_timezone(&tz).date_naive())
}

fn add(map: &mut BTreeMap<String, f64>, key: String, v: f64) {
    *map.entry(key).or_insert(0.0) += v;
}

/// Minute-level totals shared by the resident, visitor and vote views.
fn accumulate_minutes<'a>(values: &mut BTreeMap<String, f64>, minutes: impl IntoIterator<Item = &'a MinuteRecord>, cfg: &IndicatorConfig) -> usize {
    let mut n = 0;
    for l in ActivityLevel::ALL {
        values.entry(format!("level_min.{}", l.as_str())).or_insert(0.0);
    }
    for m in minutes {
        n += 1;
        add(values, "minutes".into(), 1.0);
        add(values, "counts".into(), m.counts);
        add(values, "steps".into(), f64::from(m.steps));
        add(values, format!("level_min.{}", m.level.as_str()), 1.0);
        if let Some(t) = m.activity_type {
            add(values, format!("type_min.{}", t.as_str()), 1.0);
        }
        if m.steps >= cfg.walking_steps_per_min {
            add(values, "walking_min".into(), 1.0);
        }
    }
    n
}

fn add_modes(values: &mut BTreeMap<String, f64>, trip: &Trip) {
    for (m, s) in trip.mode_seconds() {
        add(values, format!("mode_s.{}", m.as_str()), f64::from(s));
    }
}

fn in_group(cat: Option<PoiCategory>, group: &str) -> bool {
    match (cat, category_group(group)) {
        (Some(c), Some(g)) => g.contains(&c),
        _ => false,
    }
}

/// Whole-day series for the resident view, one entry per local day with data.
pub fn resident_days(
    minutes: &[MinuteRecord],
    pois: &[PointOfInterest],
    trips: &[Trip],
    sessions: &[SleepSession],
    tz: Tz,
    cfg: &IndicatorConfig,
) -> Vec<DailySeries> {
    let mut by_day: BTreeMap<NaiveDate, Vec<&MinuteRecord>> = BTreeMap::new();
    for m in minutes {
        if let Some(d) = local_day(m.minute_start, tz) {
            by_day.entry(d).or_default().push(m);
        }
    }
    let mut out = Vec::with_capacity(by_day.len());
    for (day, mins) in &by_day {
        let mut values = BTreeMap::new();
        let n = accumulate_minutes(&mut values, mins.iter().copied(), cfg);
        values.insert("walking_min".into(), values.get("walking_min").copied().unwrap_or(0.0));

        // after-school sedentary time: from each school departure to the local cutoff
        let cutoff = day
            .and_hms_opt(cfg.after_school_end_h.min(23), 0, 0)
            .and_then(|t| tz.from_local_datetime(&t).earliest())
            .map(|t| t.timestamp_millis());
        let school_departures: Vec<i64> = pois
            .iter()
            .filter(|p| p.category == Some(PoiCategory::School) && local_day(p.depart_t, tz) == Some(*day))
            .map(|p| p.depart_t)
            .collect();
        if let (Some(&from), Some(to)) = (school_departures.iter().max(), cutoff) {
            let sed = mins
                .iter()
                .filter(|m| m.minute_start >= from && m.minute_start < to && m.level == ActivityLevel::Sedentary)
                .count();
            values.insert("school_day".into(), 1.0);
            values.insert("sedentary_after_school_min".into(), sed as f64);
        }

        let ending: Vec<&SleepSession> = sessions.iter().filter(|s| local_day(s.se, tz) == Some(*day)).collect();
        if !ending.is_empty() {
            values.insert("sleep_night".into(), 1.0);
            values.insert("sleep_min".into(), ending.iter().map(|s| s.nst_min).sum());
        }

        for g in RESIDENT_VISIT_GROUPS {
            let k = pois.iter().filter(|p| local_day(p.arrive_t, tz) == Some(*day) && in_group(p.category, g)).count();
            values.insert(format!("visits.{g}"), k as f64);
        }
        for t in trips.iter().filter(|t| local_day(t.start_t, tz) == Some(*day)) {
            add_modes(&mut values, t);
        }

        let hours = n as f64 / 60.0;
        let samples = BTreeMap::from([("counts".to_string(), mins.iter().map(|m| m.counts).collect())]);
        out.push(DailySeries { day: day.to_string(), recorded_hours: hours, exposure_hours: hours, values, samples });
    }
    out
}

/// Daily series restricted to the time spent at places encoded to `geohash`.
/// Days keep their full recording time for the validity filter.
pub fn visitor_days(
    minutes: &[MinuteRecord],
    pois: &[PointOfInterest],
    trips: &[Trip],
    geohash: &Geohash,
    tz: Tz,
    cfg: &IndicatorConfig,
) -> Vec<DailySeries> {
    let visits: Vec<&PointOfInterest> =
        pois.iter().filter(|p| p.geohash.as_ref().is_some_and(|g| geohash.is_prefix_of(g))).collect();
    let mut recorded: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    let mut inside: BTreeMap<NaiveDate, Vec<&MinuteRecord>> = BTreeMap::new();
    for m in minutes {
        let Some(d) = local_day(m.minute_start, tz) else { continue };
        *recorded.entry(d).or_default() += 1;
        if visits.iter().any(|p| m.minute_start >= p.arrive_t && m.minute_start < p.depart_t) {
            inside.entry(d).or_default().push(m);
        }
    }
    let mut out = Vec::new();
    for (day, mins) in inside {
        let mut values = BTreeMap::new();
        let n = accumulate_minutes(&mut values, mins.iter().copied(), cfg);
        for p in visits.iter().filter(|p| local_day(p.arrive_t, tz) == Some(day)) {
            for t in trips.iter().filter(|t| t.dest_poi.as_deref() == Some(p.poi_id.as_str())) {
                add_modes(&mut values, t);
            }
        }
        out.push(DailySeries {
            day: day.to_string(),
            recorded_hours: recorded[&day] as f64 / 60.0,
            exposure_hours: n as f64 / 60.0,
            values,
            samples: BTreeMap::from([("counts".to_string(), mins.iter().map(|m| m.counts).collect())]),
        });
    }
    out
}

fn shares(values: &BTreeMap<String, f64>, prefix: &str, suffix: &str, out_prefix: &str, out: &mut BTreeMap<String, f64>) {
    let parts: Vec<(&str, f64)> = values
        .iter()
        .filter_map(|(k, v)| Some((k.strip_prefix(prefix)?.strip_suffix(suffix)?, *v)))
        .collect();
    let total: f64 = parts.iter().map(|(_, v)| v).sum();
    if total > 0.0 {
        for (name, v) in parts {
            out.insert(format!("{out_prefix}.{name}"), v / total);
        }
    }
}

fn level_and_modes(values: &BTreeMap<String, f64>, suffix: &str, cfg: &IndicatorConfig, out: &mut BTreeMap<String, f64>) {
    shares(values, "level_min.", suffix, "level_frac", out);
    if let Some(s) = out.get("level_frac.sedentary") {
        out.insert("sedentary_behavior".into(), f64::from(u8::from(*s >= cfg.sedentary_behavior_fraction)));
    }
    shares(values, "mode_s.", suffix, "mode_frac", out);
}

/// Resident-axis indicators from a subject's aggregated record.
pub fn resident_indicators(rec: &IndividualRecord, cfg: &IndicatorConfig) -> BTreeMap<String, f64> {
    let v = &rec.values;
    let get = |k: &str| v.get(k).copied();
    let mut out = BTreeMap::new();
    if let Some(s) = get("steps_per_day") {
        out.insert("daily_steps".into(), s);
    }
    if let (Some(s), Some(d)) = (get("sedentary_after_school_min_per_day"), get("school_day_per_day")) {
        if d > 0.0 {
            out.insert("sedentary_min_after_school".into(), s / d);
        }
    }
    if let (Some(s), Some(d)) = (get("sleep_min_per_day"), get("sleep_night_per_day")) {
        if d > 0.0 {
            out.insert("sleep_duration_min".into(), s / d);
        }
    }
    shares(v, "type_min.", "_per_day", "type_frac", &mut out);
    if let (Some(c), Some(m)) = (get("counts_per_day"), get("minutes_per_day")) {
        if m > 0.0 {
            out.insert("sedentary_average_level".into(), f64::from(u8::from(c / m < cfg.sedentary_cut)));
        }
    }
    if let Some(w) = get("walking_min_per_day") {
        out.insert("walking_60min".into(), f64::from(u8::from(w >= 60.0)));
    }
    for g in RESIDENT_VISIT_GROUPS {
        if let Some(x) = get(&format!("visits.{g}_per_day")) {
            out.insert(format!("weekly_visits.{g}"), x * 7.0);
        }
    }
    shares(v, "mode_s.", "_per_day", "mode_frac", &mut out);
    out
}

/// Visitor-axis indicators from a subject's record for one geohash.
pub fn visitor_indicators(rec: &IndividualRecord, cfg: &IndicatorConfig) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(c) = rec.values.get("counts_per_hour") {
        out.insert("counts_per_minute".into(), c / 60.0);
    }
    if let Some(s) = rec.values.get("steps_per_hour") {
        out.insert("steps_per_hour".into(), *s);
    }
    level_and_modes(&rec.values, "_per_day", cfg, &mut out);
    out
}

/// Payload of one vote: indicators over the visit's minutes, the visited
/// category flags and the arriving trip's mode shares.
pub fn visit_payload(
    visit: &PointOfInterest,
    minutes: &[MinuteRecord],
    arriving: Option<&Trip>,
    cfg: &IndicatorConfig,
) -> BTreeMap<String, f64> {
    let mut values = BTreeMap::new();
    let inside = minutes.iter().filter(|m| m.minute_start >= visit.arrive_t && m.minute_start < visit.depart_t);
    let n = accumulate_minutes(&mut values, inside, cfg);
    if let Some(t) = arriving {
        add_modes(&mut values, t);
    }
    let mut out = BTreeMap::new();
    if n > 0 {
        out.insert("counts_per_minute".into(), values["counts"] / n as f64);
        out.insert("steps_per_hour".into(), values["steps"] * 60.0 / n as f64);
    }
    level_and_modes(&values, "", cfg, &mut out);
    for g in VOTE_VISIT_GROUPS {
        out.insert(format!("visit.{g}"), f64::from(u8::from(in_group(visit.category, g))));
    }
    out
}

/// Adds zero shares for classes absent from a distribution so that every
/// vote or record carries the same keys.
pub fn complete_distributions(values: &mut BTreeMap<String, f64>) {
    let groups: [(&str, Vec<&str>); 3] = [
        ("level_frac", ActivityLevel::ALL.iter().map(|l| l.as_str()).collect()),
        ("type_frac", ActivityType::ALL.iter().map(|t| t.as_str()).collect()),
        ("mode_frac", TransportMode::ALL.iter().map(|m| m.as_str()).collect()),
    ];
    for (prefix, names) in groups {
        if values.keys().any(|k| k.starts_with(&format!("{prefix}."))) {
            for n in names {
                values.entry(format!("{prefix}.{n}")).or_insert(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoagg::aggregate::{aggregate_individual, ScopeKind};
    use crate::geoagg::geohash::encode;

    const T0: i64 = 1_704_067_200_000; // 2024-01-01 00:00 UTC, a Monday

    fn minute(i: i64, steps: u32, level: ActivityLevel) -> MinuteRecord {
        MinuteRecord { minute_start: T0 + i * 60_000, counts: if level == ActivityLevel::Sedentary { 20.0 } else { 2500.0 }, steps, level, activity_type: None }
    }

    fn poi(id: &str, cat: PoiCategory, from_min: i64, to_min: i64) -> PointOfInterest {
        PointOfInterest {
            poi_id: id.into(),
            cluster: 0,
            center: None,
            arrive_t: T0 + from_min * 60_000,
            depart_t: T0 + to_min * 60_000,
            category: Some(cat),
            member_points: 10,
            geohash: Some(encode(40.6, 22.9, 7).unwrap()),
        }
    }

    fn day_minutes() -> Vec<MinuteRecord> {
        // 06:00-22:00: 90 walking minutes in the morning, the rest sedentary
        (360..1320)
            .map(|i| if i < 450 { minute(i, 100, ActivityLevel::Vigorous) } else { minute(i, 0, ActivityLevel::Sedentary) })
            .collect()
    }

    #[test]
    fn resident_day_totals() {
        let pois = [poi("s", PoiCategory::School, 480, 900), poi("p", PoiCategory::Park, 960, 1000)];
        let days = resident_days(&day_minutes(), &pois, &[], &[], chrono_tz::UTC, &IndicatorConfig::default());
        assert_eq!(days.len(), 1);
        let v = &days[0].values;
        assert_eq!(days[0].recorded_hours, 16.0);
        assert_eq!(v["steps"], 9000.0);
        assert_eq!(v["walking_min"], 90.0);
        // school ends 15:00, cutoff 21:00, all sedentary
        assert_eq!(v["sedentary_after_school_min"], 360.0);
        assert_eq!(v["visits.park"], 1.0);
        assert_eq!(v["visits.cafe"], 0.0);

        let rec = aggregate_individual(&days, ScopeKind::Resident, None, 8.0, &BTreeMap::new()).unwrap();
        let ind = resident_indicators(&rec, &IndicatorConfig::default());
        assert_eq!(ind["daily_steps"], 9000.0);
        assert_eq!(ind["walking_60min"], 1.0);
        assert_eq!(ind["weekly_visits.park"], 7.0);
        assert_eq!(ind["sedentary_min_after_school"], 360.0);
        // mean counts (90*2500 + 870*20)/960 = 252.5 → not sedentary on average
        assert_eq!(ind["sedentary_average_level"], 0.0);
    }

    #[test]
    fn vote_payload_flags_and_rates() {
        let park = poi("p", PoiCategory::Park, 400, 460);
        let p = visit_payload(&park, &day_minutes(), None, &IndicatorConfig::default());
        assert_eq!(p["visit.park"], 1.0);
        assert_eq!(p["visit.food_related"], 0.0);
        // 50 minutes at 100 steps, 10 sedentary
        assert!((p["steps_per_hour"] - 5000.0).abs() < 1e-9);
        assert!((p["level_frac.vigorous"] - 50.0 / 60.0).abs() < 1e-12);
        assert_eq!(p["sedentary_behavior"], 0.0);
        assert!(!p.keys().any(|k| k.split(['.', '_']).any(|w| w == "lat" || w == "lon")));
    }

    #[test]
    fn visitor_days_keep_full_day_validity() {
        let mins = day_minutes();
        let park = poi("p", PoiCategory::Park, 400, 460);
        let gh = park.geohash.clone().unwrap();
        let days = visitor_days(&mins, &[park], &[], &gh, chrono_tz::UTC, &IndicatorConfig::default());
        assert_eq!(days.len(), 1);
        assert_eq!(days[0].recorded_hours, 16.0);
        assert_eq!(days[0].exposure_hours, 1.0);
        let rec = aggregate_individual(&days, ScopeKind::Visitor, Some(gh), 8.0, &BTreeMap::new()).unwrap();
        let ind = visitor_indicators(&rec, &IndicatorConfig::default());
        assert!((ind["steps_per_hour"] - 5000.0).abs() < 1e-9);
        assert!((ind["counts_per_minute"] - (50.0 * 2500.0 + 10.0 * 20.0) / 60.0).abs() < 1e-9);
    }

    #[test]
    fn distributions_are_completed() {
        let mut v = BTreeMap::from([("mode_frac.bus".to_string(), 1.0)]);
        complete_distributions(&mut v);
        assert_eq!(v.len(), TransportMode::ALL.len());
    }
}
