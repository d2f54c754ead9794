//! Individual and population aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geohash::Geohash;
use super::votes::GeohashVote;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no valid days: {0}")]
    NoValidDays(String),
    #[error("histogram edges must be strictly increasing and at least two")]
    BadEdges,
}

/// Error-free running sum: keeps non-overlapping partials so the total is
/// the correctly rounded exact sum regardless of order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded value of the exact sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else { return 0.0 };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Bin counts over `edges`: bin i holds `edges[i] <= v < edges[i+1]`; the
/// last bin also takes values equal to its upper edge. Values outside are dropped.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<u64>, AggregateError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AggregateError::BadEdges);
    }
    let nb = edges.len() - 1;
    let mut bins = vec![0u64; nb];
    for &v in values {
        if v.is_nan() || v < edges[0] || v > edges[nb] {
            continue;
        }
        let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(nb - 1);
        bins[idx] += 1;
    }
    Ok(bins)
}

/// One local day of base series for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub day: String,
    /// Total accelerometer recording time that day; drives the validity filter.
    pub recorded_hours: f64,
    /// Time the values refer to (the whole day for residents, time inside the
    /// geohash for visitors); rates are normalized by it.
    pub exposure_hours: f64,
    pub values: BTreeMap<String, f64>,
    /// Per-sample series for histograms, e.g. per-minute counts.
    #[serde(default)]
    pub samples: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Visitor,
    Resident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub scope: ScopeKind,
    pub geohash: Option<Geohash>,
    pub valid_days: usize,
    /// `<key>_per_hour` (mean of daily rates) and `<key>_per_day` (mean of daily totals).
    pub values: BTreeMap<String, f64>,
    pub histograms: BTreeMap<String, Vec<u64>>,
}

/// Combines a subject's days into one record; days below `min_day_hours` of
/// recording are dropped first.
pub fn aggregate_individual(
    days: &[DailySeries],
    scope: ScopeKind,
    geohash: Option<Geohash>,
    min_day_hours: f64,
    edges: &BTreeMap<String, Vec<f64>>,
) -> Result<IndividualRecord, AggregateError> {
    let valid: Vec<&DailySeries> = days.iter().filter(|d| d.recorded_hours >= min_day_hours).collect();
    if valid.is_empty() {
        return Err(AggregateError::NoValidDays(format!(
            "{} day(s) supplied, none with at least {min_day_hours} h of recording",
            days.len()
        )));
    }
    let keys: BTreeSet<&String> = valid.iter().flat_map(|d| d.values.keys()).collect();
    let n = valid.len() as f64;
    let mut values = BTreeMap::new();
    for key in keys {
        let mut per_day = ExactSum::default();
        let mut per_hour = ExactSum::default();
        let mut rate_days = 0usize;
        for d in &valid {
            let v = d.values.get(key).copied().unwrap_or(0.0);
            per_day.add(v);
            if d.exposure_hours > 0.0 {
                per_hour.add(v / d.exposure_hours);
                rate_days += 1;
            }
        }
        values.insert(format!("{key}_per_day"), per_day.value() / n);
        if rate_days > 0 {
            values.insert(format!("{key}_per_hour"), per_hour.value() / rate_days as f64);
        }
    }
    let mut histograms = BTreeMap::new();
    for (key, e) in edges {
        let all: Vec<f64> = valid.iter().flat_map(|d| d.samples.get(key).into_iter().flatten().copied()).collect();
        histograms.insert(key.clone(), histogram(&all, e)?);
    }
    Ok(IndividualRecord { scope, geohash, valid_days: valid.len(), values, histograms })
}

/// One contribution to a population cell: a vote, or one individual's record.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub geohash: Geohash,
    pub voter: String,
    pub values: BTreeMap<String, f64>,
}

impl From<&GeohashVote> for Contribution {
    fn from(v: &GeohashVote) -> Self {
        Self { geohash: v.gh.clone(), voter: v.voter.clone(), values: v.payload.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorStats {
    pub n: usize,
    pub sum: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<u64>>,
    #[serde(skip)]
    exact: ExactSum,
}

impl IndicatorStats {
    fn finish(&mut self) {
        self.sum = self.exact.value();
        self.mean = if self.n > 0 { self.sum / self.n as f64 } else { f64::NAN };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub geohash: Geohash,
    pub n_votes: usize,
    pub n_voters: usize,
    pub stats: BTreeMap<String, IndicatorStats>,
    pub k_anon: usize,
    pub published: bool,
    #[serde(skip)]
    voters: BTreeSet<String>,
    #[serde(skip)]
    raw: BTreeMap<String, Vec<f64>>,
}

impl AggregateCell {
    fn empty(geohash: Geohash, k_anon: usize) -> Self {
        Self {
            geohash,
            n_votes: 0,
            n_voters: 0,
            stats: BTreeMap::new(),
            k_anon,
            published: false,
            voters: BTreeSet::new(),
            raw: BTreeMap::new(),
        }
    }

    fn push(&mut self, c: &Contribution) {
        self.n_votes += 1;
        self.voters.insert(c.voter.clone());
        for (k, &v) in &c.values {
            let s = self.stats.entry(k.clone()).or_insert_with(|| IndicatorStats {
                n: 0,
                sum: 0.0,
                mean: f64::NAN,
                histogram: None,
                exact: ExactSum::default(),
            });
            s.n += 1;
            s.exact.add(v);
            self.raw.entry(k.clone()).or_default().push(v);
        }
    }

    fn finish(&mut self, edges: &BTreeMap<String, Vec<f64>>) -> Result<(), AggregateError> {
        self.n_voters = self.voters.len();
        self.published = self.n_voters >= self.k_anon;
        for (k, s) in self.stats.iter_mut() {
            s.finish();
            if let Some(e) = edges.get(k) {
                s.histogram = Some(histogram(self.raw.get(k).map(Vec::as_slice).unwrap_or(&[]), e)?);
            }
        }
        Ok(())
    }

    /// Drops the statistics of a suppressed cell, keeping only its counts.
    pub fn redact_if_suppressed(&mut self) {
        if !self.published {
            self.stats.clear();
            self.raw.clear();
        }
    }

    /// Re-evaluates publication under a different threshold.
    pub fn with_k_anon(mut self, k_anon: usize) -> Self {
        self.k_anon = k_anon;
        self.published = self.n_voters >= k_anon;
        self
    }
}

/// Aggregates the contributions under `region`; contributions outside it are ignored.
pub fn aggregate_population(
    contributions: &[Contribution],
    region: &Geohash,
    k_anon: usize,
    edges: &BTreeMap<String, Vec<f64>>,
) -> Result<AggregateCell, AggregateError> {
    let mut cell = AggregateCell::empty(region.clone(), k_anon);
    for c in contributions.iter().filter(|c| region.is_prefix_of(&c.geohash)) {
        cell.push(c);
    }
    cell.finish(edges)?;
    Ok(cell)
}

/// One cell per distinct prefix of length `precision`.
pub fn aggregate_grid(
    contributions: &[Contribution],
    precision: usize,
    k_anon: usize,
    edges: &BTreeMap<String, Vec<f64>>,
) -> Result<BTreeMap<Geohash, AggregateCell>, AggregateError> {
    let mut cells: BTreeMap<Geohash, AggregateCell> = BTreeMap::new();
    for c in contributions {
        let key = c.geohash.truncate(precision);
        cells.entry(key.clone()).or_insert_with(|| AggregateCell::empty(key, k_anon)).push(c);
    }
    for cell in cells.values_mut() {
        cell.finish(edges)?;
    }
    Ok(cells)
}

/// Merges child cells into their common parent without revisiting the votes.
pub fn roll_up(
    children: &[AggregateCell],
    parent: &Geohash,
    k_anon: usize,
    edges: &BTreeMap<String, Vec<f64>>,
) -> Result<AggregateCell, AggregateError> {
    let mut cell = AggregateCell::empty(parent.clone(), k_anon);
    for child in children.iter().filter(|c| parent.is_prefix_of(&c.geohash)) {
        cell.n_votes += child.n_votes;
        cell.voters.extend(child.voters.iter().cloned());
        for (k, s) in &child.stats {
            let t = cell.stats.entry(k.clone()).or_insert_with(|| IndicatorStats {
                n: 0,
                sum: 0.0,
                mean: f64::NAN,
                histogram: None,
                exact: ExactSum::default(),
            });
            t.n += s.n;
            t.exact.merge(&s.exact);
        }
        for (k, v) in &child.raw {
            cell.raw.entry(k.clone()).or_default().extend_from_slice(v);
        }
    }
    cell.finish(edges)?;
    Ok(cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(name: &str, hours: f64, steps: f64) -> DailySeries {
        DailySeries {
            day: name.into(),
            recorded_hours: hours,
            exposure_hours: hours,
            values: BTreeMap::from([("steps".to_string(), steps)]),
            samples: BTreeMap::new(),
        }
    }

    fn contrib(gh: &str, voter: &str, v: f64) -> Contribution {
        Contribution {
            geohash: Geohash::parse(gh).unwrap(),
            voter: voter.into(),
            values: BTreeMap::from([("steps_per_hour".to_string(), v)]),
        }
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let xs = [1e100, 1.0, -1e100, 1e-3, 3.0];
        let mut a = ExactSum::default();
        xs.iter().for_each(|&x| a.add(x));
        let mut b = ExactSum::default();
        xs.iter().rev().for_each(|&x| b.add(x));
        assert_eq!(a.value(), 4.001);
        assert_eq!(b.value(), 4.001);
        let mut c = ExactSum::default();
        (0..10).for_each(|_| c.add(0.1));
        assert_eq!(c.value(), 1.0);
    }

    #[test]
    fn per_hour_rate_is_the_mean_of_daily_rates() {
        let r = aggregate_individual(&[day("d1", 10.0, 600.0), day("d2", 12.0, 1200.0)], ScopeKind::Resident, None, 8.0, &BTreeMap::new()).unwrap();
        assert_eq!(r.values["steps_per_hour"], 80.0);
        assert_eq!(r.values["steps_per_day"], 900.0);
        assert_eq!(r.valid_days, 2);
    }

    #[test]
    fn short_days_are_excluded() {
        let r = aggregate_individual(&[day("d1", 5.0, 5000.0), day("d2", 10.0, 600.0)], ScopeKind::Resident, None, 8.0, &BTreeMap::new()).unwrap();
        assert_eq!(r.valid_days, 1);
        assert_eq!(r.values["steps_per_hour"], 60.0);
        let err = aggregate_individual(&[day("d1", 5.0, 5000.0)], ScopeKind::Resident, None, 8.0, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, AggregateError::NoValidDays(_)));
    }

    #[test]
    fn level_histogram_matches_a_tally() {
        let counts: Vec<f64> = (0..1440).map(|m| ((m * 37) % 5000) as f64).collect();
        let edges = vec![0.0, 100.0, 1800.0, 4000.0, f64::MAX];
        let mut d = day("d", 24.0, 0.0);
        d.samples.insert("counts".into(), counts.clone());
        let r = aggregate_individual(&[d], ScopeKind::Resident, None, 8.0, &BTreeMap::from([("counts".to_string(), edges)])).unwrap();
        let mut tally = [0u64; 4];
        for c in counts {
            let i = if c < 100.0 { 0 } else if c < 1800.0 { 1 } else if c < 4000.0 { 2 } else { 3 };
            tally[i] += 1;
        }
        assert_eq!(r.histograms["counts"], tally.to_vec());
    }

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram(&[0.0, 1.0, 2.0, 3.0, -1.0, f64::NAN], &[0.0, 1.0, 3.0]).unwrap(), vec![1, 3]);
        assert_eq!(histogram(&[], &[1.0, 1.0]), Err(AggregateError::BadEdges));
    }

    #[test]
    fn two_voters_published_at_k2() {
        let cs = [contrib("sx0b1c2", "a", 2.0), contrib("sx0b1c2", "b", 4.0)];
        let cell = aggregate_population(&cs, &Geohash::parse("sx0b1c2").unwrap(), 2, &BTreeMap::new()).unwrap();
        assert_eq!(cell.stats["steps_per_hour"].mean, 3.0);
        assert!(cell.published);
    }

    #[test]
    fn three_voters_suppressed_at_k5() {
        let cs: Vec<_> = ["a", "b", "c", "c"].iter().map(|v| contrib("sx0b1c2", v, 1.0)).collect();
        let cell = aggregate_population(&cs, &Geohash::parse("sx0b").unwrap(), 5, &BTreeMap::new()).unwrap();
        assert_eq!((cell.n_votes, cell.n_voters), (4, 3));
        assert!(!cell.published);
        let mut redacted = cell.clone();
        redacted.redact_if_suppressed();
        assert!(redacted.stats.is_empty());
        assert_eq!(redacted.n_voters, 3);
        let mut open = cell.with_k_anon(3);
        open.redact_if_suppressed();
        assert!(!open.stats.is_empty());
    }

    #[test]
    fn region_filter_and_serialized_cell_hides_voters() {
        let cs = [contrib("sx0b1c2", "secret-voter", 1.0), contrib("u4pruyd", "b", 9.0)];
        let cell = aggregate_population(&cs, &Geohash::parse("sx0").unwrap(), 1, &BTreeMap::new()).unwrap();
        assert_eq!(cell.n_votes, 1);
        assert!(!serde_json::to_string(&cell).unwrap().contains("secret-voter"));
    }

    fn arb_contributions() -> impl Strategy<Value = Vec<Contribution>> {
        let gh = proptest::collection::vec(proptest::sample::select(b"0123456789bcdefghjkmnpqrstuvwxyz".to_vec()), 7);
        proptest::collection::vec((gh, 0u8..12, -1e6..1e6f64), 1..120).prop_map(|rows| {
            rows.into_iter()
                .map(|(code, voter, v)| {
                    // two shared leading characters keep parents populated
                    let mut code = code;
                    code[0] = b's';
                    code[1] = b'x';
                    contrib(std::str::from_utf8(&code).unwrap(), &format!("v{voter}"), v)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn children_roll_up_exactly(cs in arb_contributions(), p in 2usize..7) {
            let edges = BTreeMap::new();
            let children = aggregate_grid(&cs, p + 1, 5, &edges).unwrap();
            let parents = aggregate_grid(&cs, p, 5, &edges).unwrap();
            for (gh, parent) in &parents {
                let kids: Vec<AggregateCell> = children.values().filter(|c| gh.is_prefix_of(&c.geohash)).cloned().collect();
                let rolled = roll_up(&kids, gh, 5, &edges).unwrap();
                prop_assert_eq!(rolled.stats["steps_per_hour"].sum, parent.stats["steps_per_hour"].sum);
                prop_assert_eq!(rolled.n_votes, parent.n_votes);
                prop_assert_eq!(rolled.n_voters, parent.n_voters);
                let direct = aggregate_population(&cs, gh, 5, &edges).unwrap();
                prop_assert_eq!(direct.stats["steps_per_hour"].sum, parent.stats["steps_per_hour"].sum);
            }
        }

        #[test]
        fn mean_times_count_is_sum(cs in arb_contributions(), p in 1usize..8) {
            for cell in aggregate_grid(&cs, p, 5, &BTreeMap::new()).unwrap().values() {
                let s = &cell.stats["steps_per_hour"];
                prop_assert_eq!(s.n, cell.n_votes);
                let lhs = s.mean * cell.n_votes as f64;
                prop_assert!((lhs - s.sum).abs() <= 1e-9 * s.sum.abs().max(1.0));
            }
        }

        #[test]
        fn raising_k_never_publishes(cs in arb_contributions(), p in 1usize..8, k in 1usize..10, dk in 0usize..10) {
            for cell in aggregate_grid(&cs, p, k, &BTreeMap::new()).unwrap().into_values() {
                let was = cell.published;
                let raised = cell.with_k_anon(k + dk);
                prop_assert!(!raised.published || was);
            }
        }
    }
}
