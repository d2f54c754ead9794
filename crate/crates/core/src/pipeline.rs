//! Per-subject extraction (base indicators) and aggregation (individual and
//! population indicators) built from the module operations.

use std::collections::{BTreeMap, BTreeSet};

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::{
    train_type_model, ActivityType,
    activity_counts, classify_level, classify_type, count_steps, extract_type_features, validate_cut_points, ActivityCounts,
    ActivityError, StepConfig, COUNT_UNIT_SCALE, DEFAULT_CUT_POINTS,
};
use crate::eval::{
    confusion, match_pois, sleep_eval, step_error, EvalError, EvalReport, MatchThresholds, PoiMatchResult, RecordingPair, StaySpan, TruthSession,
    StepRecord,
};
use crate::geo::LatLon;
use crate::geoagg::aggregate::{aggregate_grid, aggregate_individual, AggregateCell, AggregateError, Contribution, IndividualRecord, ScopeKind};
use crate::geoagg::geohash::Geohash;
use crate::geoagg::graph::{build_mobility_graph, MobilityGraph};
use crate::geoagg::individual::{
    complete_distributions, local_day, resident_days, resident_indicators, visit_payload, visitor_days, visitor_indicators,
    IndicatorConfig, MinuteRecord,
};
use crate::geoagg::votes::{cast_vote, split_visit, GeohashVote, VoteError};
use crate::ingest::{compute_coverage, resample_with_gap, window, window_on_grid, AccelStream, CoverageMap, DeviceProfile, IngestError, LocationStream, CANONICAL_RATE_HZ, DEFAULT_ACCEL_GAP_S};
use crate::location::{categorize_poi, label_home_school, redact_coordinates, Gazetteer, HomeSchool, LocationError, PoiCategory, PoiConfig, PointOfInterest};
use crate::ml::kernel::RbfParams;
use crate::ml::linear::LinearParams;
use crate::model::ModelFile;
use crate::sleep::{exclude_non_wear, score_epochs, segment_sessions, ColeParams, Scorer, SleepConfig, SleepError, SleepSession};
use crate::sim::{activity_window, transport_window, Truth};
use crate::transport::{extract_transport_features, train_transport, classify_trip, segment_trips, SkippedTrip, TransportConfig, TransportError, TransportMode, Trip};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Activity(#[from] ActivityError),
    #[error(transparent)]
    Sleep(#[from] SleepError),
    #[error(transparent)]
    Location(#[from] LocationError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Sleep defaults for ActiGraph-like counts: the Cole weights are divided by 100.
pub fn default_sleep_config() -> SleepConfig {
    SleepConfig { cole: ColeParams { scale: 0.00001, ..ColeParams::default() }, ..SleepConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub accel_gap_s: f64,
    pub canonical_rate_hz: f64,
    /// Multiplies raw minute counts before levels, sleep scoring and output.
    pub count_scale: f64,
    pub cut_points: [f64; 3],
    pub steps: StepConfig,
    pub sleep: SleepConfig,
    /// Scorers to run; the first one feeds the aggregated sleep indicators.
    pub scorers: Vec<Scorer>,
    pub poi: PoiConfig,
    pub transport: TransportConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            accel_gap_s: DEFAULT_ACCEL_GAP_S,
            canonical_rate_hz: CANONICAL_RATE_HZ,
            count_scale: COUNT_UNIT_SCALE,
            cut_points: DEFAULT_CUT_POINTS,
            steps: StepConfig::default(),
            sleep: default_sleep_config(),
            scorers: vec![Scorer::Cole, Scorer::Sadeh],
            poi: PoiConfig::default(),
            transport: TransportConfig::default(),
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        validate_cut_points(self.cut_points)?;
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.count_scale > 0.0 && self.count_scale.is_finite()) {
            return bad("count_scale must be positive");
        }
        if !(self.canonical_rate_hz > 0.0) {
            return bad("canonical_rate_hz must be positive");
        }
        if self.scorers.is_empty() {
            return bad("at least one sleep scorer is required");
        }
        if self.transport.median_width == 0 || self.transport.median_width.is_multiple_of(2) {
            return bad("transport.median_width must be odd");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Models {
    pub activity_type: Option<ModelFile>,
    pub transport: Option<ModelFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSession {
    pub scorer: Scorer,
    #[serde(flatten)]
    pub session: SleepSession,
}

/// Base indicators of one subject. Places carry geohashes, never coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectExtract {
    pub schema_version: u32,
    pub subject: String,
    pub timezone: String,
    pub device: Option<DeviceProfile>,
    pub minutes: Vec<MinuteRecord>,
    pub sleep: Vec<ScoredSession>,
    pub pois: Vec<PointOfInterest>,
    pub trips: Vec<Trip>,
    pub skipped_trips: Vec<SkippedTrip>,
    pub home_school: Option<HomeSchool>,
    pub warnings: Vec<String>,
}

impl SubjectExtract {
    /// Sessions of the given scorer.
    pub fn sessions(&self, scorer: Scorer) -> Vec<SleepSession> {
        self.sleep.iter().filter(|s| s.scorer == scorer).map(|s| s.session).collect()
    }
}

/// Extraction result plus the places before redaction, for evaluation only.
#[derive(Debug, Clone)]
pub struct DetailedExtract {
    pub extract: SubjectExtract,
    pub unredacted_pois: Vec<PointOfInterest>,
}

fn minute_records(
    stream: &AccelStream,
    models: &Models,
    cfg: &ExtractConfig,
    warnings: &mut Vec<String>,
) -> Result<(Vec<MinuteRecord>, Vec<ActivityCounts>)> {
    let windows = window_on_grid(stream, 60.0, 60.0, 60_000)?;
    if windows.flagged() > 0 {
        warnings.push(format!("{} minute windows straddle a recording gap", windows.flagged()));
    }
    let frames = &windows.frames;
    let counts: Vec<ActivityCounts> = activity_counts(frames)?
        .into_iter()
        .map(|c| ActivityCounts { minute_start: c.minute_start, counts: c.counts * cfg.count_scale })
        .collect();
    let profile = stream.device_profile.unwrap_or(DeviceProfile::Smartphone);
    let steps = count_steps(frames, profile, &cfg.steps)?;
    let worn = exclude_non_wear(&counts, &cfg.sleep);
    let worn_set: BTreeSet<i64> = worn.iter().map(|c| c.minute_start).collect();
    let mut out = Vec::with_capacity(worn.len());
    for ((f, c), s) in frames.iter().zip(&counts).zip(&steps) {
        if !worn_set.contains(&c.minute_start) {
            continue;
        }
        let activity_type = match &models.activity_type {
            Some(m) => Some(classify_type(f.start_ms, &extract_type_features(f)?, m)?.label),
            None => None,
        };
        out.push(MinuteRecord {
            minute_start: c.minute_start,
            counts: c.counts,
            steps: s.steps,
            level: classify_level(c.counts, cfg.cut_points)?,
            activity_type,
        });
    }
    Ok((out, worn))
}

/// Runs every base-indicator algorithm whose inputs are present.
pub fn extract_subject(
    subject: &str,
    accel: Option<&AccelStream>,
    location: Option<&LocationStream>,
    tz: Tz,
    models: &Models,
    gazetteer: Option<&Gazetteer>,
    cfg: &ExtractConfig,
) -> Result<DetailedExtract> {
    cfg.validate()?;
    let mut ex = SubjectExtract {
        schema_version: SCHEMA_VERSION,
        subject: subject.to_string(),
        timezone: tz.name().to_string(),
        device: accel.map(|a| a.device_profile.unwrap_or(DeviceProfile::Smartphone)),
        ..SubjectExtract::default()
    };
    let mut resampled = None;
    let mut coverage = CoverageMap::default();
    if let Some(a) = accel.filter(|a| !a.samples.is_empty()) {
        ex.warnings.extend(a.warnings.iter().map(|w| format!("{w:?}")));
        let r = resample_with_gap(a, cfg.canonical_rate_hz, cfg.accel_gap_s)?;
        coverage = compute_coverage(&a.samples, cfg.accel_gap_s)?;
        let (minutes, worn) = minute_records(&r, models, cfg, &mut ex.warnings)?;
        for &scorer in &cfg.scorers {
            let scores = score_epochs(&worn, scorer, &cfg.sleep)?;
            ex.sleep.extend(segment_sessions(&scores, &cfg.sleep).into_iter().map(|session| ScoredSession { scorer, session }));
        }
        ex.minutes = minutes;
        resampled = Some(r);
    }

    let mut pois = Vec::new();
    if let Some(loc) = location {
        pois = crate::location::detect_pois(&loc.samples, &cfg.poi);
        for p in pois.iter_mut() {
            *p = match gazetteer {
                Some(g) => categorize_poi(p, g),
                None => PointOfInterest { category: Some(PoiCategory::Unknown), ..p.clone() },
            };
        }
        ex.home_school = Some(label_home_school(&mut pois, tz, &cfg.poi));
        let seg = segment_trips(&pois, &coverage, &cfg.transport);
        ex.skipped_trips = seg.skipped;
        match (&resampled, &models.transport) {
            (Some(r), Some(model)) => {
                let seconds = window(r, 1.0, 1.0)?;
                for trip in seg.trips {
                    match classify_trip(&trip, &seconds.frames, model, &cfg.transport) {
                        Ok(t) => ex.trips.push(t),
                        Err(TransportError::InsufficientFrames { found, .. }) => {
                            ex.warnings.push(format!("trip {}..{} left unclassified: {found} usable seconds", trip.start_t, trip.end_t));
                            ex.trips.push(trip);
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            _ => ex.trips = seg.trips,
        }
        ex.pois = pois.iter().map(|p| redact_coordinates(p, cfg.poi.geohash_precision)).collect::<Result<_, _>>()?;
    }
    Ok(DetailedExtract { extract: ex, unredacted_pois: pois })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum VoteTrigger {
    PerVisit,
    /// One vote per fixed-length slice of a visit.
    Interval { interval_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateConfig {
    pub indicators: IndicatorConfig,
    pub vote_precision: usize,
    pub export_precisions: Vec<usize>,
    pub k_anon: usize,
    pub min_visit_s: f64,
    pub trigger: VoteTrigger,
    /// Histogram bin edges per indicator; indicators without edges get no histogram.
    pub histogram_edges: BTreeMap<String, Vec<f64>>,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            indicators: IndicatorConfig::default(),
            vote_precision: 7,
            export_precisions: vec![5, 6, 7],
            k_anon: 5,
            min_visit_s: 600.0,
            trigger: VoteTrigger::PerVisit,
            histogram_edges: BTreeMap::from([
                ("counts_per_minute".to_string(), vec![0.0, 100.0, 1800.0, 4000.0, 1e9]),
                ("steps_per_hour".to_string(), vec![0.0, 250.0, 500.0, 1000.0, 2000.0, 1e9]),
                ("daily_steps".to_string(), vec![0.0, 2000.0, 5000.0, 8000.0, 12000.0, 1e9]),
                ("sleep_duration_min".to_string(), vec![0.0, 360.0, 420.0, 480.0, 540.0, 600.0, 1e9]),
            ]),
        }
    }
}

impl AggregateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(1..=12).contains(&self.vote_precision) {
            return bad(format!("vote_precision {} outside 1..=12", self.vote_precision));
        }
        if let Some(p) = self.export_precisions.iter().find(|&&p| p == 0 || p > self.vote_precision) {
            return bad(format!("export precision {p} must lie in 1..=vote_precision"));
        }
        if self.k_anon == 0 {
            return bad("k_anon must be at least 1".into());
        }
        if let VoteTrigger::Interval { interval_s } = self.trigger {
            if !(interval_s > 0.0) {
                return bad("interval_s must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopedIndicators {
    pub geohash: Option<Geohash>,
    pub valid_days: usize,
    pub indicators: BTreeMap<String, f64>,
    pub histograms: BTreeMap<String, Vec<u64>>,
}

/// Individual-level output of one subject, keyed by voter tag only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAggregate {
    pub voter: String,
    pub resident: Option<ScopedIndicators>,
    pub visitor: Vec<ScopedIndicators>,
    pub votes: Vec<GeohashVote>,
    pub graph: MobilityGraph,
}

fn scoped(rec: IndividualRecord, indicators: BTreeMap<String, f64>) -> ScopedIndicators {
    let mut indicators = indicators;
    complete_distributions(&mut indicators);
    ScopedIndicators { geohash: rec.geohash, valid_days: rec.valid_days, indicators, histograms: rec.histograms }
}

/// Individual indicators and votes from one subject's base indicators.
pub fn aggregate_subject(voter: &str, ex: &SubjectExtract, cfg: &AggregateConfig, primary: Scorer) -> Result<SubjectAggregate> {
    cfg.validate()?;
    let tz: Tz = ex.timezone.parse().map_err(|_| PipelineError::Config(format!("unknown timezone {:?}", ex.timezone)))?;
    let ic = &cfg.indicators;
    let sessions = ex.sessions(primary);
    let days = resident_days(&ex.minutes, &ex.pois, &ex.trips, &sessions, tz, ic);
    let valid_days: BTreeSet<String> = days.iter().filter(|d| d.recorded_hours >= ic.min_day_hours).map(|d| d.day.clone()).collect();

    let home = ex.pois.iter().find(|p| p.category == Some(PoiCategory::Home)).and_then(|p| p.geohash.clone());
    let resident = match aggregate_individual(&days, ScopeKind::Resident, home.map(|g| g.truncate(cfg.vote_precision)), ic.min_day_hours, &cfg.histogram_edges) {
        Ok(rec) => {
            let ind = resident_indicators(&rec, ic);
            Some(scoped(rec, ind))
        }
        Err(AggregateError::NoValidDays(_)) => None,
        Err(e) => return Err(e.into()),
    };

    let cells: BTreeSet<Geohash> = ex.pois.iter().filter_map(|p| p.geohash.as_ref().map(|g| g.truncate(cfg.vote_precision))).collect();
    let mut visitor = Vec::new();
    for gh in &cells {
        let days = visitor_days(&ex.minutes, &ex.pois, &ex.trips, gh, tz, ic);
        match aggregate_individual(&days, ScopeKind::Visitor, Some(gh.clone()), ic.min_day_hours, &cfg.histogram_edges) {
            Ok(rec) => {
                let ind = visitor_indicators(&rec, ic);
                visitor.push(scoped(rec, ind));
            }
            Err(AggregateError::NoValidDays(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut votes = Vec::new();
    let mut per_poi: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for p in &ex.pois {
        let Some(gh) = &p.geohash else { continue };
        let arriving = ex.trips.iter().find(|t| t.dest_poi.as_deref() == Some(p.poi_id.as_str()));
        let mut activity = visit_payload(p, &ex.minutes, arriving, ic);
        activity.retain(|k, _| !k.starts_with("visit."));
        per_poi.insert(p.poi_id.clone(), activity);
        let valid = local_day(p.arrive_t, tz).is_some_and(|d| valid_days.contains(&d.to_string()));
        if !valid {
            continue;
        }
        let spans = match cfg.trigger {
            VoteTrigger::PerVisit => vec![(p.arrive_t, p.depart_t)],
            VoteTrigger::Interval { interval_s } => split_visit(p.arrive_t, p.depart_t, interval_s),
        };
        for (t0, t1) in spans {
            let slice = PointOfInterest { arrive_t: t0, depart_t: t1, ..p.clone() };
            let arriving = if t0 == p.arrive_t { arriving } else { None };
            let mut payload = visit_payload(&slice, &ex.minutes, arriving, ic);
            complete_distributions(&mut payload);
            match cast_vote(gh.truncate(cfg.vote_precision), voter.to_string(), (t0, t1), payload, cfg.min_visit_s) {
                Ok(v) => votes.push(v),
                Err(VoteError::TooShort { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let graph = build_mobility_graph(&ex.pois, &ex.trips, &per_poi);
    Ok(SubjectAggregate { voter: voter.to_string(), resident, visitor, votes, graph })
}

/// Population cells per precision for one aggregation axis.
pub type Grid = BTreeMap<usize, Vec<AggregateCell>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub schema_version: u32,
    pub k_anon: usize,
    pub vote: Grid,
    pub visitor: Grid,
    pub resident: Grid,
}

impl Population {
    /// Clears the statistics of every cell below the anonymity threshold.
    pub fn redact_suppressed(&mut self) {
        for grid in [&mut self.vote, &mut self.visitor, &mut self.resident] {
            grid.values_mut().flatten().for_each(AggregateCell::redact_if_suppressed);
        }
    }
}

fn grid(contribs: &[Contribution], cfg: &AggregateConfig) -> Result<Grid> {
    let mut out = Grid::new();
    for &p in &cfg.export_precisions {
        out.insert(p, aggregate_grid(contribs, p, cfg.k_anon, &cfg.histogram_edges)?.into_values().collect());
    }
    Ok(out)
}

/// Population indicators from votes and individual records.
pub fn aggregate_population_axes(votes: &[GeohashVote], subjects: &[SubjectAggregate], cfg: &AggregateConfig) -> Result<Population> {
    cfg.validate()?;
    let vote: Vec<Contribution> = votes.iter().map(Contribution::from).collect();
    let mut visitor = Vec::new();
    let mut resident = Vec::new();
    for s in subjects {
        for v in &s.visitor {
            if let Some(gh) = &v.geohash {
                visitor.push(Contribution { geohash: gh.clone(), voter: s.voter.clone(), values: v.indicators.clone() });
            }
        }
        if let Some(r) = &s.resident {
            if let Some(gh) = &r.geohash {
                resident.push(Contribution { geohash: gh.clone(), voter: s.voter.clone(), values: r.indicators.clone() });
            }
        }
    }
    Ok(Population {
        schema_version: SCHEMA_VERSION,
        k_anon: cfg.k_anon,
        vote: grid(&vote, cfg)?,
        visitor: grid(&visitor, cfg)?,
        resident: grid(&resident, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Sampling rate of the generated training recordings.
    pub rate_hz: f64,
    /// 60 s windows per activity type.
    pub type_windows_per_class: usize,
    /// 60 s recordings per transport mode, each cut into 1 s windows.
    pub transport_minutes_per_mode: [usize; 5],
    pub linear: LinearParams,
    pub rbf: RbfParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            type_windows_per_class: 40,
            transport_minutes_per_mode: [4, 3, 4, 4, 3],
            linear: LinearParams::default(),
            rbf: RbfParams { max_per_class: Some(120), ..RbfParams::default() },
        }
    }
}

fn canonical(samples: Vec<crate::ingest::AccelSample>, rate_hz: f64, cfg: &ExtractConfig) -> Result<AccelStream> {
    let s = AccelStream {
        subject_id: String::new(),
        device_profile: None,
        tz: None,
        samples,
        nominal_rate_hz: rate_hz,
        warnings: Vec::new(),
    };
    Ok(resample_with_gap(&s, cfg.canonical_rate_hz, cfg.accel_gap_s)?)
}

/// Trains the activity-type and transport models on generator windows.
pub fn train_models(seed: u64, cfg: &TrainConfig, extract: &ExtractConfig) -> Result<(ModelFile, ModelFile)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for kind in ActivityType::ALL {
        for _ in 0..cfg.type_windows_per_class {
            let s = canonical(activity_window(kind, 0, 61.0, cfg.rate_hz, &mut rng), cfg.rate_hz, extract)?;
            let w = window(&s, 60.0, 60.0)?;
            for f in &w.frames {
                rows.push(extract_type_features(f)?);
                labels.push(kind);
            }
        }
    }
    let type_model = train_type_model(&rows, &labels, &LinearParams { seed, ..cfg.linear })?;

    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for (mode, &minutes) in TransportMode::ALL.iter().zip(&cfg.transport_minutes_per_mode) {
        for _ in 0..minutes {
            let s = canonical(transport_window(*mode, 0, 60.0, cfg.rate_hz, &mut rng), cfg.rate_hz, extract)?;
            let w = window(&s, 1.0, 1.0)?;
            for f in &w.frames {
                rows.push(extract_transport_features(f)?);
                labels.push(*mode);
            }
        }
    }
    let transport_model = train_transport(&rows, &labels, &RbfParams { seed, ..cfg.rbf.clone() })?;
    Ok((type_model, transport_model))
}

/// One subject's pipeline output next to the simulator's truth.
pub struct EvalCase<'a> {
    pub label: String,
    pub extract: &'a DetailedExtract,
    pub truth: &'a Truth,
}

/// Compares pipeline outputs with ground truth across every available axis.
/// True when every minute overlapping `[start, end)` has a minute record.
fn covered(recorded: &BTreeSet<i64>, start: i64, end: i64) -> bool {
    let mut t = start.div_euclid(60_000) * 60_000;
    while t < end {
        if !recorded.contains(&t) {
            return false;
        }
        t += 60_000;
    }
    end > start
}

/// Scores extracts against simulation truth. Step bouts and sleep nights that
/// fall outside accelerometer coverage are left out.
pub fn evaluate(cases: &[EvalCase<'_>], thresholds: MatchThresholds, config_hash: &str) -> Result<EvalReport> {
    let mut report = EvalReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        thresholds: Some(thresholds),
        ..EvalReport::default()
    };

    let mut steps = Vec::new();
    let (mut type_truth, mut type_pred) = (Vec::new(), Vec::new());
    let (mut mode_truth, mut mode_pred) = (Vec::new(), Vec::new());
    let mut sleep_pairs: BTreeMap<Scorer, Vec<RecordingPair>> = BTreeMap::new();
    for c in cases {
        let ex = &c.extract.extract;
        let recorded: BTreeSet<i64> = ex.minutes.iter().map(|m| m.minute_start).collect();
        for b in c.truth.steps.iter().filter(|b| covered(&recorded, b.start, b.end)) {
            let predicted = ex.minutes.iter().filter(|m| m.minute_start >= b.start && m.minute_start < b.end).map(|m| m.steps).sum();
            steps.push(StepRecord { group: b.group.clone(), truth: b.steps, predicted });
        }
        for m in &ex.minutes {
            let Some(pred) = m.activity_type else { continue };
            if let Some(l) = c.truth.activity.iter().find(|l| m.minute_start >= l.start && m.minute_start + 60_000 <= l.end) {
                type_truth.push(l.label);
                type_pred.push(pred);
            }
        }
        for trip in &ex.trips {
            for &(t, mode) in &trip.mode_sequence {
                if let Some(tt) = c.truth.trips.iter().find(|tt| t >= tt.start && t + 1000 <= tt.end) {
                    mode_truth.push(tt.mode);
                    mode_pred.push(mode);
                }
            }
        }
        if !c.truth.stays.is_empty() {
            let truth: Vec<StaySpan> = c
                .truth
                .stays
                .iter()
                .map(|s| StaySpan { center: LatLon { lat: s.lat, lon: s.lon }, arrive_t: s.arrive, depart_t: s.depart })
                .collect();
            let detected: Vec<StaySpan> = c.extract.unredacted_pois.iter().filter_map(StaySpan::from_poi).collect();
            report.pois.insert(c.label.clone(), match_pois(&truth, &detected, &thresholds).0);
        }
        if let Some(a) = &c.truth.sleep {
            let truth: Vec<TruthSession> = a.sessions()?.into_iter().filter(|t| covered(&recorded, t.ss, t.se)).collect();
            let scorers: BTreeSet<Scorer> = ex.sleep.iter().map(|s| s.scorer).collect();
            for scorer in scorers {
                let predicted = ex.sessions(scorer);
                if truth.is_empty() && predicted.is_empty() {
                    continue;
                }
                sleep_pairs.entry(scorer).or_default().push(RecordingPair { recording: c.label.clone(), truth: truth.clone(), predicted });
            }
        }
    }
    report.steps = step_error(&steps);
    if !type_truth.is_empty() {
        report.activity_types = Some(confusion(&type_truth, &type_pred, &crate::activity::ActivityType::ALL)?);
    }
    if !mode_truth.is_empty() {
        report.transport = Some(confusion(&mode_truth, &mode_pred, &TransportMode::ALL)?);
    }
    if !report.pois.is_empty() {
        report.pois_total = Some(PoiMatchResult::sum(report.pois.values()));
    }
    for (scorer, pairs) in sleep_pairs {
        report.sleep.insert(scorer.as_str().to_string(), sleep_eval(&pairs)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Block, Motion, Place, Posture, Scenario, Travel};
    use crate::transport::TransportMode;

    fn day_scenario() -> Scenario {
        let block = |s: &str, e: &str, motion, place: Option<&str>, travel: Option<Travel>| Block {
            start: s.into(),
            end: e.into(),
            motion,
            place: place.map(String::from),
            travel,
            group: None,
        };
        Scenario {
            subject: "alice".into(),
            timezone: "Europe/Athens".into(),
            rate_hz: 10.0,
            device: DeviceProfile::Smartwatch,
            gps_period_s: 30.0,
            gps_noise_m: 5.0,
            accel_window: None,
            places: vec![
                Place { id: "a".into(), lat: 40.60, lon: 22.90, category: PoiCategory::Park },
                Place { id: "b".into(), lat: 40.62, lon: 22.90, category: PoiCategory::Cafe },
            ],
            blocks: vec![
                block("2024-03-04T08:00", "2024-03-04T12:00", Motion::Sedentary { posture: Posture::Sit }, Some("a"), None),
                block(
                    "2024-03-04T12:00",
                    "2024-03-04T12:30",
                    Motion::Walk { cadence_hz: 2.0, amplitude: 3.0 },
                    None,
                    Some(Travel { from: "a".into(), to: "b".into(), mode: TransportMode::WalkRun }),
                ),
                block("2024-03-04T12:30", "2024-03-04T17:00", Motion::Light, Some("b"), None),
            ],
        }
    }

    #[test]
    fn extract_and_aggregate_a_simulated_day() {
        let out = simulate(&day_scenario(), 1).unwrap();
        let tz: Tz = "Europe/Athens".parse().unwrap();
        let d = extract_subject("p-01", Some(&out.accel), Some(&out.location), tz, &Models::default(), None, &ExtractConfig::default()).unwrap();
        let ex = &d.extract;
        // the last minute lacks its final half-period after upsampling
        assert_eq!(ex.minutes.len(), 9 * 60 - 1);
        let walked: u32 = ex.minutes.iter().filter(|m| m.minute_start >= out.truth.trips[0].start && m.minute_start < out.truth.trips[0].end).map(|m| m.steps).sum();
        assert!(walked.abs_diff(3600) <= 10, "{walked}");
        assert_eq!(ex.pois.len(), 2);
        assert!(ex.pois.iter().all(|p| p.center.is_none() && p.geohash.is_some()));
        assert_eq!(d.unredacted_pois.len(), 2);
        assert_eq!(ex.trips.len(), 1);

        let agg = aggregate_subject("tag", ex, &AggregateConfig::default(), Scorer::Cole).unwrap();
        assert_eq!(agg.votes.len(), 2);
        assert_eq!(agg.resident.as_ref().unwrap().geohash, None, "no home without a week of history");
        assert_eq!(agg.visitor.len(), 2);
        let pop = aggregate_population_axes(&agg.votes, std::slice::from_ref(&agg), &AggregateConfig { k_anon: 1, ..AggregateConfig::default() }).unwrap();
        assert_eq!(pop.vote[&7].len(), 2);
        assert!(pop.vote[&7].iter().all(|c| c.published));
        let text = serde_json::to_string(&(ex, &agg, &pop)).unwrap();
        assert!(!text.contains("alice"));
        assert!(!text.contains("center") && !text.contains("\"lat\""));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = ExtractConfig { cut_points: [5.0, 1.0, 2.0], ..ExtractConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = AggregateConfig { export_precisions: vec![8], ..AggregateConfig::default() };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
