//! Sensor file parsing, coverage (gap) detection, resampling and windowing.
//!
//! Streams are immutable once parsed. Everything downstream works on the
//! canonical 20 Hz grid produced by [`resample`], and consults a
//! [`CoverageMap`] to tell missing data apart from a device lying still.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rate every accelerometer algorithm runs at after resampling.
pub const CANONICAL_RATE_HZ: f64 = 20.0;
/// Supported band of delivered accelerometer rates.
pub const SUPPORTED_RATE_HZ: (f64, f64) = (5.0, 25.0);
pub const DEFAULT_ACCEL_GAP_S: f64 = 5.0;
pub const DEFAULT_LOCATION_GAP_S: f64 = 300.0;
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stream contains no samples")]
    EmptyStream,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported stream: {0}")]
    Unsupported(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

pub trait Timestamped {
    fn t(&self) -> i64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub const fn new(t: i64, x: f64, y: f64, z: f64) -> Self {
        Self { t, x, y, z }
    }

    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl Timestamped for AccelSample {
    fn t(&self) -> i64 {
        self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationSample {
    pub t: i64,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
}

impl LocationSample {
    pub fn position(&self) -> crate::geo::LatLon {
        crate::geo::LatLon::new(self.lat, self.lon)
    }
}

impl Timestamped for LocationSample {
    fn t(&self) -> i64 {
        self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceProfile {
    Smartphone,
    Smartwatch,
}

impl fmt::Display for DeviceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Smartphone => "smartphone",
            Self::Smartwatch => "smartwatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Ms2,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Accel,
    Location,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestWarning {
    RateOutOfBand { rate_hz: f64 },
    DuplicatesCollapsed { count: usize },
    Resorted,
    DeviceProfileDefaulted,
}

/// A parsed, time-sorted sample sequence for one subject and one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream<S> {
    pub subject_id: String,
    pub device_profile: Option<DeviceProfile>,
    /// IANA timezone used for time-of-day heuristics.
    pub tz: Option<String>,
    pub samples: Vec<S>,
    pub nominal_rate_hz: f64,
    pub warnings: Vec<IngestWarning>,
}

pub type AccelStream = SensorStream<AccelSample>;
pub type LocationStream = SensorStream<LocationSample>;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyStream {
    Accel(AccelStream),
    Location(LocationStream),
}

impl<S: Timestamped> SensorStream<S> {
    pub fn first_t(&self) -> Option<i64> {
        self.samples.first().map(Timestamped::t)
    }

    pub fn last_t(&self) -> Option<i64> {
        self.samples.last().map(Timestamped::t)
    }

    pub fn coverage(&self, gap_threshold_s: f64) -> Result<CoverageMap> {
        compute_coverage(&self.samples, gap_threshold_s)
    }
}

#[derive(Debug, Deserialize)]
struct MetaLine {
    meta: StreamMeta,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamMeta {
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub device: Option<DeviceProfile>,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub tz: Option<String>,
}

enum Format {
    Jsonl,
    Csv,
}

fn format_for(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Jsonl,
    }
}

/// Parses an accelerometer or location file (JSONL or CSV, chosen by extension).
pub fn parse_stream(path: &Path, kind: StreamKind) -> Result<AnyStream> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_owned(), source })?;
    let fallback_subject = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_owned();
    let reader = BufReader::new(file);
    let csv = matches!(format_for(path), Format::Csv);
    Ok(match kind {
        StreamKind::Accel => AnyStream::Accel(parse_accel_reader(reader, csv, &fallback_subject)?),
        StreamKind::Location => AnyStream::Location(parse_location_reader(reader, csv, &fallback_subject)?),
    })
}

pub fn parse_accel(path: &Path) -> Result<AccelStream> {
    match parse_stream(path, StreamKind::Accel)? {
        AnyStream::Accel(s) => Ok(s),
        AnyStream::Location(_) => unreachable!(),
    }
}

pub fn parse_location(path: &Path) -> Result<LocationStream> {
    match parse_stream(path, StreamKind::Location)? {
        AnyStream::Location(s) => Ok(s),
        AnyStream::Accel(_) => unreachable!(),
    }
}

/// Raw records in file order with their 1-based line numbers.
fn read_records<T, R>(reader: R, csv: bool) -> Result<(StreamMeta, Vec<T>)>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut meta = StreamMeta::default();
    let mut out = Vec::new();
    if csv {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, rec) in rdr.deserialize::<T>().enumerate() {
            // header is line 1
            let rec = rec.map_err(|e| IngestError::Parse { line: i + 2, message: e.to_string() })?;
            out.push(rec);
        }
        return Ok((meta, out));
    }
    let reader = BufReader::new(reader);
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Parse { line: lineno, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if out.is_empty() && trimmed.contains("\"meta\"") {
            let m: MetaLine = serde_json::from_str(trimmed)
                .map_err(|e| IngestError::Parse { line: lineno, message: e.to_string() })?;
            meta = m.meta;
            continue;
        }
        let rec: T = serde_json::from_str(trimmed)
            .map_err(|e| IngestError::Parse { line: lineno, message: e.to_string() })?;
        out.push(rec);
    }
    Ok((meta, out))
}

fn line_of(index: usize, csv: bool, has_meta: bool) -> usize {
    // best effort: exact unless the file contains blank lines
    index + 1 + usize::from(csv || has_meta)
}

pub fn parse_accel_reader<R: Read>(reader: R, csv: bool, fallback_subject: &str) -> Result<AccelStream> {
    let (meta, mut samples) = read_records::<AccelSample, _>(reader, csv)?;
    let has_meta = meta.subject.is_some() || meta.device.is_some() || meta.tz.is_some();
    for (i, s) in samples.iter_mut().enumerate() {
        if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
            return Err(IngestError::Parse { line: line_of(i, csv, has_meta), message: "non-finite acceleration".into() });
        }
        if meta.units == Units::G {
            s.x *= STANDARD_GRAVITY;
            s.y *= STANDARD_GRAVITY;
            s.z *= STANDARD_GRAVITY;
        }
    }
    let mut warnings = Vec::new();
    finalize_samples(&mut samples, &mut warnings)?;
    let rate = estimate_rate(&samples);
    if !(SUPPORTED_RATE_HZ.0..=SUPPORTED_RATE_HZ.1).contains(&rate) {
        log::warn!("accelerometer rate {rate:.2} Hz outside supported band");
        warnings.push(IngestWarning::RateOutOfBand { rate_hz: rate });
    }
    let device = meta.device.or_else(|| {
        warnings.push(IngestWarning::DeviceProfileDefaulted);
        Some(DeviceProfile::Smartphone)
    });
    Ok(SensorStream {
        subject_id: meta.subject.unwrap_or_else(|| fallback_subject.to_owned()),
        device_profile: device,
        tz: meta.tz,
        samples,
        nominal_rate_hz: rate,
        warnings,
    })
}

pub fn parse_location_reader<R: Read>(reader: R, csv: bool, fallback_subject: &str) -> Result<LocationStream> {
    let (meta, mut samples) = read_records::<LocationSample, _>(reader, csv)?;
    let has_meta = meta.subject.is_some() || meta.tz.is_some();
    for (i, s) in samples.iter().enumerate() {
        let ok = s.lat.is_finite()
            && s.lon.is_finite()
            && (-90.0..=90.0).contains(&s.lat)
            && (-180.0..=180.0).contains(&s.lon)
            && s.accuracy.is_finite()
            && s.accuracy >= 0.0;
        if !ok {
            return Err(IngestError::Parse { line: line_of(i, csv, has_meta), message: "coordinate or accuracy out of range".into() });
        }
    }
    let mut warnings = Vec::new();
    finalize_samples(&mut samples, &mut warnings)?;
    let rate = estimate_rate(&samples);
    Ok(SensorStream {
        subject_id: meta.subject.unwrap_or_else(|| fallback_subject.to_owned()),
        device_profile: meta.device,
        tz: meta.tz,
        samples,
        nominal_rate_hz: rate,
        warnings,
    })
}

/// Stable sort by time, then drop repeated timestamps keeping the first occurrence.
fn finalize_samples<S: Timestamped>(samples: &mut Vec<S>, warnings: &mut Vec<IngestWarning>) -> Result<()> {
    if samples.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    if samples.windows(2).any(|w| w[1].t() < w[0].t()) {
        samples.sort_by_key(Timestamped::t);
        warnings.push(IngestWarning::Resorted);
    }
    let before = samples.len();
    samples.dedup_by(|b, a| a.t() == b.t());
    let dropped = before - samples.len();
    if dropped > 0 {
        log::info!("collapsed {dropped} duplicate timestamps");
        warnings.push(IngestWarning::DuplicatesCollapsed { count: dropped });
    }
    Ok(())
}

/// Median reciprocal inter-sample interval; 0 for single-sample streams.
pub fn estimate_rate<S: Timestamped>(samples: &[S]) -> f64 {
    let mut dts: Vec<i64> = samples.windows(2).map(|w| w[1].t() - w[0].t()).collect();
    if dts.is_empty() {
        return 0.0;
    }
    dts.sort_unstable();
    let n = dts.len();
    let median = if n % 2 == 1 {
        dts[n / 2] as f64
    } else {
        (dts[n / 2 - 1] + dts[n / 2]) as f64 / 2.0
    };
    1000.0 / median
}

#[derive(Serialize)]
struct MetaOut<'a> {
    meta: MetaOutInner<'a>,
}

#[derive(Serialize)]
struct MetaOutInner<'a> {
    subject: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    device: Option<DeviceProfile>,
    units: Units,
    #[serde(skip_serializing_if = "Option::is_none")]
    tz: Option<&'a str>,
}

/// Writes a stream as JSONL with a meta header. Values are written in shortest
/// round-trip form so re-parsing reproduces the stream bit for bit.
pub fn write_jsonl<S: Serialize, W: Write>(stream: &SensorStream<S>, mut out: W) -> std::io::Result<()> {
    let meta = MetaOut {
        meta: MetaOutInner {
            subject: &stream.subject_id,
            device: stream.device_profile,
            units: Units::Ms2,
            tz: stream.tz.as_deref(),
        },
    };
    serde_json::to_writer(&mut out, &meta)?;
    out.write_all(b"\n")?;
    for s in &stream.samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentState {
    Recording,
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_ms: i64,
    pub end_ms: i64,
    pub state: SegmentState,
}

impl Segment {
    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }
}

/// Contiguous partition of a stream's time span into recording and gap segments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageMap {
    pub segments: Vec<Segment>,
}

impl CoverageMap {
    pub fn span_ms(&self) -> i64 {
        match (self.segments.first(), self.segments.last()) {
            (Some(a), Some(b)) => b.end_ms - a.start_ms,
            _ => 0,
        }
    }

    pub fn recording_ms(&self) -> i64 {
        self.total(SegmentState::Recording)
    }

    pub fn gap_ms(&self) -> i64 {
        self.total(SegmentState::Gap)
    }

    fn total(&self, state: SegmentState) -> i64 {
        self.segments.iter().filter(|s| s.state == state).map(Segment::duration_ms).sum()
    }

    pub fn recording_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.state == SegmentState::Recording)
    }

    /// Recording time inside `[from, to)`.
    pub fn recording_within(&self, from: i64, to: i64) -> i64 {
        self.recording_segments()
            .map(|s| (s.end_ms.min(to) - s.start_ms.max(from)).max(0))
            .sum()
    }

    pub fn is_recording(&self, t: i64) -> bool {
        self.recording_segments().any(|s| s.start_ms <= t && t <= s.end_ms)
    }
}

/// Splits a sample sequence at every inter-sample interval longer than the threshold.
pub fn compute_coverage<S: Timestamped>(samples: &[S], gap_threshold_s: f64) -> Result<CoverageMap> {
    if samples.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    if !(gap_threshold_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!("gap threshold {gap_threshold_s}")));
    }
    let threshold_ms = gap_threshold_s * 1000.0;
    let mut segments = Vec::new();
    let mut seg_start = samples[0].t();
    for w in samples.windows(2) {
        let (a, b) = (w[0].t(), w[1].t());
        if (b - a) as f64 > threshold_ms {
            segments.push(Segment { start_ms: seg_start, end_ms: a, state: SegmentState::Recording });
            segments.push(Segment { start_ms: a, end_ms: b, state: SegmentState::Gap });
            seg_start = b;
        }
    }
    let last = samples[samples.len() - 1].t();
    segments.push(Segment { start_ms: seg_start, end_ms: last, state: SegmentState::Recording });
    Ok(CoverageMap { segments })
}

pub fn resample(stream: &AccelStream, target_hz: f64) -> Result<AccelStream> {
    resample_with_gap(stream, target_hz, DEFAULT_ACCEL_GAP_S)
}

pub fn resample_any(stream: &AnyStream, target_hz: f64) -> Result<AccelStream> {
    match stream {
        AnyStream::Accel(s) => resample(s, target_hz),
        AnyStream::Location(_) => Err(IngestError::Unsupported("location streams cannot be resampled".into())),
    }
}

/// Linear interpolation onto the epoch-aligned grid `k / target_hz`, inside
/// recording segments only.
pub fn resample_with_gap(stream: &AccelStream, target_hz: f64, gap_threshold_s: f64) -> Result<AccelStream> {
    if !(target_hz > 0.0 && target_hz <= 1000.0) {
        return Err(IngestError::InvalidArgument(format!("target rate {target_hz} Hz")));
    }
    let coverage = stream.coverage(gap_threshold_s)?;
    let period = 1000.0 / target_hz;
    let src = &stream.samples;
    let mut out = Vec::with_capacity((coverage.recording_ms() as f64 / period) as usize + 1);
    let mut j = 0usize;
    for seg in coverage.recording_segments() {
        let mut k = (seg.start_ms as f64 / period).ceil() as i64;
        loop {
            let t = (k as f64 * period).round() as i64;
            if t > seg.end_ms {
                break;
            }
            k += 1;
            if t < seg.start_ms {
                continue;
            }
            while j + 1 < src.len() && src[j + 1].t <= t {
                j += 1;
            }
            let a = src[j];
            let s = if a.t == t || j + 1 >= src.len() {
                AccelSample { t, ..a }
            } else {
                let b = src[j + 1];
                let f = (t - a.t) as f64 / (b.t - a.t) as f64;
                AccelSample::new(t, a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.z + f * (b.z - a.z))
            };
            out.push(s);
        }
    }
    Ok(SensorStream {
        subject_id: stream.subject_id.clone(),
        device_profile: stream.device_profile,
        tz: stream.tz.clone(),
        samples: out,
        nominal_rate_hz: target_hz,
        warnings: Vec::new(),
    })
}

/// A fixed-length window borrowed from a uniform stream.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub start_ms: i64,
    pub len_ms: i64,
    pub rate_hz: f64,
    pub samples: &'a [AccelSample],
}

impl Frame<'_> {
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.len_ms
    }

    pub fn expected_len(&self) -> usize {
        (self.len_ms as f64 * self.rate_hz / 1000.0).round() as usize
    }
}

#[derive(Debug, Clone, Default)]
pub struct Windows<'a> {
    pub frames: Vec<Frame<'a>>,
    /// Start times of frames dropped because they ran into a gap.
    pub straddling: Vec<i64>,
}

impl Windows<'_> {
    pub fn flagged(&self) -> usize {
        self.straddling.len()
    }
}

/// Frames of `len_s` every `hop_s`, aligned to the start of each recording segment.
pub fn window(stream: &AccelStream, len_s: f64, hop_s: f64) -> Result<Windows<'_>> {
    window_impl(stream, len_s, hop_s, None)
}

/// Like [`window`], but each segment's first frame starts at the next multiple
/// of `grid_ms` (e.g. 60 000 for wall-clock minutes).
pub fn window_on_grid(stream: &AccelStream, len_s: f64, hop_s: f64, grid_ms: i64) -> Result<Windows<'_>> {
    if grid_ms <= 0 {
        return Err(IngestError::InvalidArgument(format!("grid {grid_ms} ms")));
    }
    window_impl(stream, len_s, hop_s, Some(grid_ms))
}

fn window_impl(stream: &AccelStream, len_s: f64, hop_s: f64, grid_ms: Option<i64>) -> Result<Windows<'_>> {
    if !(len_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!("window length {len_s} s")));
    }
    if !(hop_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!("hop {hop_s} s")));
    }
    if !(stream.nominal_rate_hz > 0.0) {
        return Err(IngestError::InvalidArgument("stream has no sampling rate".into()));
    }
    let period_ms = 1000.0 / stream.nominal_rate_hz;
    let len_ms = (len_s * 1000.0).round() as i64;
    let hop_ms = (hop_s * 1000.0).round() as i64;
    let coverage = stream.coverage(1.5 * period_ms / 1000.0)?;
    let samples = &stream.samples;
    let mut out = Windows::default();
    let n_segments = coverage.segments.len();
    for (si, seg) in coverage.segments.iter().enumerate() {
        if seg.state != SegmentState::Recording {
            continue;
        }
        let followed_by_gap = si + 1 < n_segments;
        let seg_end = seg.end_ms + period_ms.round() as i64;
        let mut start = match grid_ms {
            Some(g) => seg.start_ms.div_euclid(g) * g + if seg.start_ms.rem_euclid(g) == 0 { 0 } else { g },
            None => seg.start_ms,
        };
        while start < seg_end {
            if start + len_ms <= seg_end {
                let lo = samples.partition_point(|s| s.t < start);
                let hi = samples.partition_point(|s| s.t < start + len_ms);
                out.frames.push(Frame {
                    start_ms: start,
                    len_ms,
                    rate_hz: stream.nominal_rate_hz,
                    samples: &samples[lo..hi],
                });
            } else if followed_by_gap {
                out.straddling.push(start);
            } else {
                break;
            }
            start += hop_ms;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accel(ts: &[i64]) -> AccelStream {
        SensorStream {
            subject_id: "s".into(),
            device_profile: Some(DeviceProfile::Smartphone),
            tz: None,
            samples: ts.iter().map(|&t| AccelSample::new(t, 0.0, 0.0, 9.81)).collect(),
            nominal_rate_hz: estimate_rate(&ts.iter().map(|&t| AccelSample::new(t, 0.0, 0.0, 0.0)).collect::<Vec<_>>()),
            warnings: vec![],
        }
    }

    fn uniform(n: usize, rate: f64, t0: i64) -> AccelStream {
        let period = 1000.0 / rate;
        accel(&(0..n).map(|i| t0 + (i as f64 * period).round() as i64).collect::<Vec<_>>())
    }

    #[test]
    fn parses_three_lines_at_ten_hz() {
        let data = "{\"t\":0,\"x\":0.1,\"y\":0.2,\"z\":9.8}\n{\"t\":100,\"x\":0.1,\"y\":0.2,\"z\":9.8}\n{\"t\":200,\"x\":0.1,\"y\":0.2,\"z\":9.8}\n";
        let s = parse_accel_reader(data.as_bytes(), false, "a").unwrap();
        assert_eq!(s.samples.len(), 3);
        assert_eq!(s.nominal_rate_hz, 10.0);
        assert!(!s.warnings.iter().any(|w| matches!(w, IngestWarning::RateOutOfBand { .. })));
    }

    #[test]
    fn sorts_out_of_order_lines_and_keeps_first_duplicate() {
        let data = "{\"t\":200,\"x\":1,\"y\":0,\"z\":0}\n{\"t\":0,\"x\":2,\"y\":0,\"z\":0}\n{\"t\":100,\"x\":3,\"y\":0,\"z\":0}\n{\"t\":100,\"x\":4,\"y\":0,\"z\":0}\n";
        let s = parse_accel_reader(data.as_bytes(), false, "a").unwrap();
        let ts: Vec<i64> = s.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0, 100, 200]);
        assert_eq!(s.samples[1].x, 3.0);
        assert!(s.warnings.contains(&IngestWarning::DuplicatesCollapsed { count: 1 }));
        assert!(s.warnings.contains(&IngestWarning::Resorted));
    }

    #[test]
    fn fifty_hz_stream_warns_but_parses() {
        let mut data = String::new();
        for i in 0..500 {
            data.push_str(&format!("{{\"t\":{},\"x\":0,\"y\":0,\"z\":9.81}}\n", i * 20));
        }
        let s = parse_accel_reader(data.as_bytes(), false, "a").unwrap();
        assert_eq!(s.samples.len(), 500);
        assert_eq!(s.nominal_rate_hz, 50.0);
        assert!(s.warnings.contains(&IngestWarning::RateOutOfBand { rate_hz: 50.0 }));
    }

    #[test]
    fn meta_header_and_g_units() {
        let data = "{\"meta\":{\"subject\":\"p7\",\"device\":\"smartwatch\",\"units\":\"g\",\"tz\":\"Europe/Athens\"}}\n{\"t\":0,\"x\":0,\"y\":0,\"z\":1}\n{\"t\":50,\"x\":0,\"y\":0,\"z\":1}\n";
        let s = parse_accel_reader(data.as_bytes(), false, "fallback").unwrap();
        assert_eq!(s.subject_id, "p7");
        assert_eq!(s.device_profile, Some(DeviceProfile::Smartwatch));
        assert_eq!(s.tz.as_deref(), Some("Europe/Athens"));
        assert_eq!(s.samples[0].z, STANDARD_GRAVITY);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = "{\"t\":0,\"x\":0,\"y\":0,\"z\":1}\n{\"t\":50,\"x\":0,\"y\":\n";
        match parse_accel_reader(data.as_bytes(), false, "a") {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_accel_reader("".as_bytes(), false, "a"), Err(IngestError::EmptyStream)));
        assert!(matches!(parse_location_reader("\n\n".as_bytes(), false, "a"), Err(IngestError::EmptyStream)));
    }

    #[test]
    fn csv_location_equivalent() {
        let data = "t,lat,lon,acc\n0,40.1,22.5,5\n60000,40.1001,22.5,7.5\n";
        let s = parse_location_reader(data.as_bytes(), true, "x").unwrap();
        assert_eq!(s.samples.len(), 2);
        assert_eq!(s.samples[1].accuracy, 7.5);
        let bad = "t,lat,lon,acc\n0,40.1,22.5,5\n60000,91.0,22.5,7.5\n";
        assert!(matches!(parse_location_reader(bad.as_bytes(), true, "x"), Err(IngestError::Parse { line: 3, .. })));
    }

    #[test]
    fn constant_signal_resamples_to_constant() {
        let s = uniform(100, 10.0, 0);
        let r = resample(&s, 20.0).unwrap();
        assert_eq!(r.nominal_rate_hz, 20.0);
        assert_eq!(r.samples.len(), 199);
        assert!(r.samples.iter().all(|s| s.x == 0.0 && s.y == 0.0 && s.z == 9.81));
        assert!(r.samples.windows(2).all(|w| w[1].t - w[0].t == 50));
    }

    #[test]
    fn ramp_midpoints_are_means() {
        let mut s = uniform(10, 1.0, 0);
        for (i, p) in s.samples.iter_mut().enumerate() {
            p.x = i as f64;
        }
        let r = resample(&s, 2.0).unwrap();
        for p in &r.samples {
            assert_eq!(p.x, p.t as f64 / 1000.0);
        }
        assert_eq!(r.samples[1].x, 0.5);
    }

    #[test]
    fn resampling_never_fills_a_ten_minute_gap() {
        let mut ts: Vec<i64> = (0..600).map(|i| i * 100).collect();
        ts.extend((0..600).map(|i| 60_000 + 600_000 + i * 100));
        let s = accel(&ts);
        let r = resample(&s, 20.0).unwrap();
        assert!(r.samples.iter().all(|p| p.t <= 59_900 || p.t >= 660_000));
        assert!(!r.samples.is_empty());
    }

    #[test]
    fn location_streams_cannot_be_resampled() {
        let loc = AnyStream::Location(SensorStream {
            subject_id: "s".into(),
            device_profile: None,
            tz: None,
            samples: vec![LocationSample { t: 0, lat: 0.0, lon: 0.0, accuracy: 1.0 }],
            nominal_rate_hz: 0.0,
            warnings: vec![],
        });
        assert!(matches!(resample_any(&loc, 20.0), Err(IngestError::Unsupported(_))));
    }

    #[test]
    fn uniform_stream_is_one_recording_segment() {
        let s = uniform(3000, 10.0, 1_000);
        let c = s.coverage(5.0).unwrap();
        assert_eq!(c.segments.len(), 1);
        assert_eq!(c.segments[0].state, SegmentState::Recording);
    }

    #[test]
    fn one_hole_gives_three_segments() {
        let mut ts: Vec<i64> = (0..100).map(|i| i * 100).collect();
        ts.extend((0..100).map(|i| 9_900 + 60_000 + i * 100));
        let c = accel(&ts).coverage(5.0).unwrap();
        let states: Vec<_> = c.segments.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![SegmentState::Recording, SegmentState::Gap, SegmentState::Recording]);
        assert_eq!(c.segments[1].duration_ms(), 60_000);
    }

    #[test]
    fn window_counts() {
        let s = uniform(6000, 20.0, 0);
        assert_eq!(window(&s, 60.0, 60.0).unwrap().frames.len(), 5);
        let w = window(&s, 60.0, 30.0).unwrap();
        assert_eq!(w.frames.len(), 9);
        assert!(w.frames.iter().all(|f| f.samples.len() == 1200));
        assert!(matches!(window(&s, 0.0, 1.0), Err(IngestError::InvalidArgument(_))));
    }

    #[test]
    fn gap_inside_third_frame_drops_and_flags_it() {
        // 150 s, a 60 s hole, then 150 s more
        let mut ts: Vec<i64> = (0..3000).map(|i| i * 50).collect();
        ts.extend((0..3000).map(|i| 210_000 + i * 50));
        let s = accel(&ts);
        let w = window(&s, 60.0, 60.0).unwrap();
        let starts: Vec<i64> = w.frames.iter().map(|f| f.start_ms).collect();
        assert_eq!(starts, vec![0, 60_000, 210_000, 270_000]);
        assert_eq!(w.flagged(), 1);
        assert_eq!(w.straddling, vec![120_000]);
    }

    #[test]
    fn grid_aligned_windows_start_on_minutes() {
        let s = uniform(2400, 20.0, 30_000);
        let w = window_on_grid(&s, 60.0, 60.0, 60_000).unwrap();
        assert_eq!(w.frames.len(), 1);
        assert_eq!(w.frames[0].start_ms, 60_000);
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let data = "{\"t\":3,\"x\":0.1,\"y\":-1e-7,\"z\":9.80665}\n{\"t\":1,\"x\":0.30000000000000004,\"y\":2.5,\"z\":-3.14159}\n";
        let s = parse_accel_reader(data.as_bytes(), false, "abc").unwrap();
        let mut buf = Vec::new();
        write_jsonl(&s, &mut buf).unwrap();
        let again = parse_accel_reader(buf.as_slice(), false, "zzz").unwrap();
        assert_eq!(again.samples, s.samples);
        assert_eq!(again.subject_id, "abc");
    }

    proptest! {
        #[test]
        fn coverage_partitions_span(dts in proptest::collection::vec(prop_oneof![Just(50i64), 100i64..200, 5_001i64..400_000], 1..300)) {
            let mut ts = vec![0i64];
            for d in &dts { ts.push(ts.last().unwrap() + d); }
            let c = accel(&ts).coverage(5.0).unwrap();
            let first = ts[0];
            let last = *ts.last().unwrap();
            prop_assert_eq!(c.segments.first().unwrap().start_ms, first);
            prop_assert_eq!(c.segments.last().unwrap().end_ms, last);
            for w in c.segments.windows(2) {
                prop_assert_eq!(w[0].end_ms, w[1].start_ms);
                prop_assert!(w[0].state != w[1].state);
            }
            prop_assert_eq!(c.recording_ms() + c.gap_ms(), last - first);
            let n_gaps = dts.iter().filter(|&&d| d > 5000).count();
            prop_assert_eq!(c.segments.iter().filter(|s| s.state == SegmentState::Gap).count(), n_gaps);
        }

        #[test]
        fn resampling_stays_out_of_gaps(layout in proptest::collection::vec((10usize..200, 5_100i64..120_000), 1..6), hz in prop_oneof![Just(20.0f64), Just(7.0), Just(25.0)]) {
            let mut ts = Vec::new();
            let mut t = 12_345i64;
            for (n, gap) in &layout {
                for _ in 0..*n { ts.push(t); t += 100; }
                t += gap;
            }
            let s = accel(&ts);
            let cov = s.coverage(DEFAULT_ACCEL_GAP_S).unwrap();
            let r = resample(&s, hz).unwrap();
            for p in &r.samples {
                prop_assert!(cov.is_recording(p.t), "sample at {} inside a gap", p.t);
            }
            prop_assert!(r.samples.windows(2).all(|w| w[1].t > w[0].t));
        }

        #[test]
        fn gapless_window_count_formula(n in 20usize..4000, len in 1u32..120, hop in 1u32..90) {
            let s = uniform(n, 20.0, 0);
            let span_ms = n as i64 * 50;
            let (len_ms, hop_ms) = (len as i64 * 1000, hop as i64 * 1000);
            let w = window(&s, len as f64, hop as f64).unwrap();
            let expected = if span_ms >= len_ms { ((span_ms - len_ms) / hop_ms) as usize + 1 } else { 0 };
            prop_assert_eq!(w.frames.len(), expected);
            prop_assert_eq!(w.flagged(), 0);
        }
    }
}
