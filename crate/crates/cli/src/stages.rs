//! Pipeline stages. Each stage reads the previous stage's directory under
//! `<out>`, replaces its own directory, and finishes by writing a
//! `manifest.json` that records the config hash and a digest of every file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use chrono_tz::Tz;
use obeskit_core::geoagg::export;
use obeskit_core::geoagg::votes::{voter_tag, VoteError, VoteStore};
use obeskit_core::ingest::{parse_accel_reader, parse_location_reader, write_jsonl, AccelStream, LocationStream, SensorStream};
use obeskit_core::location::{Gazetteer, PoiRecord};
use obeskit_core::model::ModelFile;
use obeskit_core::pipeline::{
    aggregate_population_axes, aggregate_subject, evaluate as evaluate_cases, extract_subject, train_models, DetailedExtract,
    EvalCase, Models, Population, SubjectAggregate, SubjectExtract, SCHEMA_VERSION,
};
use obeskit_core::sim::{self, Scenario, Truth};
use obeskit_core::transport::TripRecord;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Loaded, PipelineConfig};
use crate::error::{Classify, Failure, Outcome};

pub const INGEST: &str = "ingest";
pub const MODELS: &str = "models";
pub const EXTRACT: &str = "extract";
pub const AGGREGATE: &str = "aggregate";
pub const EXPORT: &str = "export";
pub const EVAL: &str = "eval";
pub const MANIFEST: &str = "manifest.json";

/// Stage bookkeeping written next to the stage outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: String,
    pub config_hash: String,
    pub subjects: Vec<String>,
    /// Relative path to hex SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

/// JSON artifact body stamped with the producing configuration.
#[derive(Debug, Serialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

/// Outcome of a stage, printed as JSON on success.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub stage: String,
    pub dir: PathBuf,
    pub subjects: usize,
    pub files: usize,
}

pub struct Context {
    pub cfg: PipelineConfig,
    pub hash: String,
    pool: rayon::ThreadPool,
}

/// Short keyed pseudonym used in place of a subject id downstream of ingest.
pub fn pseudonym(salt: &str, subject: &str) -> String {
    voter_tag(salt.as_bytes(), &format!("pseudonym\0{subject}"))[..16].to_string()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let f = File::open(path).data(format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).data(format!("cannot parse {}", path.display()))
}

/// Reads a JSON artifact written through [`Stamped`], returning its body.
fn read_stamped<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let mut v: Value = read_json(path)?;
    if let Value::Object(m) = &mut v {
        m.remove("config_hash");
    }
    serde_json::from_value(v).data(format!("cannot parse {}", path.display()))
}

/// Reads a scenario or other structured file, TOML unless the extension says JSON.
fn read_structured<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).config(format!("cannot read {}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).config(format!("invalid JSON in {}", path.display()))
    } else {
        toml::from_str(&text).config(format!("invalid TOML in {}", path.display()))
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects a stage's files, then writes its manifest.
struct StageWriter {
    dir: PathBuf,
    stage: &'static str,
    files: BTreeMap<String, String>,
}

impl StageWriter {
    /// Replaces `dir` with an empty directory.
    fn fresh(dir: PathBuf, stage: &'static str) -> Outcome<Self> {
        if dir.exists() {
            fs::remove_dir_all(&dir).internal(format!("cannot clear {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).internal(format!("cannot create {}", dir.display()))?;
        Ok(Self { dir, stage, files: BTreeMap::new() })
    }

    /// Keeps existing contents; used for the simulator's data directory.
    fn keep(dir: PathBuf, stage: &'static str) -> Outcome<Self> {
        fs::create_dir_all(&dir).internal(format!("cannot create {}", dir.display()))?;
        Ok(Self { dir, stage, files: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Outcome<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).internal(format!("cannot create {}", parent.display()))?;
        }
        fs::write(&path, bytes).internal(format!("cannot write {}", path.display()))?;
        self.files.insert(rel.to_string(), digest(bytes));
        Ok(())
    }

    /// Registers a file written by someone else.
    fn record(&mut self, rel: &str) -> Outcome<()> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).internal(format!("cannot read back {}", path.display()))?;
        self.files.insert(rel.to_string(), digest(&bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Outcome<()> {
        let mut bytes = serde_json::to_vec_pretty(value).internal(format!("cannot serialize {rel}"))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn finish(self, ctx: &Context, subjects: Vec<String>, details: Value) -> Outcome<Summary> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            stage: self.stage.to_string(),
            config_hash: ctx.hash.clone(),
            subjects,
            files: self.files,
            details,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).internal("cannot serialize manifest")?;
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, bytes).internal(format!("cannot write {}", path.display()))?;
        Ok(Summary { stage: self.stage.to_string(), dir: self.dir, subjects: manifest.subjects.len(), files: manifest.files.len() })
    }
}

/// JSONL with a leading meta line carrying the schema version and config hash.
fn stamped_jsonl<T: Serialize>(ctx: &Context, rows: &[T]) -> Outcome<Vec<u8>> {
    let mut out = Vec::new();
    let meta = json!({ "meta": { "schema_version": SCHEMA_VERSION, "config_hash": ctx.hash } });
    serde_json::to_writer(&mut out, &meta).internal("jsonl meta")?;
    out.push(b'\n');
    for r in rows {
        serde_json::to_writer(&mut out, r).internal("jsonl row")?;
        out.push(b'\n');
    }
    Ok(out)
}

impl Context {
    pub fn new(loaded: Loaded) -> Outcome<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(loaded.config.workers)
            .build()
            .internal("cannot start worker pool")?;
        Ok(Self { cfg: loaded.config, hash: loaded.hash, pool })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    pub fn data_dir(&self) -> PathBuf {
        self.cfg.input.dir.clone().unwrap_or_else(|| self.cfg.out.join("data"))
    }

    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.cfg.out.join(stage)
    }

    /// Maps items on the worker pool, keeping input order.
    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Outcome<R> + Sync + Send) -> Outcome<Vec<R>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    /// Manifest of an earlier stage, or a missing-dependency data error.
    fn require(&self, stage: &str, needed_by: &str) -> Outcome<Manifest> {
        let path = self.stage_dir(stage).join(MANIFEST);
        if !path.exists() {
            return Err(Failure::Data(anyhow!(
                "missing dependency: `{needed_by}` needs the `{stage}` stage outputs ({} not found)",
                path.display()
            )));
        }
        read_json(&path)
    }
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(ctx: &Context) -> Outcome<Summary> {
    let cfg = &ctx.cfg;
    let scenarios: Vec<Scenario> = if cfg.simulate.scenarios.is_empty() {
        sim::cohort(&cfg.simulate.cohort, cfg.seed).config("invalid cohort")?
    } else {
        cfg.simulate.scenarios.iter().map(|p| read_structured(p)).collect::<Outcome<_>>()?
    };
    let mut seen = BTreeSet::new();
    for s in &scenarios {
        if !seen.insert(s.subject.as_str()) {
            return Err(Failure::Config(anyhow!("duplicate scenario subject {:?}", s.subject)));
        }
    }
    let dir = ctx.data_dir();
    let mut writer = StageWriter::keep(dir.clone(), "simulate")?;
    let indexed: Vec<(u64, &Scenario)> = scenarios.iter().enumerate().map(|(i, s)| (i as u64, s)).collect();
    let written = ctx.par_map(&indexed, |&(i, s)| {
        let out = sim::simulate(s, cfg.seed.wrapping_add(i + 1)).config(format!("scenario {:?}", s.subject))?;
        let sub = dir.join(&s.subject);
        fs::create_dir_all(&sub).internal(format!("cannot create {}", sub.display()))?;
        let mut files = Vec::new();
        if !out.accel.samples.is_empty() {
            write_stream(&sub.join("accel.jsonl"), &out.accel)?;
            files.push(format!("{}/accel.jsonl", s.subject));
        }
        write_stream(&sub.join("location.jsonl"), &out.location)?;
        files.push(format!("{}/location.jsonl", s.subject));
        let truth = serde_json::to_vec_pretty(&out.truth).internal("truth")?;
        fs::write(sub.join("truth.json"), truth).internal("cannot write truth")?;
        files.push(format!("{}/truth.json", s.subject));
        Ok(files)
    })?;
    for rel in written.iter().flatten() {
        writer.record(rel)?;
    }
    let mut gaz = csv::Writer::from_writer(Vec::new());
    for e in sim::cohort_gazetteer(&scenarios) {
        gaz.serialize(e).internal("gazetteer row")?;
    }
    writer.write("gazetteer.csv", &gaz.into_inner().map_err(|e| Failure::Internal(anyhow!("{e}")))?)?;
    let subjects = scenarios.iter().map(|s| s.subject.clone()).collect();
    writer.finish(ctx, subjects, json!({ "seed": cfg.seed }))
}

fn write_stream<S: Serialize>(path: &Path, stream: &SensorStream<S>) -> Outcome<()> {
    let f = File::create(path).internal(format!("cannot create {}", path.display()))?;
    write_jsonl(stream, BufWriter::new(f)).internal(format!("cannot write {}", path.display()))
}

// ---------------------------------------------------------------------------
// train

pub fn train(ctx: &Context) -> Outcome<Summary> {
    let (ty, tr) = train_models(ctx.cfg.seed, &ctx.cfg.train, &ctx.cfg.extract)?;
    let mut writer = StageWriter::fresh(ctx.stage_dir(MODELS), "train")?;
    writer.write_json("activity_type.json", &ty)?;
    writer.write_json("transport.json", &tr)?;
    writer.finish(ctx, Vec::new(), json!({ "seed": ctx.cfg.seed }))
}

fn load_models(ctx: &Context) -> Outcome<Models> {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Outcome<Option<ModelFile>> {
        let path = match explicit {
            Some(p) => p.clone(),
            None => {
                let p = ctx.stage_dir(MODELS).join(name);
                if !p.exists() {
                    return Ok(None);
                }
                p
            }
        };
        ModelFile::load(&path).data(format!("cannot load model {}", path.display())).map(Some)
    };
    Ok(Models {
        activity_type: pick(&ctx.cfg.models.activity_type, "activity_type.json")?,
        transport: pick(&ctx.cfg.models.transport, "transport.json")?,
    })
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone)]
struct SubjectInput {
    id: String,
    accel: Option<PathBuf>,
    location: Option<PathBuf>,
}

fn find_stream(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["jsonl", "csv"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

fn discover(data: &Path) -> Outcome<Vec<SubjectInput>> {
    let entries = fs::read_dir(data).data(format!("cannot read input directory {}", data.display()))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let inputs: Vec<SubjectInput> = dirs
        .iter()
        .filter_map(|d| {
            let id = d.file_name()?.to_str()?.to_string();
            let accel = find_stream(d, "accel");
            let location = find_stream(d, "location");
            if accel.is_none() && location.is_none() {
                log::warn!("skipping {}: no accel or location file", d.display());
                return None;
            }
            Some(SubjectInput { id, accel, location })
        })
        .collect();
    if inputs.is_empty() {
        return Err(Failure::Data(anyhow!("no subject directories with sensor files in {}", data.display())));
    }
    Ok(inputs)
}

fn is_csv(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn open(p: &Path) -> Outcome<BufReader<File>> {
    File::open(p).map(BufReader::new).data(format!("cannot open {}", p.display()))
}

fn read_accel(p: &Path, fallback: &str) -> Outcome<AccelStream> {
    parse_accel_reader(open(p)?, is_csv(p), fallback).data(format!("invalid accelerometer file {}", p.display()))
}

fn read_location(p: &Path, fallback: &str) -> Outcome<LocationStream> {
    parse_location_reader(open(p)?, is_csv(p), fallback).data(format!("invalid location file {}", p.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamSummary {
    samples: usize,
    rate_hz: f64,
    first_t: Option<i64>,
    last_t: Option<i64>,
    warnings: Vec<String>,
}

impl StreamSummary {
    fn of<S: obeskit_core::ingest::Timestamped>(s: &SensorStream<S>) -> Self {
        Self {
            samples: s.samples.len(),
            rate_hz: s.nominal_rate_hz,
            first_t: s.first_t(),
            last_t: s.last_t(),
            warnings: s.warnings.iter().map(|w| format!("{w:?}")).collect(),
        }
    }
}

pub fn ingest(ctx: &Context) -> Outcome<Summary> {
    let cfg = &ctx.cfg;
    let inputs = discover(&ctx.data_dir())?;
    let out_dir = ctx.stage_dir(INGEST);
    let mut writer = StageWriter::fresh(out_dir.clone(), "ingest")?;
    let results = ctx.par_map(&inputs, |input| {
        let mut accel = input.accel.as_deref().map(|p| read_accel(p, &input.id)).transpose()?;
        let mut location = input.location.as_deref().map(|p| read_location(p, &input.id)).transpose()?;
        if let (Some(a), Some(l)) = (&accel, &location) {
            if a.subject_id != l.subject_id {
                return Err(Failure::Data(anyhow!(
                    "{}: accelerometer and location files name different subjects",
                    input.id
                )));
            }
        }
        let declared = accel.as_ref().and_then(|a| a.tz.clone()).or_else(|| location.as_ref().and_then(|l| l.tz.clone()));
        let tz = declared
            .or_else(|| cfg.input.timezone.clone())
            .ok_or_else(|| Failure::Data(anyhow!("{}: no timezone in the streams or in input.timezone", input.id)))?;
        tz.parse::<Tz>().map_err(|_| Failure::Data(anyhow!("{}: unknown timezone {tz:?}", input.id)))?;
        let mut files = Vec::new();
        let mut summary = serde_json::Map::new();
        let sub = out_dir.join(&input.id);
        fs::create_dir_all(&sub).internal(format!("cannot create {}", sub.display()))?;
        if let Some(a) = accel.as_mut() {
            a.tz = Some(tz.clone());
            if let Some(d) = cfg.input.device {
                a.device_profile = Some(d);
            }
            write_stream(&sub.join("accel.jsonl"), a)?;
            files.push(format!("{}/accel.jsonl", input.id));
            summary.insert("accel".into(), serde_json::to_value(StreamSummary::of(a)).internal("summary")?);
        }
        if let Some(l) = location.as_mut() {
            l.tz = Some(tz.clone());
            write_stream(&sub.join("location.jsonl"), l)?;
            files.push(format!("{}/location.jsonl", input.id));
            summary.insert("location".into(), serde_json::to_value(StreamSummary::of(l)).internal("summary")?);
        }
        summary.insert("timezone".into(), tz.into());
        Ok((input.id.clone(), files, Value::Object(summary)))
    })?;
    let mut details = serde_json::Map::new();
    for (id, files, summary) in &results {
        for f in files {
            writer.record(f)?;
        }
        details.insert(id.clone(), summary.clone());
    }
    let subjects = results.into_iter().map(|r| r.0).collect();
    writer.finish(ctx, subjects, Value::Object(details))
}

// ---------------------------------------------------------------------------
// extract

fn load_gazetteer(ctx: &Context) -> Outcome<Option<Gazetteer>> {
    let path = match &ctx.cfg.input.gazetteer {
        Some(p) => p.clone(),
        None => {
            let p = ctx.data_dir().join("gazetteer.csv");
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    Gazetteer::load(&path, ctx.cfg.extract.poi.match_radius_m).data("cannot load gazetteer").map(Some)
}

/// Extracts one ingested subject under its pseudonym.
fn extract_one(ctx: &Context, id: &str, models: &Models, gazetteer: Option<&Gazetteer>) -> Outcome<DetailedExtract> {
    let dir = ctx.stage_dir(INGEST).join(id);
    let accel = find_stream(&dir, "accel").map(|p| read_accel(&p, id)).transpose()?;
    let location = find_stream(&dir, "location").map(|p| read_location(&p, id)).transpose()?;
    let tz_name = accel.as_ref().and_then(|a| a.tz.clone()).or_else(|| location.as_ref().and_then(|l| l.tz.clone()));
    let tz: Tz = tz_name
        .as_deref()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Failure::Data(anyhow!("ingested streams for {id} carry no valid timezone")))?;
    let pseudo = pseudonym(&ctx.cfg.privacy.salt, id);
    extract_subject(&pseudo, accel.as_ref(), location.as_ref(), tz, models, gazetteer, &ctx.cfg.extract)
        .map_err(|e| Failure::from(e).with_subject(&pseudo))
}

fn extract_all(ctx: &Context, ids: &[String]) -> Outcome<Vec<(String, DetailedExtract)>> {
    let models = load_models(ctx)?;
    let gazetteer = load_gazetteer(ctx)?;
    let mut out = ctx.par_map(ids, |id| Ok((id.clone(), extract_one(ctx, id, &models, gazetteer.as_ref())?)))?;
    out.sort_by(|a, b| a.1.extract.subject.cmp(&b.1.extract.subject));
    Ok(out)
}

pub fn extract(ctx: &Context) -> Outcome<Summary> {
    let ingested = ctx.require(INGEST, "extract")?;
    let extracts = extract_all(ctx, &ingested.subjects)?;
    let mut writer = StageWriter::fresh(ctx.stage_dir(EXTRACT), "extract")?;

    let mut indicators = csv::Writer::from_writer(Vec::new());
    indicators.write_record(["subject", "minute_start", "counts", "steps", "level", "type"]).internal("csv")?;
    let mut sleep = csv::Writer::from_writer(Vec::new());
    sleep.write_record(["subject", "SS", "SE", "GST_min", "TTI_min", "NI", "NST_min", "scorer"]).internal("csv")?;
    let mut subjects = Vec::new();
    for (_, d) in &extracts {
        let ex = &d.extract;
        let p = ex.subject.clone();
        for m in &ex.minutes {
            indicators
                .write_record([
                    p.as_str(),
                    &m.minute_start.to_string(),
                    &m.counts.to_string(),
                    &m.steps.to_string(),
                    m.level.as_str(),
                    m.activity_type.map(|t| t.as_str()).unwrap_or(""),
                ])
                .internal("csv")?;
        }
        for s in &ex.sleep {
            let v = &s.session;
            sleep
                .write_record([
                    p.as_str(),
                    &v.ss.to_string(),
                    &v.se.to_string(),
                    &v.gst_min.to_string(),
                    &v.tti_min.to_string(),
                    &v.ni.to_string(),
                    &v.nst_min.to_string(),
                    s.scorer.as_str(),
                ])
                .internal("csv")?;
        }
        let pois: Vec<PoiRecord> = ex.pois.iter().map(PoiRecord::from_redacted).collect::<Result<_, _>>().internal("redaction")?;
        let trips: Vec<TripRecord> = ex.trips.iter().filter_map(TripRecord::from_trip).collect();
        writer.write(&format!("{p}/pois.jsonl"), &stamped_jsonl(ctx, &pois)?)?;
        writer.write(&format!("{p}/trips.jsonl"), &stamped_jsonl(ctx, &trips)?)?;
        writer.write_json(&format!("{p}/extract.json"), &Stamped { config_hash: ctx.hash.clone(), body: ex })?;
        subjects.push(p);
    }
    writer.write("indicators.csv", &indicators.into_inner().map_err(|e| Failure::Internal(anyhow!("{e}")))?)?;
    writer.write("sleep.csv", &sleep.into_inner().map_err(|e| Failure::Internal(anyhow!("{e}")))?)?;
    writer.finish(ctx, subjects, Value::Null)
}

// ---------------------------------------------------------------------------
// aggregate

pub fn aggregate(ctx: &Context) -> Outcome<Summary> {
    let extracted = ctx.require(EXTRACT, "aggregate")?;
    let dir = ctx.stage_dir(EXTRACT);
    let extracts: Vec<SubjectExtract> = extracted
        .subjects
        .iter()
        .map(|p| read_stamped::<SubjectExtract>(&dir.join(p).join("extract.json")))
        .collect::<Outcome<_>>()?;
    let primary = ctx.cfg.extract.scorers[0];
    let salt = ctx.cfg.privacy.salt.as_bytes();
    let individuals: Vec<SubjectAggregate> = ctx.par_map(&extracts, |ex| {
        let voter = voter_tag(salt, &ex.subject);
        aggregate_subject(&voter, ex, &ctx.cfg.aggregate, primary).map_err(|e| Failure::from(e).with_subject(&ex.subject))
    })?;

    let mut writer = StageWriter::fresh(ctx.stage_dir(AGGREGATE), "aggregate")?;
    let store = VoteStore::open(&writer.dir.join("votes.jsonl")).internal("cannot open vote store")?;
    let mut duplicates = 0usize;
    for ind in &individuals {
        for v in &ind.votes {
            match store.insert(v.clone()) {
                Ok(()) => {}
                Err(VoteError::Duplicate) => duplicates += 1,
                Err(e) => return Err(Failure::Internal(e.into())),
            }
        }
    }
    let votes = store.snapshot();
    drop(store);
    writer.record("votes.jsonl")?;
    let mut population = aggregate_population_axes(&votes, &individuals, &ctx.cfg.aggregate)?;
    population.redact_suppressed();
    for (ex, ind) in extracts.iter().zip(&individuals) {
        writer.write_json(&format!("individual/{}.json", ex.subject), &Stamped { config_hash: ctx.hash.clone(), body: ind })?;
    }
    writer.write_json("population.json", &Stamped { config_hash: ctx.hash.clone(), body: &population })?;
    let subjects = extracts.iter().map(|e| e.subject.clone()).collect();
    writer.finish(ctx, subjects, json!({ "votes": votes.len(), "duplicate_votes": duplicates }))
}

// ---------------------------------------------------------------------------
// export

pub fn export(ctx: &Context) -> Outcome<Summary> {
    ctx.require(AGGREGATE, "export")?;
    let path = ctx.stage_dir(AGGREGATE).join("population.json");
    let population: Population = read_stamped(&path)?;
    let mut writer = StageWriter::fresh(ctx.stage_dir(EXPORT), "export")?;
    for (axis, grid) in [("vote", &population.vote), ("visitor", &population.visitor), ("resident", &population.resident)] {
        for (precision, cells) in grid {
            let mut geo = export::to_geojson(cells);
            if let Value::Object(m) = &mut geo {
                m.insert("config_hash".into(), ctx.hash.clone().into());
                m.insert("k_anon".into(), population.k_anon.into());
            }
            writer.write_json(&format!("{axis}_p{precision}.geojson"), &geo)?;
            let mut csv_bytes = Vec::new();
            export::write_csv(&mut csv_bytes, cells).internal("csv export")?;
            writer.write(&format!("{axis}_p{precision}.csv"), &csv_bytes)?;
        }
    }
    writer.finish(ctx, Vec::new(), Value::Null)
}

// ---------------------------------------------------------------------------
// evaluate

pub fn evaluate(ctx: &Context) -> Outcome<Summary> {
    let ingested = ctx.require(INGEST, "evaluate")?;
    let data = ctx.data_dir();
    let mut with_truth = Vec::new();
    let mut truths = Vec::new();
    for id in &ingested.subjects {
        let p = data.join(id).join("truth.json");
        if p.exists() {
            truths.push(read_json::<Truth>(&p)?);
            with_truth.push(id.clone());
        }
    }
    if with_truth.is_empty() {
        return Err(Failure::Data(anyhow!("no truth.json files under {}", data.display())));
    }
    // coordinates are needed for matching, so extraction is repeated in memory
    let extracts = extract_all(ctx, &with_truth)?;
    let truth_of: BTreeMap<&str, &Truth> = with_truth.iter().map(String::as_str).zip(&truths).collect();
    let cases: Vec<EvalCase> = extracts
        .iter()
        .map(|(id, d)| EvalCase { label: d.extract.subject.clone(), extract: d, truth: truth_of[id.as_str()] })
        .collect();
    let report = evaluate_cases(&cases, ctx.cfg.evaluate.thresholds, &ctx.hash)?;
    let mut writer = StageWriter::fresh(ctx.stage_dir(EVAL), "evaluate")?;
    writer.write_json("report.json", &report)?;
    writer.write("report.md", report.to_markdown().as_bytes())?;
    let subjects = extracts.iter().map(|(_, d)| d.extract.subject.clone()).collect();
    writer.finish(ctx, subjects, Value::Null)
}

/// Ingest through export, then evaluation when truth files are present.
pub fn run_all(ctx: &Context) -> Outcome<Vec<Summary>> {
    let mut done = vec![ingest(ctx)?, extract(ctx)?, aggregate(ctx)?, export(ctx)?];
    let ingested: Manifest = read_json(&ctx.stage_dir(INGEST).join(MANIFEST))?;
    if ingested.subjects.iter().any(|id| ctx.data_dir().join(id).join("truth.json").exists()) {
        done.push(evaluate(ctx)?);
    }
    Ok(done)
}
