//! Pipeline configuration: one TOML or JSON file merged over the built-in
//! defaults, then command-line overrides.
//!
//! Precedence, highest first: command-line flags (`--seed`, `--workers`,
//! `--out`), the config file, built-in defaults. Relative paths in the file
//! are resolved against the file's directory; `--out` is resolved against the
//! working directory.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use obeskit_core::eval::MatchThresholds;
use obeskit_core::ingest::DeviceProfile;
use obeskit_core::pipeline::{AggregateConfig, ExtractConfig, TrainConfig};
use obeskit_core::sim::CohortSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Classify, Failure, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Per-subject worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub input: InputConfig,
    pub privacy: PrivacyConfig,
    pub simulate: SimulateConfig,
    pub train: TrainConfig,
    pub models: ModelPaths,
    pub extract: ExtractConfig,
    pub aggregate: AggregateConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            out: PathBuf::from("out"),
            input: InputConfig::default(),
            privacy: PrivacyConfig::default(),
            simulate: SimulateConfig::default(),
            train: TrainConfig::default(),
            models: ModelPaths::default(),
            extract: ExtractConfig::default(),
            aggregate: AggregateConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// One sub-directory per subject holding `accel.{jsonl,csv}`,
    /// `location.{jsonl,csv}` and optionally `truth.json`. Defaults to `<out>/data`.
    pub dir: Option<PathBuf>,
    /// Place gazetteer CSV. Defaults to `<dir>/gazetteer.csv` when present.
    pub gazetteer: Option<PathBuf>,
    /// Used when a stream carries no timezone of its own.
    pub timezone: Option<String>,
    /// Overrides the device profile declared by the streams.
    pub device: Option<DeviceProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    /// Key for subject pseudonyms and voter tags.
    pub salt: String,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self { salt: "obeskit-default-salt".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub cohort: CohortSpec,
    /// Scenario files; when non-empty they replace the generated cohort.
    pub scenarios: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPaths {
    /// Defaults to `<out>/models/activity_type.json` when present.
    pub activity_type: Option<PathBuf>,
    /// Defaults to `<out>/models/transport.json` when present.
    pub transport: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub thresholds: MatchThresholds,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    /// Hex SHA-256 of the effective configuration, excluding `out` and `workers`.
    pub hash: String,
}

/// Recursively overlays `top` onto `base`. Tables merge key by key; every
/// other value, arrays included, replaces what was there.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

fn parse_file(path: &Path) -> Outcome<Value> {
    let text = std::fs::read_to_string(path).config(format!("cannot read config {}", path.display()))?;
    let is_json = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).config(format!("invalid JSON in {}", path.display()))
    } else {
        let t: toml::Value = toml::from_str(&text).config(format!("invalid TOML in {}", path.display()))?;
        serde_json::to_value(t).config("config conversion")
    }
}

fn config_hash(effective: &Value) -> String {
    let mut v = effective.clone();
    if let Value::Object(m) = &mut v {
        m.remove("out");
        m.remove("workers");
    }
    // serde_json maps are ordered, so the serialization is canonical
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Loads, merges, overrides, validates and hashes a configuration file.
pub fn load(path: &Path, overrides: &Overrides) -> Outcome<Loaded> {
    let user = parse_file(path)?;
    if !user.is_object() {
        return Err(Failure::Config(anyhow!("{}: top level must be a table", path.display())));
    }
    let mut effective = serde_json::to_value(PipelineConfig::default()).internal("default config")?;
    merge(&mut effective, user);
    if let Value::Object(m) = &mut effective {
        if let Some(seed) = overrides.seed {
            m.insert("seed".into(), seed.into());
        }
        if let Some(w) = overrides.workers {
            m.insert("workers".into(), w.into());
        }
    }
    let hash = config_hash(&effective);
    let mut config: PipelineConfig =
        serde_json::from_value(effective).config(format!("invalid configuration in {}", path.display()))?;

    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match &overrides.out {
        Some(out) => config.out = out.clone(),
        None => resolve(&base, &mut config.out),
    }
    for p in [&mut config.input.dir, &mut config.input.gazetteer, &mut config.models.activity_type, &mut config.models.transport]
        .into_iter()
        .flatten()
    {
        resolve(&base, p);
    }
    for p in &mut config.simulate.scenarios {
        resolve(&base, p);
    }
    validate(&config)?;
    Ok(Loaded { config, hash })
}

pub fn validate(c: &PipelineConfig) -> Outcome<()> {
    c.extract.validate().map_err(Failure::from)?;
    c.aggregate.validate().map_err(Failure::from)?;
    if c.extract.scorers.is_empty() {
        return Err(Failure::Config(anyhow!("extract.scorers must list at least one scorer")));
    }
    if let Some(tz) = &c.input.timezone {
        tz.parse::<chrono_tz::Tz>().map_err(|_| Failure::Config(anyhow!("unknown timezone {tz:?}")))?;
    }
    if c.privacy.salt.is_empty() {
        return Err(Failure::Config(anyhow!("privacy.salt must not be empty")));
    }
    let t = &c.evaluate.thresholds;
    if !(t.max_dist_m > 0.0 && (0.0..=1.0).contains(&t.min_overlap)) {
        return Err(Failure::Config(anyhow!("evaluate.thresholds out of range")));
    }
    Ok(())
}
