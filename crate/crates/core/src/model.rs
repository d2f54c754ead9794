//! Versioned JSON container for trained classifiers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ml::kernel::RbfOvo;
use crate::ml::linear::LinearOvr;
use crate::ml::{argmax, Scaler};

pub const MODEL_FORMAT: &str = "obeskit-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot access model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unsupported model format {format:?} version {version}")]
    UnsupportedVersion { format: String, version: u32 },
    #[error("model is a {found} model, expected {expected}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("feature specification hash mismatch (model {model}, runtime {runtime})")]
    FeatureSpecMismatch { model: String, runtime: String },
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ActivityType,
    TransportMode,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::ActivityType => "activity_type",
            ModelKind::TransportMode => "transport_mode",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classifier {
    Linear(LinearOvr),
    Rbf(RbfOvo),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub feature_dim: usize,
    pub feature_spec_hash: String,
    pub scaler: Scaler,
    pub classifier: Classifier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_points: Option<[f64; 3]>,
}

/// SHA-256 over the ordered feature names, newline separated.
pub fn feature_spec_hash(names: &[&str]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl ModelFile {
    pub fn new(kind: ModelKind, classes: Vec<String>, feature_names: &[&str], scaler: Scaler, classifier: Classifier) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind,
            classes,
            feature_dim: feature_names.len(),
            feature_spec_hash: feature_spec_hash(feature_names),
            scaler,
            classifier,
            cut_points: None,
        }
    }

    /// Refuses models of another kind, version, or feature specification.
    pub fn check(&self, kind: ModelKind, feature_names: &[&str]) -> Result<(), ModelError> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(ModelError::UnsupportedVersion { format: self.format.clone(), version: self.version });
        }
        if self.kind != kind {
            return Err(ModelError::WrongKind { expected: kind, found: self.kind });
        }
        let runtime = feature_spec_hash(feature_names);
        if runtime != self.feature_spec_hash {
            return Err(ModelError::FeatureSpecMismatch { model: self.feature_spec_hash.clone(), runtime });
        }
        if self.feature_dim != feature_names.len() || self.scaler.dim() != self.feature_dim {
            return Err(ModelError::DimensionMismatch { expected: feature_names.len(), found: self.feature_dim });
        }
        Ok(())
    }

    /// Per-class scores summing to 1. Linear models use a softmax over the
    /// margins; RBF models use pairwise vote shares.
    pub fn scores(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch { expected: self.feature_dim, found: features.len() });
        }
        let x = self.scaler.transform(features);
        Ok(match &self.classifier {
            Classifier::Linear(m) => m.scores(&x),
            Classifier::Rbf(m) => {
                let votes = m.votes(&x);
                let total: usize = votes.iter().sum();
                if total == 0 {
                    vec![1.0 / votes.len() as f64; votes.len()]
                } else {
                    votes.iter().map(|&v| v as f64 / total as f64).collect()
                }
            }
        })
    }

    /// Predicted class index.
    pub fn predict(&self, features: &[f64]) -> Result<usize, ModelError> {
        if features.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch { expected: self.feature_dim, found: features.len() });
        }
        Ok(match &self.classifier {
            Classifier::Linear(m) => argmax(&m.decision(&self.scaler.transform(features))),
            Classifier::Rbf(m) => m.predict(&self.scaler.transform(features)),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| ModelError::Malformed(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = File::open(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        let m: Self = serde_json::from_reader(BufReader::new(f)).map_err(|e| ModelError::Malformed(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(ModelError::UnsupportedVersion { format: m.format, version: m.version });
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::linear::LinearParams;

    fn toy() -> ModelFile {
        let rows = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0]];
        let labels = [0, 0, 1, 1];
        let scaler = Scaler::fit(&rows);
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
        let lin = LinearOvr::train(&xs, &labels, 2, &LinearParams::default()).unwrap();
        ModelFile::new(ModelKind::ActivityType, vec!["a".into(), "b".into()], &["f1", "f2"], scaler, Classifier::Linear(lin))
    }

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = toy();
        m.save(&p).unwrap();
        assert_eq!(ModelFile::load(&p).unwrap(), m);
    }

    #[test]
    fn refuses_a_different_feature_spec() {
        let m = toy();
        assert!(m.check(ModelKind::ActivityType, &["f1", "f2"]).is_ok());
        assert!(matches!(m.check(ModelKind::ActivityType, &["f2", "f1"]), Err(ModelError::FeatureSpecMismatch { .. })));
        assert!(matches!(m.check(ModelKind::TransportMode, &["f1", "f2"]), Err(ModelError::WrongKind { .. })));
    }

    #[test]
    fn refuses_unknown_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = toy();
        m.version = 7;
        m.save(&p).unwrap();
        assert!(matches!(ModelFile::load(&p), Err(ModelError::UnsupportedVersion { version: 7, .. })));
    }

    #[test]
    fn scores_normalize_and_dimension_is_checked() {
        let m = toy();
        let s = m.scores(&[0.05, 0.0]).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.predict(&[5.0, 5.0]).unwrap(), 1);
        assert!(matches!(m.scores(&[1.0]), Err(ModelError::DimensionMismatch { .. })));
    }
}
