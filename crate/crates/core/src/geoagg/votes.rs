//! Anonymous per-visit votes and the append-only vote log.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use super::geohash::Geohash;

/// Payload keys that could carry coordinates or identities.
const FORBIDDEN_KEYS: [&str; 8] = ["lat", "lon", "latitude", "longitude", "lng", "subject", "subject_id", "user"];

#[derive(Debug, Error)]
pub enum VoteError {
    #[error("duplicate vote for this visit")]
    Duplicate,
    #[error("visit lasts {duration_s} s, shorter than {min_s} s")]
    TooShort { duration_s: f64, min_s: f64 },
    #[error("payload key {0:?} is not allowed")]
    ForbiddenKey(String),
    #[error("payload value for {0:?} is not finite")]
    NonFinite(String),
    #[error("vote log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("vote log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

/// Keyed hash of a subject id; only used to suppress double voting.
pub fn voter_tag(salt: &[u8], subject_id: &str) -> String {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(salt).expect("HMAC accepts keys of any length");
    mac.update(subject_id.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeohashVote {
    pub gh: Geohash,
    pub voter: String,
    pub t0: i64,
    pub t1: i64,
    pub payload: BTreeMap<String, f64>,
}

impl GeohashVote {
    fn key(&self) -> (String, Geohash, i64, i64) {
        (self.voter.clone(), self.gh.clone(), self.t0, self.t1)
    }
}

/// Builds a vote for one visit after checking duration and payload hygiene.
pub fn cast_vote(
    gh: Geohash,
    voter: String,
    visit: (i64, i64),
    payload: BTreeMap<String, f64>,
    min_visit_s: f64,
) -> Result<GeohashVote, VoteError> {
    let duration_s = (visit.1 - visit.0) as f64 / 1000.0;
    if duration_s < min_visit_s || visit.1 <= visit.0 {
        return Err(VoteError::TooShort { duration_s, min_s: min_visit_s });
    }
    for (k, v) in &payload {
        let lower = k.to_ascii_lowercase();
        if FORBIDDEN_KEYS.iter().any(|f| lower == *f || lower.split(['.', '_']).any(|part| part == *f)) {
            return Err(VoteError::ForbiddenKey(k.clone()));
        }
        if !v.is_finite() {
            return Err(VoteError::NonFinite(k.clone()));
        }
    }
    Ok(GeohashVote { gh, voter, t0: visit.0, t1: visit.1, payload })
}

/// Splits a visit into fixed intervals for interval-triggered voting; a
/// trailing remainder shorter than the interval is dropped.
pub fn split_visit(t0: i64, t1: i64, interval_s: f64) -> Vec<(i64, i64)> {
    let step = (interval_s * 1000.0).round() as i64;
    if step <= 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut a = t0;
    while a + step <= t1 {
        out.push((a, a + step));
        a += step;
    }
    out
}

#[derive(Debug, Default)]
struct Inner {
    seen: HashSet<(String, Geohash, i64, i64)>,
    votes: Vec<GeohashVote>,
    log: Option<File>,
}

/// Thread-safe vote store backed by an optional append-only JSONL log.
#[derive(Debug, Default)]
pub struct VoteStore {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl VoteStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log and replays it.
    pub fn open(path: &Path) -> Result<Self, VoteError> {
        let io = |source| VoteError::Io { path: path.to_owned(), source };
        let mut inner = Inner::default();
        if path.exists() {
            let f = File::open(path).map_err(io)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: GeohashVote = serde_json::from_str(&line)
                    .map_err(|e| VoteError::Corrupt { path: path.to_owned(), line: i + 1, message: e.to_string() })?;
                if inner.seen.insert(v.key()) {
                    inner.votes.push(v);
                }
            }
        }
        inner.log = Some(OpenOptions::new().create(true).append(true).open(path).map_err(io)?);
        Ok(Self { inner: Mutex::new(inner), path: Some(path.to_owned()) })
    }

    /// Records a vote; an identical visit already present is rejected and leaves the store unchanged.
    pub fn insert(&self, vote: GeohashVote) -> Result<(), VoteError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let key = vote.key();
        if inner.seen.contains(&key) {
            return Err(VoteError::Duplicate);
        }
        if let Some(f) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&vote).map_err(|e| VoteError::Io {
                path: self.path.clone().unwrap_or_default(),
                source: std::io::Error::other(e),
            })?;
            line.push(b'\n');
            // one write per vote keeps lines whole
            f.write_all(&line)
                .and_then(|_| f.flush())
                .map_err(|source| VoteError::Io { path: self.path.clone().unwrap_or_default(), source })?;
        }
        inner.seen.insert(key);
        inner.votes.push(vote);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consistent copy of all votes accepted so far.
    pub fn snapshot(&self) -> Vec<GeohashVote> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).votes.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoagg::geohash::encode;
    use std::sync::Arc;

    fn gh() -> Geohash {
        encode(40.64, 22.94, 7).unwrap()
    }

    fn payload() -> BTreeMap<String, f64> {
        BTreeMap::from([("steps_per_hour".to_string(), 420.0), ("visit.park".to_string(), 1.0)])
    }

    #[test]
    fn tags_are_keyed_and_stable() {
        let a = voter_tag(b"salt", "subject-1");
        assert_eq!(a, voter_tag(b"salt", "subject-1"));
        assert_ne!(a, voter_tag(b"pepper", "subject-1"));
        assert_eq!(a.len(), 64);
        assert!(!a.contains("subject"));
    }

    #[test]
    fn same_visit_twice_is_stored_once() {
        let store = VoteStore::in_memory();
        let v = cast_vote(gh(), voter_tag(b"k", "s"), (0, 1_200_000), payload(), 600.0).unwrap();
        store.insert(v.clone()).unwrap();
        assert!(matches!(store.insert(v), Err(VoteError::Duplicate)));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn visits_on_different_days_are_two_votes() {
        let store = VoteStore::in_memory();
        let tag = voter_tag(b"k", "s");
        store.insert(cast_vote(gh(), tag.clone(), (0, 1_200_000), payload(), 600.0).unwrap()).unwrap();
        store.insert(cast_vote(gh(), tag, (86_400_000, 87_600_000), payload(), 600.0).unwrap()).unwrap();
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn payload_hygiene() {
        let mut p = payload();
        p.insert("lat".into(), 40.0);
        assert!(matches!(cast_vote(gh(), "t".into(), (0, 1_000_000), p, 600.0), Err(VoteError::ForbiddenKey(_))));
        let mut p = payload();
        p.insert("x".into(), f64::NAN);
        assert!(matches!(cast_vote(gh(), "t".into(), (0, 1_000_000), p, 600.0), Err(VoteError::NonFinite(_))));
        assert!(matches!(cast_vote(gh(), "t".into(), (0, 100_000), payload(), 600.0), Err(VoteError::TooShort { .. })));
    }

    #[test]
    fn serialized_votes_carry_no_coordinates_or_subject() {
        let v = cast_vote(gh(), voter_tag(b"k", "kid-042"), (0, 1_200_000), payload(), 600.0).unwrap();
        let line = serde_json::to_string(&v).unwrap();
        for needle in ["\"lat\"", "\"lon\"", "kid-042", "40.64", "22.94"] {
            assert!(!line.contains(needle), "{needle} in {line}");
        }
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line).unwrap().keys().cloned().collect();
        assert_eq!(keys, ["gh", "payload", "t0", "t1", "voter"]);
    }

    #[test]
    fn log_is_replayed_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.jsonl");
        let v = cast_vote(gh(), "t".into(), (0, 1_200_000), payload(), 600.0).unwrap();
        {
            let store = VoteStore::open(&path).unwrap();
            store.insert(v.clone()).unwrap();
        }
        let store = VoteStore::open(&path).unwrap();
        assert_eq!(store.snapshot(), vec![v.clone()]);
        assert!(matches!(store.insert(v), Err(VoteError::Duplicate)));
    }

    #[test]
    fn concurrent_writers_keep_one_vote_per_visit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.jsonl");
        let store = Arc::new(VoteStore::open(&path).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|w| {
                let store = Arc::clone(&store);
                std::thread::spawn(move || {
                    let mut accepted = 0;
                    for i in 0..50i64 {
                        // every writer submits the same 50 visits, plus 10 of its own
                        let voter = if i < 40 { "shared".to_string() } else { format!("w{w}") };
                        let v = cast_vote(gh(), voter, (i * 2_000_000, i * 2_000_000 + 900_000), BTreeMap::new(), 600.0).unwrap();
                        if store.insert(v).is_ok() {
                            accepted += 1;
                        }
                    }
                    accepted
                })
            })
            .collect();
        let accepted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(accepted, 40 + 8 * 10);
        assert_eq!(store.len(), 120);
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 120);
        assert!(lines.lines().all(|l| serde_json::from_str::<GeohashVote>(l).is_ok()));
    }

    #[test]
    fn interval_mode_splits_visits() {
        assert_eq!(split_visit(0, 2_500_000, 1000.0), vec![(0, 1_000_000), (1_000_000, 2_000_000)]);
        assert!(split_visit(0, 10, 0.0).is_empty());
    }
}
