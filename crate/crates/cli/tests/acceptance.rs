//! Acceptance suite. Each criterion prints one status line to stderr (not
//! captured by the harness) and then asserts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use obeskit_core::eval::{
    brute_force_matching_size, compatible, css, match_pois, sleep_eval, EvalReport, MatchThresholds, PoiMatchResult,
    RecordingPair, StaySpan, TruthSession,
};
use obeskit_core::geo::LatLon;
use obeskit_core::geoagg::aggregate::{aggregate_grid, aggregate_population, roll_up, Contribution};
use obeskit_core::geoagg::geohash::{encode, Geohash};
use obeskit_core::geoagg::votes::{cast_vote, VoteError, VoteStore};
use obeskit_core::ingest::parse_location;
use obeskit_core::location::{detect_pois, PoiConfig};
use obeskit_core::ml::kernel::{balanced_class_weights, RbfOvo, RbfParams, DEFAULT_C};
use obeskit_core::model::{Classifier, ModelFile};
use obeskit_core::pipeline::{evaluate, extract_subject, EvalCase, ExtractConfig, Models};
use obeskit_core::sim::{dwell_scenario, gait_suite, night_scenario, simulate, Scenario};
use obeskit_core::sleep::{segment_sessions, EpochScore, Scorer, SleepConfig, SleepLabel, SleepSession};
use obeskit_core::transport::{train_transport, TransportMode, TRANSPORT_FEATURE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn report(n: usize, title: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} [{status}] {title}: {detail}");
}

/// Runs `body`, prints the status line, then re-raises any failure.
fn criterion(n: usize, title: &str, body: impl FnOnce() -> String + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(body) {
        Ok(detail) => report(n, title, true, &detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            report(n, title, false, &msg);
            std::panic::resume_unwind(e);
        }
    }
}

// ---------------------------------------------------------------------------
// End-to-end fixture shared by the privacy and determinism criteria.

struct Run {
    _dir: tempfile::TempDir,
    out: PathBuf,
}

const E2E_CONFIG: &str = r#"seed = 11
[simulate.cohort]
subjects = 6
accel_hours = [7, 10]
[aggregate.indicators]
min_day_hours = 2.0
"#;

fn obeskit(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_obeskit")).args(args).output().expect("spawn obeskit");
    assert!(out.status.success(), "obeskit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn end_to_end(workers: usize) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, E2E_CONFIG).unwrap();
    let out = dir.path().join("out");
    let (cfg_s, out_s, w) = (cfg.to_str().unwrap(), out.to_str().unwrap(), workers.to_string());
    for stage in ["simulate", "train", "run"] {
        obeskit(&[stage, "--config", cfg_s, "--out", out_s, "--workers", &w]);
    }
    Run { _dir: dir, out }
}

fn runs() -> &'static (Run, Run) {
    static RUNS: OnceLock<(Run, Run)> = OnceLock::new();
    RUNS.get_or_init(|| (end_to_end(1), end_to_end(4)))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = std::fs::read_dir(&d) else { continue };
        for e in rd {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_metric_math() {
    criterion(1, "precision/recall/F1 from reference counts", || {
        let t0 = Instant::now();
        let rows = [(8, 0, 1, 1.00, 0.89, 0.94), (15, 2, 4, 0.88, 0.79, 0.83), (13, 2, 3, 0.87, 0.81, 0.84)];
        let results: Vec<PoiMatchResult> = rows.iter().map(|r| PoiMatchResult::from_counts(r.0, r.1, r.2)).collect();
        let round2 = |x: Option<f64>| format!("{:.2}", x.unwrap());
        for (r, m) in rows.iter().zip(&results) {
            assert_eq!(round2(m.precision), format!("{:.2}", r.3), "{r:?}");
            assert_eq!(round2(m.recall), format!("{:.2}", r.4), "{r:?}");
            assert_eq!(round2(m.f1), format!("{:.2}", r.5), "{r:?}");
        }
        let total = PoiMatchResult::sum(&results);
        assert_eq!((total.tp, total.fp, total.fn_), (36, 4, 8));
        assert_eq!(total, PoiMatchResult::from_counts(36, 4, 8));
        assert_eq!((round2(total.precision), round2(total.recall), round2(total.f1)), ("0.90".into(), "0.82".into(), "0.86".into()));
        let elapsed = t0.elapsed();
        assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
        format!("F1 0.94/0.83/0.84, pooled 0.86 in {elapsed:?}")
    });
}

fn session(ss_min: i64, len_min: i64) -> SleepSession {
    SleepSession::new(ss_min * 60_000, (ss_min + len_min) * 60_000, 0.0, 0).unwrap()
}

fn truth(ss_min: i64, len_min: i64) -> TruthSession {
    TruthSession { ss: ss_min * 60_000, se: (ss_min + len_min) * 60_000, interrupts: Some(Vec::new()) }
}

/// Recording `i` of a set: matched ones get one truth and one prediction
/// `i + 1` minutes longer; unmatched ones get a wildly wrong second prediction.
fn recording(i: usize, matched: bool) -> RecordingPair {
    let base = 1000 * i as i64;
    let mut predicted = vec![session(base, 480 + i as i64 + 1)];
    if !matched {
        predicted.push(session(base + 600, 300));
    }
    RecordingPair { recording: format!("r{i}"), truth: vec![truth(base, 480)], predicted }
}

#[test]
fn criterion_02_consistency_score() {
    criterion(2, "session-count consistency and count-matched errors", || {
        let mut lines = Vec::new();
        for (n, unmatched) in [(1usize, vec![]), (1, vec![0]), (3, vec![1]), (29, vec![0, 4, 5, 17, 28])] {
            let set: Vec<RecordingPair> = (0..n).map(|i| recording(i, !unmatched.contains(&i))).collect();
            let want = (n - unmatched.len()) as f64 / n as f64;
            let counts: Vec<(usize, usize)> = set.iter().map(|r| (r.truth.len(), r.predicted.len())).collect();
            assert_eq!(css(&counts), want, "N={n}");
            let res = sleep_eval(&set).unwrap();
            assert_eq!(res.css, want, "N={n}");
            assert_eq!(res.count_matched, n - unmatched.len());
            // GST errors are i + 1 minutes, and only matched recordings count
            let matched: Vec<f64> = (0..n).filter(|i| !unmatched.contains(i)).map(|i| (i + 1) as f64).collect();
            match res.ae.get("GST") {
                Some(g) => {
                    assert_eq!(g.n, matched.len());
                    let mean = matched.iter().sum::<f64>() / matched.len() as f64;
                    assert!((g.mean - mean).abs() < 1e-12, "N={n}: {} vs {mean}", g.mean);
                    assert_eq!(g.max, matched.iter().copied().fold(0.0, f64::max));
                }
                None => assert!(matched.is_empty()),
            }
            lines.push(format!("N={n} CSS {}/{n}", n - unmatched.len()));
        }
        lines.join(", ")
    });
}

fn three_class_rows(dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, n) in [(0usize, 100usize), (1, 50), (2, 200)] {
        for _ in 0..n {
            rows.push((0..dim).map(|d| if d == class { 3.0 } else { 0.0 } + rng.random_range(-0.5..0.5)).collect());
            labels.push(class);
        }
    }
    (rows, labels)
}

#[test]
fn criterion_03_class_weights_and_kernel() {
    criterion(3, "class weights, gamma and C", || {
        assert_eq!(balanced_class_weights(&[100, 50, 200]), vec![0.5, 1.0, 0.25]);
        let (rows, labels) = three_class_rows(4, 1);
        let clf = RbfOvo::train(&rows, &labels, 3, &RbfParams::default()).unwrap();
        assert_eq!(clf.class_weights, vec![0.5, 1.0, 0.25]);
        assert_eq!(clf.gamma, 1.0 / 4.0);
        assert_eq!(clf.c, 1000.0);

        let (rows, labels) = three_class_rows(TRANSPORT_FEATURE_DIM, 2);
        let modes: Vec<TransportMode> = labels.iter().map(|&l| TransportMode::ALL[l]).collect();
        let model = train_transport(&rows, &modes, &RbfParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transport.json");
        model.save(&path).unwrap();
        let Classifier::Rbf(saved) = ModelFile::load(&path).unwrap().classifier else { panic!("not an RBF model") };
        assert_eq!(saved.gamma, 1.0 / TRANSPORT_FEATURE_DIM as f64);
        assert_eq!(saved.c, DEFAULT_C);
        assert_eq!(&saved.class_weights[..3], &[0.5, 1.0, 0.25]);

        // the model written by the `train` command carries the same defaults
        let (a, _) = runs();
        let cli = ModelFile::load(&a.out.join("models/transport.json")).unwrap();
        let Classifier::Rbf(cli) = cli.classifier else { panic!("not an RBF model") };
        assert_eq!((cli.c, cli.gamma), (1000.0, 1.0 / TRANSPORT_FEATURE_DIM as f64));
        format!("weights (0.5, 1, 0.25), gamma 1/{TRANSPORT_FEATURE_DIM}, C {DEFAULT_C} persisted")
    });
}

fn count_steps_in(samples: Vec<obeskit_core::ingest::AccelSample>, rate: f64) -> Vec<(i64, u32)> {
    use obeskit_core::activity::{count_steps, StepConfig};
    use obeskit_core::ingest::{resample, window, AccelStream, DeviceProfile};
    let stream = AccelStream {
        subject_id: "gait".into(),
        device_profile: Some(DeviceProfile::Smartwatch),
        tz: None,
        samples,
        nominal_rate_hz: rate,
        warnings: Vec::new(),
    };
    let stream = resample(&stream, 20.0).unwrap();
    let w = window(&stream, 1.0, 1.0).unwrap();
    count_steps(&w.frames, DeviceProfile::Smartwatch, &StepConfig::default())
        .unwrap()
        .into_iter()
        .map(|e| (e.window_start, e.steps))
        .collect()
}

#[test]
fn criterion_04_step_detector() {
    criterion(4, "step detector on synthetic gait", || {
        let (mut bouts_n, mut shakes_n, mut worst) = (0, 0, 0u32);
        let mut hour = Vec::new();
        let mut offset = 0i64;
        for seed in 0..4 {
            let (samples, bouts, shakes) = gait_suite(seed, 20.0);
            let end = samples.last().unwrap().t;
            hour.extend(samples.iter().map(|s| {
                let mut s = *s;
                s.t += offset;
                s
            }));
            offset += end + 50;
            let est = count_steps_in(samples, 20.0);
            let within = |a: i64, b: i64| est.iter().filter(|(t, _)| *t >= a && *t < b).map(|(_, s)| *s).sum::<u32>();
            for b in &bouts {
                let got = within(b.start, b.end);
                worst = worst.max(got.abs_diff(b.steps));
                assert!(got.abs_diff(b.steps) <= 2, "seed {seed} bout at {}: truth {} got {got}", b.start, b.steps);
            }
            for &(a, b) in &shakes {
                assert_eq!(within(a, b), 0, "seed {seed} shake at {a}");
            }
            bouts_n += bouts.len();
            shakes_n += shakes.len();
        }
        // extend to a full hour of 20 Hz samples by repetition
        let span = offset;
        let base = hour.clone();
        let mut k = 1;
        while hour.len() < 72_000 {
            hour.extend(base.iter().map(|s| {
                let mut s = *s;
                s.t += k * span;
                s
            }));
            k += 1;
        }
        hour.truncate(72_000);
        let t0 = Instant::now();
        let est = count_steps_in(hour, 20.0);
        let elapsed = t0.elapsed();
        assert!(!est.is_empty());
        assert!(elapsed.as_secs_f64() < 10.0, "1 h took {elapsed:?}");
        format!("{bouts_n} bouts within {worst} steps, {shakes_n} shakes at 0, 1 h in {elapsed:?}")
    });
}

fn scenario_report(scenarios: Vec<Scenario>) -> EvalReport {
    let cfg = ExtractConfig::default();
    let outs: Vec<_> = scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let out = simulate(s, 100 + i as u64).unwrap();
            let tz = s.timezone.parse().unwrap();
            let ex = extract_subject(&s.subject, Some(&out.accel), Some(&out.location), tz, &Models::default(), None, &cfg).unwrap();
            (s.subject.clone(), ex, out.truth)
        })
        .collect();
    let cases: Vec<EvalCase> = outs.iter().map(|(l, e, t)| EvalCase { label: l.clone(), extract: e, truth: t }).collect();
    evaluate(&cases, MatchThresholds::default(), "acceptance").unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best number of compatible pairs over every assignment of truth stays to
/// distinct detections (slots past the detections mean "unmatched").
fn permutation_oracle(compat: &[Vec<bool>], n_det: usize) -> usize {
    let n = compat.len().max(n_det);
    permutations(n)
        .iter()
        .map(|p| (0..compat.len()).filter(|&i| p[i] < n_det && compat[i][p[i]]).count())
        .max()
        .unwrap_or(0)
}

fn random_stay(rng: &mut ChaCha8Rng) -> StaySpan {
    let origin = LatLon { lat: 40.63, lon: 22.94 };
    let arrive_t = rng.random_range(0..6) * 600_000;
    StaySpan {
        center: LatLon {
            lat: origin.lat + rng.random_range(-0.0015..0.0015),
            lon: origin.lon + rng.random_range(-0.002..0.002),
        },
        arrive_t,
        depart_t: arrive_t + rng.random_range(1..6) * 600_000,
    }
}

#[test]
fn criterion_05_poi_detector_and_matcher() {
    criterion(5, "PoI detection F1 and matcher oracle", || {
        let report = scenario_report((0..10).map(|i| dwell_scenario(i, 7)).collect());
        let total = report.pois_total.expect("pooled PoI result");
        assert!(total.f1.unwrap() >= 0.9, "pooled {total:?}");
        for (s, r) in &report.pois {
            assert!(r.f1.unwrap() >= 0.9, "{s}: {r:?}");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let thr = MatchThresholds::default();
        let mut nonzero = 0;
        for case in 0..1000 {
            let truth: Vec<StaySpan> = (0..rng.random_range(0..=6)).map(|_| random_stay(&mut rng)).collect();
            let det: Vec<StaySpan> = (0..rng.random_range(0..=6)).map(|_| random_stay(&mut rng)).collect();
            let compat: Vec<Vec<bool>> = truth.iter().map(|t| det.iter().map(|d| compatible(t, d, &thr)).collect()).collect();
            let want = permutation_oracle(&compat, det.len());
            let (res, pairs) = match_pois(&truth, &det, &thr);
            assert_eq!(res.tp, want, "case {case}");
            assert_eq!(res.fp + res.tp, det.len());
            assert_eq!(res.fn_ + res.tp, truth.len());
            assert_eq!(pairs.len(), want);
            let (ts, ds): (BTreeSet<usize>, BTreeSet<usize>) = (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect());
            assert_eq!((ts.len(), ds.len()), (want, want), "case {case}: not one-to-one");
            assert!(pairs.iter().all(|&(i, j)| compat[i][j]), "case {case}: incompatible pair");
            if !compat.is_empty() {
                assert_eq!(brute_force_matching_size(&compat), want, "case {case}");
            }
            nonzero += usize::from(want > 0);
        }
        format!("dwell suite F1 {:.3}, 1000 matcher instances agree ({nonzero} non-trivial)", total.f1.unwrap())
    });
}

fn random_scores(rng: &mut ChaCha8Rng) -> Vec<EpochScore> {
    let mut out = Vec::new();
    let mut t = 1_700_000_000_000i64 + rng.random_range(0..1440) * 60_000;
    let runs = rng.random_range(1..40);
    for _ in 0..runs {
        let label = if rng.random_bool(0.5) { SleepLabel::Sleep } else { SleepLabel::Wake };
        let len = if rng.random_bool(0.3) { rng.random_range(60..300) } else { rng.random_range(1..40) };
        for _ in 0..len {
            out.push(EpochScore { minute_start: t, counts: 0.0, label, scorer: Scorer::Cole });
            t += 60_000;
        }
        if rng.random_bool(0.1) {
            // an unworn gap
            t += rng.random_range(1..90) * 60_000;
        }
    }
    out
}

#[test]
fn criterion_06_sleep_identities() {
    criterion(6, "sleep session identities and night GST error", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SleepConfig::default();
        let mut sessions = 0;
        for case in 0..500 {
            for s in segment_sessions(&random_scores(&mut rng), &cfg) {
                assert_eq!(s.gst_min, (s.se - s.ss) as f64 / 60_000.0, "case {case}");
                assert_eq!(s.nst_min, s.gst_min - s.tti_min, "case {case}");
                assert_eq!(s.ni == 0, s.tti_min == 0.0, "case {case}: {s:?}");
                sessions += 1;
            }
        }
        assert!(sessions > 100, "only {sessions} sessions emitted");

        let report = scenario_report((0..10).map(|i| night_scenario(i, 7)).collect());
        let mut parts = vec![format!("{sessions} sessions hold")];
        for (scorer, r) in &report.sleep {
            let gst = &r.ae["GST"];
            assert!(r.count_matched > 0, "{scorer}: no count-matched recordings");
            assert!(gst.mean <= 12.0, "{scorer}: GST {gst:?}");
            parts.push(format!("{scorer} CSS {:.2} GST AE mean {:.1} max {:.1}", r.css, gst.mean, gst.max));
        }
        assert_eq!(report.sleep["cole"].css, 1.0);
        parts.join(", ")
    });
}

#[test]
fn criterion_07_geohash() {
    criterion(7, "geohash prefix and containment", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (lat, lon) = (rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0));
            let full = encode(lat, lon, 12).unwrap();
            for p in 1..=12 {
                let g = encode(lat, lon, p).unwrap();
                assert_eq!(g, full.truncate(p), "({lat}, {lon}) p{p}");
                assert!(g.is_prefix_of(&full));
                assert!(g.bbox().contains(lat, lon), "({lat}, {lon}) not in {}", g.as_str());
                assert_eq!(Geohash::parse(g.as_str()).unwrap(), g);
            }
        }
        let reference = encode(57.64911, 10.40744, 11).unwrap();
        assert_eq!(reference.as_str(), "u4pruydqqvj");
        "10000 points x 12 precisions, reference u4pruydqqvj".into()
    });
}

#[test]
fn criterion_08_aggregation_integrity() {
    criterion(8, "roll-up, k-anonymity and duplicate votes", || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let parent = Geohash::parse("sx0r4").unwrap();
        let alphabet: Vec<char> = "0123456789bcdefghjkmnpqrstuvwxyz".chars().collect();
        let edges = BTreeMap::new();
        for case in 0..200 {
            let n = rng.random_range(1..80);
            let mut exact = 0i64;
            let contribs: Vec<Contribution> = (0..n)
                .map(|_| {
                    let code: String = parent.as_str().chars().chain((0..2).map(|_| alphabet[rng.random_range(0..32)])).collect();
                    let eighths = rng.random_range(-8000..8000i64);
                    exact += eighths;
                    Contribution {
                        geohash: Geohash::parse(&code).unwrap(),
                        voter: format!("v{}", rng.random_range(0..12)),
                        values: BTreeMap::from([("x".to_string(), eighths as f64 / 8.0), ("y".to_string(), rng.random_range(-1e6..1e6))]),
                    }
                })
                .collect();
            let children: Vec<_> = aggregate_grid(&contribs, 6, 5, &edges).unwrap().into_values().collect();
            let rolled = roll_up(&children, &parent, 5, &edges).unwrap();
            let direct = aggregate_population(&contribs, &parent, 5, &edges).unwrap();
            assert_eq!(rolled.n_votes, n, "case {case}");
            assert_eq!(rolled.n_votes, children.iter().map(|c| c.n_votes).sum::<usize>());
            assert_eq!(rolled.n_voters, direct.n_voters, "case {case}");
            assert_eq!(rolled.stats["x"].sum, exact as f64 / 8.0, "case {case}");
            assert_eq!(rolled.stats["y"].sum.to_bits(), direct.stats["y"].sum.to_bits(), "case {case}");
            assert_eq!(rolled.published, direct.published);
        }

        let cell = Geohash::parse("sx0r45y").unwrap();
        let votes = |k: usize| -> Vec<Contribution> {
            (0..k)
                .map(|i| Contribution { geohash: cell.clone(), voter: format!("voter-{i}"), values: BTreeMap::from([("x".into(), 1.0)]) })
                .collect()
        };
        assert!(!aggregate_population(&votes(4), &cell, 5, &edges).unwrap().published);
        assert!(aggregate_population(&votes(5), &cell, 5, &edges).unwrap().published);

        let store = Arc::new(VoteStore::in_memory());
        let vote = cast_vote(cell.clone(), "voter-0".into(), (0, 3_600_000), BTreeMap::from([("x".into(), 1.0)]), 900.0).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (store, vote) = (Arc::clone(&store), vote.clone());
                std::thread::spawn(move || {
                    let mut accepted = 0;
                    for _ in 0..100 {
                        match store.insert(vote.clone()) {
                            Ok(()) => accepted += 1,
                            Err(VoteError::Duplicate) => {}
                            Err(e) => panic!("{e}"),
                        }
                    }
                    accepted
                })
            })
            .collect();
        let accepted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(accepted, 1);
        assert_eq!(store.len(), 1);
        "200 random roll-ups exact, 4 voters suppressed / 5 published, 800 concurrent inserts kept 1".into()
    });
}

fn numeric_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == 'e' || c == 'E' || c == '+'))
        .filter(|t| t.contains('.') && t.chars().any(|c| c.is_ascii_digit()))
        .map(|t| t.trim_start_matches(['-', '+']))
}

fn json_keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                out.insert(k.clone());
                json_keys(v, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|v| json_keys(v, out)),
        _ => {}
    }
}

#[test]
fn criterion_09_privacy_scan() {
    criterion(9, "no raw coordinates or subject ids downstream of PoI categorization", || {
        let (run, _) = runs();
        let data = run.out.join("data");
        let mut subjects = Vec::new();
        let mut exact: HashSet<String> = HashSet::new();
        let mut rounded: HashSet<String> = HashSet::new();
        for entry in std::fs::read_dir(&data).unwrap() {
            let dir = entry.unwrap().path();
            if !dir.is_dir() {
                continue;
            }
            subjects.push(dir.file_name().unwrap().to_string_lossy().into_owned());
            let loc = parse_location(&dir.join("location.jsonl")).unwrap();
            for s in &loc.samples {
                exact.insert(s.lat.to_string());
                exact.insert(s.lon.to_string());
            }
            let mut centers: Vec<(f64, f64)> =
                detect_pois(&loc.samples, &PoiConfig::default()).iter().filter_map(|p| p.center).map(|c| (c.lat, c.lon)).collect();
            let truth: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap();
            for s in truth["stays"].as_array().unwrap() {
                centers.push((s["lat"].as_f64().unwrap(), s["lon"].as_f64().unwrap()));
            }
            for (lat, lon) in centers {
                for x in [lat, lon] {
                    exact.insert(x.to_string());
                    for d in 4..=6 {
                        rounded.insert(format!("{x:.d$}"));
                    }
                }
            }
        }
        assert_eq!(subjects.len(), 6);

        let forbidden_keys = ["lat", "lon", "latitude", "longitude", "center", "subject_id"];
        let mut scanned = 0;
        for stage in ["extract", "aggregate", "export", "eval"] {
            for path in files_under(&run.out.join(stage)) {
                let text = std::fs::read_to_string(&path).unwrap();
                let rel = path.strip_prefix(&run.out).unwrap().display().to_string();
                for id in &subjects {
                    assert!(!text.contains(id.as_str()) && !rel.contains(id.as_str()), "{rel} mentions {id}");
                }
                for tok in numeric_tokens(&text) {
                    assert!(!exact.contains(tok), "{rel} contains raw coordinate {tok}");
                    let decimals = tok.split_once('.').map_or(0, |(_, f)| f.len());
                    if (4..=6).contains(&decimals) {
                        assert!(!rounded.contains(tok), "{rel} contains rounded coordinate {tok}");
                    }
                }
                let values: Vec<Value> = match path.extension().and_then(|e| e.to_str()) {
                    Some("json" | "geojson") => vec![serde_json::from_str(&text).unwrap()],
                    Some("jsonl") => text.lines().map(|l| serde_json::from_str(l).unwrap()).collect(),
                    _ => Vec::new(),
                };
                let mut keys = BTreeSet::new();
                values.iter().for_each(|v| json_keys(v, &mut keys));
                for k in forbidden_keys {
                    assert!(!keys.contains(k), "{rel} has key {k:?}");
                }
                if path.extension().is_some_and(|e| e == "csv") {
                    let header = text.lines().next().unwrap_or_default();
                    for col in header.split(',') {
                        assert!(!forbidden_keys.contains(&col.trim()), "{rel} has column {col}");
                    }
                }
                scanned += 1;
            }
        }
        assert!(scanned > 20, "only {scanned} files scanned");
        format!("{scanned} files clean against {} raw coordinate tokens and {} subject ids", exact.len(), subjects.len())
    });
}

#[test]
fn criterion_10_determinism() {
    criterion(10, "identical indicator and aggregate files across runs", || {
        let (a, b) = runs();
        let mut compared = 0;
        for stage in ["extract", "aggregate", "export"] {
            let fa = files_under(&a.out.join(stage));
            let fb = files_under(&b.out.join(stage));
            let rel = |v: &[PathBuf], root: &Path| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
            assert_eq!(rel(&fa, &a.out), rel(&fb, &b.out), "{stage} file sets differ");
            for (x, y) in fa.iter().zip(&fb) {
                assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.strip_prefix(&a.out).unwrap().display());
                compared += 1;
            }
        }
        assert!(a.out.join("extract/indicators.csv").exists() && a.out.join("aggregate/population.json").exists());
        format!("{compared} files byte-identical (1 vs 4 workers)")
    });
}
