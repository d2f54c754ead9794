use obeskit_core::eval::MatchThresholds;
use obeskit_core::pipeline::{evaluate, extract_subject, EvalCase, ExtractConfig, Models};
use obeskit_core::sim::{dwell_scenario, night_scenario, simulate};

fn run(scenarios: Vec<obeskit_core::sim::Scenario>) -> obeskit_core::eval::EvalReport {
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
    evaluate(&cases, MatchThresholds::default(), "test").unwrap()
}

#[test]
fn night_scenarios_gross_sleep_time() {
    let report = run((0..10).map(|i| night_scenario(i, 7)).collect());
    for (scorer, r) in &report.sleep {
        println!("{scorer}: css {:.2} ae {:?}", r.css, r.ae);
    }
    let cole = &report.sleep["cole"];
    assert_eq!(cole.css, 1.0);
    assert!(cole.ae["GST"].mean <= 12.0, "{:?}", cole.ae["GST"]);
}

#[test]
fn dwell_suite_f1() {
    let report = run((0..10).map(|i| dwell_scenario(i, 7)).collect());
    for (s, r) in &report.pois {
        println!("{s}: tp {} fp {} fn {} f1 {:?}", r.tp, r.fp, r.fn_, r.f1);
        assert!(r.f1.unwrap() >= 0.9, "{s}");
    }
}

#[test]
fn trained_models_on_a_school_day() {
    use obeskit_core::pipeline::{train_models, TrainConfig};
    use obeskit_core::sim::{cohort, CohortSpec};
    let cfg = ExtractConfig::default();
    let (ty, tr) = train_models(3, &TrainConfig::default(), &cfg).unwrap();
    let models = Models { activity_type: Some(ty), transport: Some(tr) };
    let spec = CohortSpec { subjects: 2, ..CohortSpec::default() };
    let scenarios = cohort(&spec, 5).unwrap();
    let outs: Vec<_> = scenarios
        .iter()
        .map(|s| {
            let out = simulate(s, 9).unwrap();
            let ex = extract_subject(&s.subject, Some(&out.accel), Some(&out.location), s.timezone.parse().unwrap(), &models, None, &cfg).unwrap();
            (s.subject.clone(), ex, out.truth)
        })
        .collect();
    let cases: Vec<EvalCase> = outs.iter().map(|(l, e, t)| EvalCase { label: l.clone(), extract: e, truth: t }).collect();
    let report = evaluate(&cases, MatchThresholds::default(), "test").unwrap();
    println!("{}", report.to_markdown());
}
