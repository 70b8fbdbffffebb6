use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use diamond_core::{make_time_grid, DecoderSpec, DetectorSpec, MixtureSpec, ModelSpec, Sampler};
use diamond_harness::experiment::read_metrics_csv;
use diamond_harness::presets::preset_config;
use diamond_harness::{
    emit_plot_data, filter_seeds, run_experiment, Ablation, ExperimentConfig, ExperimentReport, HarnessError, Scenario,
    SeedSelection,
};
use tempfile::tempdir;

fn scenario_with(detector: DetectorSpec) -> Scenario {
    let model = MixtureSpec::new(vec![0.5, 0.5], vec![vec![2.0, 0.0], vec![-2.0, 0.0]], vec![0.5, 0.5]).unwrap();
    Scenario::new(
        "filter-test".into(),
        Sampler::Flow(make_time_grid(6).unwrap()),
        ModelSpec::Mixture(model),
        DecoderSpec::identity(1, 2),
        detector,
        1.0,
    )
    .unwrap()
}

fn small(id: &str, count: usize) -> ExperimentConfig {
    ExperimentConfig {
        seeds: SeedSelection::Range { start: 0, count },
        ..preset_config(id).unwrap()
    }
}

fn read_report(dir: &Path) -> ExperimentReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn filter_gives_up_after_exactly_the_attempt_budget() {
    let scenario = scenario_with(DetectorSpec::radial(vec![vec![1e3, 1e3]], vec![1.0], None).unwrap());
    match filter_seeds(&scenario, 7, 1000) {
        Err(HarnessError::SeedSearch { attempts, start, .. }) => assert_eq!((attempts, start), (1000, 7)),
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

#[test]
fn covering_detector_accepts_the_start_seed() {
    let scenario = scenario_with(DetectorSpec::radial(vec![vec![0.0, 0.0]], vec![1e3], None).unwrap());
    let rec = filter_seeds(&scenario, 42, 1000).unwrap();
    assert_eq!((rec.seed, rec.attempts), (42, 1));
}

#[test]
fn filter_is_deterministic() {
    let scenario = scenario_with(DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).unwrap());
    let a = filter_seeds(&scenario, 100, 1000).unwrap();
    assert_eq!(a, filter_seeds(&scenario, 100, 1000).unwrap());
    assert!(a.attempts <= 1000 && a.seed == 100 + a.attempts as u64 - 1);
}

#[test]
fn zero_lambda_matches_the_baseline_exactly() {
    let dir = tempdir().unwrap();
    let mut cfg = small("two-mode-2d", 24);
    cfg.guidance.lambda_start = 0.0;
    cfg.guidance.lambda_end = 0.0;
    let r = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(r.variant("baseline").unwrap().maf(), r.variant("guided").unwrap().maf());
    assert_eq!(r.variant("baseline").unwrap().maf(), Some(100.0));
}

#[test]
fn every_guided_run_has_a_baseline_partner() {
    let dir = tempdir().unwrap();
    let cfg = ExperimentConfig {
        ablation: Some(Ablation::AlphaSweep),
        ..small("grid-16", 12)
    };
    let r = run_experiment(&cfg, dir.path()).unwrap();
    let base: BTreeMap<u64, &Vec<f64>> =
        r.runs.iter().filter(|e| e.variant == "baseline").map(|e| (e.seed, &e.x1)).collect();
    assert_eq!(base.len(), 12);
    for e in r.runs.iter().filter(|e| e.variant != "baseline") {
        assert_eq!(base[&e.seed], &e.x1, "seed {} {}", e.seed, e.variant);
    }
}

#[test]
fn aggregates_recompute_from_the_per_seed_rows() {
    let dir = tempdir().unwrap();
    let r = run_experiment(&small("grid-16", 16), dir.path()).unwrap();
    let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 16);
    for v in &r.variants {
        let mine: Vec<_> = rows.iter().filter(|m| m.variant == v.name).collect();
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for m in &mine {
            groups.entry(m.group).or_default().push(if m.artifact == 1 { 100.0 } else { 0.0 });
        }
        let per_group: Vec<f64> = groups.values().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
        let n = per_group.len() as f64;
        let mean = per_group.iter().sum::<f64>() / n;
        let var = per_group.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((v.mean.maf.unwrap() - mean).abs() < 1e-9, "{}", v.name);
        assert!((v.std.maf.unwrap() - var.sqrt()).abs() < 1e-9, "{}", v.name);

        let apr: Vec<f64> = mine.iter().map(|m| m.apr).collect();
        let pooled = apr.iter().sum::<f64>() / apr.len() as f64;
        assert!((v.apr_mean().unwrap() - pooled).abs() < 1e-9, "{}", v.name);
    }
}

#[test]
fn plot_series_share_the_time_grid() {
    let dir = tempdir().unwrap();
    run_experiment(&small("two-mode-2d", 5), dir.path()).unwrap();
    let plots = dir.path().join("plots");
    let files = emit_plot_data(&dir.path().join("report.json"), &plots).unwrap();
    assert_eq!(files.len(), 2);

    let mut rdr = csv::Reader::from_path(plots.join("series.csv")).unwrap();
    let mut t: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        t.entry((rec[0].to_string(), rec[1].to_string())).or_default().push(rec[3].to_string());
    }
    assert_eq!(t.len(), 10);
    assert!(t.values().all(|ts| ts.len() == 10));
    let report = read_report(dir.path());
    for seed in &report.seeds {
        assert_eq!(t[&("baseline".into(), seed.to_string())], t[&("guided".into(), seed.to_string())]);
    }
    let endpoints = csv::Reader::from_path(plots.join("endpoints.csv")).unwrap().into_records().count();
    assert_eq!(endpoints, 10);
}

#[test]
fn empty_report_gives_header_only_series() {
    let dir = tempdir().unwrap();
    let mut report = {
        run_experiment(&small("two-mode-2d", 1), dir.path()).unwrap();
        read_report(dir.path())
    };
    report.runs.clear();
    let path = dir.path().join("empty.json");
    fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    emit_plot_data(&path, &dir.path().join("p")).unwrap();
    let text = fs::read_to_string(dir.path().join("p/series.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("variant,seed,i,t,"));
}

#[test]
fn missing_report_is_an_input_error() {
    let dir = tempdir().unwrap();
    let err = emit_plot_data(&dir.path().join("nope.json"), dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Report(_)), "{err:?}");
}
