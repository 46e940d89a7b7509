mod common;

use std::fs;

use common::{assert_close, instances_dir};
use hmsddp::harness::{
    combination_dir, emit_reports, gen_synthetic, ks_distance, run_combination_seed, run_test, summarize, Manifest,
    RunStatus, SeedResult,
};
use hmsddp::sddp::{ScenarioResult, Stats};
use hmsddp::synthetic::SyntheticSpec;
use hmsddp::{extract_crossings, test_policy, Experiment, ExperimentConfig, ForecastErrorSeries, ValueFunctionApprox};
use proptest::prelude::*;

fn tiny_experiment() -> Experiment {
    let mut e = Experiment::load(&instances_dir().join("tiny/config.json")).unwrap();
    e.config.max_iters = 4;
    e.config.test_scenarios = 6;
    e.config.record_wall_time = false;
    e
}

/// sup_x |F_a(x) − F_b(x)| checked at every sample value.
fn naive_ks(a: &[usize], b: &[usize]) -> f64 {
    let cdf = |s: &[usize], x: usize| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn ks_examples() {
    assert_eq!(ks_distance(&[1, 2, 3], &[3, 2, 1]), 0.0);
    assert_eq!(ks_distance(&[1, 1], &[5, 6]), 1.0);
    assert_close(ks_distance(&[1, 2, 3], &[2, 3, 4]), 1.0 / 3.0, 1e-15);
    assert_eq!(ks_distance(&[], &[]), 0.0);
    assert_eq!(ks_distance(&[], &[2]), 1.0);
}

proptest! {
    #[test]
    fn ks_matches_naive(a in prop::collection::vec(0usize..20, 1..40), b in prop::collection::vec(0usize..20, 1..40)) {
        prop_assert!((ks_distance(&a, &b) - naive_ks(&a, &b)).abs() <= 1e-12);
        prop_assert!((ks_distance(&a, &b) - ks_distance(&b, &a)).abs() <= 1e-15);
    }
}

fn scenario(s: usize, objective: f64, shortage: f64) -> ScenarioResult {
    ScenarioResult {
        scenario: s,
        objective,
        shortage_mwh: shortage,
        operating_cost: objective - 10.0 * shortage,
    }
}

fn seed_result(seed: u64, ms: f64, converged: bool, iterations: usize) -> SeedResult {
    SeedResult {
        seed,
        train_ms: ms,
        converged,
        iterations,
        sampled_fraction: 1.0,
    }
}

#[test]
fn summary_pools_all_seeds() {
    let runs = vec![
        (seed_result(1, 100.0, true, 10), vec![scenario(0, 10.0, 0.0), scenario(1, 20.0, 1.0)]),
        (seed_result(2, 300.0, false, 30), vec![scenario(0, 30.0, 2.0), scenario(1, 60.0, 0.0)]),
    ];
    let row = summarize("crossing+none", &runs);
    assert_eq!(row.seeds, 2);
    assert_eq!(row.converged_runs, 1);
    assert_close(row.train_ms, 200.0, 1e-12);
    assert_close(row.iterations, 20.0, 1e-12);
    // Objectives 10, 20, 30, 60: mean 30, sample variance 1400/3.
    assert_close(row.objective.mean, 30.0, 1e-12);
    assert_close(row.objective.sd, (1400.0f64 / 3.0).sqrt(), 1e-12);
    assert_eq!(row.objective.worst, 60.0);
    assert_close(row.shortage.mean, 0.75, 1e-12);
    assert_eq!(row.shortage.worst, 2.0);
}

#[test]
fn empty_test_set_gives_zero_statistics() {
    let e = tiny_experiment();
    let vfa = ValueFunctionApprox::new(e.instance.horizon, e.model.num_info_states(), e.instance.resource_dims());
    let rep = test_policy(&vfa, &e.instance, &e.model, &[]).unwrap();
    assert!(rep.scenarios.is_empty());
    assert_eq!(rep.objective, Stats::of(&[]));
    assert_eq!(rep.objective.mean, 0.0);
    let row = summarize("x", &[]);
    assert_eq!(row.seeds, 0);
    assert_eq!(row.objective.sd, 0.0);
}

#[test]
fn scenario_report_marks_threshold_exceedance() {
    let mut e = tiny_experiment();
    // Lower the threshold so that any shortage counts.
    e.instance.penalties.threshold = 0.0;
    let vfa = ValueFunctionApprox::new(e.instance.horizon, e.model.num_info_states(), e.instance.resource_dims());
    let dir = tempfile::tempdir().unwrap();
    let rep = run_test(&e, &vfa, 3, 8, dir.path()).unwrap();
    let mut rd = csv::Reader::from_path(dir.path().join("scenarios.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    for (row, s) in rows.iter().zip(&rep.scenarios) {
        let shortage: f64 = row[2].parse().unwrap();
        assert_close(shortage, s.shortage_mwh, 1e-9);
        assert_eq!(&row[4], if shortage > 0.0 { "true" } else { "false" });
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let exceed = rep.scenarios.iter().filter(|s| s.shortage_mwh > 0.0).count();
    assert_eq!(summary["exceedances"].as_u64().unwrap() as usize, exceed);
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), e.instance.horizon + 2);
    let m = Manifest::read(dir.path()).unwrap().unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.config_sha256, e.config.sha256());
}

#[test]
fn completed_combination_runs_are_reused() {
    let e = tiny_experiment();
    let root = tempfile::tempdir().unwrap();
    let dir = combination_dir(root.path(), "crossing+none", 5);
    let first = run_combination_seed(&e, &e, 5, &dir).unwrap();
    // Mark the stored result; a reused run returns the marked value.
    let marked = SeedResult {
        train_ms: 123456.0,
        ..first.clone()
    };
    fs::write(dir.join("result.json"), serde_json::to_string(&marked).unwrap()).unwrap();
    let again = run_combination_seed(&e, &e, 5, &dir).unwrap();
    assert_eq!(again, marked);

    let mut changed = tiny_experiment();
    changed.config.epsilon = 0.5;
    let rerun = run_combination_seed(&changed, &changed, 5, &dir).unwrap();
    assert_ne!(rerun.train_ms, 123456.0);

    // An interrupted run (manifest still running) is redone.
    let mut m = Manifest::read(&dir).unwrap().unwrap();
    m.status = RunStatus::Running;
    m.write(&dir).unwrap();
    fs::write(dir.join("result.json"), serde_json::to_string(&marked).unwrap()).unwrap();
    let redone = run_combination_seed(&changed, &changed, 5, &dir).unwrap();
    assert_ne!(redone.train_ms, 123456.0);

    let (rows, missing) = emit_reports(root.path(), &["crossing+none".to_string()], &[5, 6]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].seeds, 1);
    assert_eq!(missing, vec![combination_dir(root.path(), "crossing+none", 6)]);
    let summary = fs::read_to_string(root.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(root.path().join("convergence.csv").is_file());
}

fn mean_down(dir: &std::path::Path) -> f64 {
    let s = ForecastErrorSeries::load(&dir.join("episode_0.csv")).unwrap();
    let c = extract_crossings(&s.errors).unwrap();
    c.down_times.iter().sum::<usize>() as f64 / c.down_times.len() as f64
}

#[test]
fn synthetic_generation_is_seeded_and_tracks_persistence() {
    let spec = SyntheticSpec::ar1(20_000, 0.0, 5.0, 100.0);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_synthetic(&spec, 4, a.path()).unwrap();
    gen_synthetic(&spec, 4, b.path()).unwrap();
    gen_synthetic(&spec, 5, c.path()).unwrap();
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("episode_0.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    // Independent symmetric errors: geometric runs with mean 2.
    let independent = mean_down(a.path());
    assert!((independent - 2.0).abs() < 0.1, "{independent}");

    let sticky = tempfile::tempdir().unwrap();
    gen_synthetic(&SyntheticSpec::ar1(20_000, 0.95, 5.0, 100.0), 4, sticky.path()).unwrap();
    let persistent = mean_down(sticky.path());
    assert!(persistent > 3.0 * independent, "{persistent} vs {independent}");
}

#[test]
fn multi_episode_generation_writes_each_file() {
    let mut spec = SyntheticSpec::ar1(50, 0.5, 5.0, 100.0);
    spec.episodes = 3;
    let dir = tempfile::tempdir().unwrap();
    let files = gen_synthetic(&spec, 1, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        let s = ForecastErrorSeries::load(&f).unwrap();
        assert_eq!(s.errors.len(), 50);
        for (w, f) in s.errors.iter().zip(&s.forecasts) {
            assert!(f + w >= -1e-9 && f + w <= 100.0 + 1e-9);
        }
    }
}

#[test]
fn config_validation() {
    let good = fs::read_to_string(instances_dir().join("tiny/config.json")).unwrap();
    let cfg = ExperimentConfig::from_json(&good).unwrap();
    assert_eq!(cfg.sha256(), ExperimentConfig::from_json(&good).unwrap().sha256());
    let mutate = |f: &dyn Fn(&mut serde_json::Value)| {
        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        f(&mut v);
        ExperimentConfig::from_json(&v.to_string())
    };
    assert!(mutate(&|v| v["epsilon"] = 0.0.into()).is_err());
    assert!(mutate(&|v| v["horizon"] = 0.into()).is_err());
    assert!(mutate(&|v| v["seeds"] = serde_json::json!([])).is_err());
    assert!(mutate(&|v| v["m"] = 0.into()).is_err());
    assert!(mutate(&|v| v["grid_points"] = 1.into()).is_err());
    assert!(mutate(&|v| v["surprise"] = 1.into()).is_err());
    assert!(mutate(&|v| v["training"] = serde_json::json!([])).is_err());
    let other = mutate(&|v| v["epsilon"] = 0.01.into()).unwrap();
    assert_ne!(other.sha256(), cfg.sha256());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("config.json");
    fs::write(&p, &good).unwrap();
    assert!(ExperimentConfig::load(&p).is_err(), "referenced files are missing");
}
