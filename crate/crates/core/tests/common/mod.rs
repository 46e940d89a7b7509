#![allow(dead_code)]

use std::path::PathBuf;

use hmsddp::synthetic::{generate, Regime, SyntheticSpec};
use hmsddp::{CrossingStateModel, ForecastErrorSeries, GridInstance, OutcomeGrid};

pub fn instances_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../instances")
}

pub fn tiny() -> GridInstance {
    GridInstance::load(&instances_dir().join("tiny/instance.json")).unwrap()
}

pub fn medium() -> GridInstance {
    GridInstance::load(&instances_dir().join("medium/instance.json")).unwrap()
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tolerance {tol})");
}

pub fn assert_sums_to_one(d: &[f64]) {
    assert!(d.iter().all(|&p| p >= 0.0 && p.is_finite()), "{d:?}");
    let s: f64 = d.iter().sum();
    assert!((s - 1.0).abs() <= 1e-12, "sums to {s}");
}

/// Two regimes with very different persistence, so crossing durations are
/// far from geometric.
pub fn regime_spec(steps: usize) -> SyntheticSpec {
    SyntheticSpec {
        steps,
        episodes: 1,
        capacity_mw: 100.0,
        forecast_mean: 0.5,
        forecast_amplitude: 0.2,
        period_steps: 288.0,
        regimes: vec![
            Regime {
                persistence: 0.97,
                sigma_mw: 12.0,
            },
            Regime {
                persistence: 0.5,
                sigma_mw: 6.0,
            },
        ],
        switch_prob: 0.01,
        step_minutes: 5,
    }
}

pub fn regime_series(steps: usize, seed: u64) -> Vec<ForecastErrorSeries> {
    generate(&regime_spec(steps), seed).unwrap()
}

pub fn fitted(m: usize, n: usize, points: usize) -> CrossingStateModel {
    let series = regime_series(10_000, 3);
    let all: Vec<f64> = series[0].errors.clone();
    CrossingStateModel::fit(&series, m, n, OutcomeGrid::from_quantiles(&all, points).unwrap()).unwrap()
}

/// m = 2, n = 1 on the grid {-2, -1, 1, 2}. States: 0 below/short,
/// 1 below/long, 2 above/short, 3 above/long.
pub fn hand_model() -> CrossingStateModel {
    let m = CrossingStateModel {
        m: 2,
        n: 1,
        grid: OutcomeGrid::new(vec![-2.0, -1.0, 1.0, 2.0]).unwrap(),
        duration_edges: vec![vec![1.5], vec![1.5]],
        crossing_time_cdfs: vec![vec![0.4, 1.0], vec![0.0, 0.5, 1.0], vec![1.0], vec![0.2, 0.6, 1.0]],
        transition_no_self: vec![
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.6, 0.4, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
        ],
        transition_compact: vec![
            vec![0.5, 0.0, 0.25, 0.25],
            vec![0.0, 0.6, 0.12, 0.28],
            vec![0.3, 0.2, 0.5, 0.0],
            vec![0.2, 0.2, 0.0, 0.6],
        ],
        error_bin_edges: vec![vec![]; 4],
        error_dists: vec![
            vec![vec![0.7, 0.3, 0.0, 0.0]],
            vec![vec![0.4, 0.6, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 0.8, 0.2]],
            vec![vec![0.0, 0.0, 0.5, 0.5]],
        ],
        entry_dists: vec![
            vec![0.2, 0.8, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.9, 0.1],
            vec![0.0, 0.0, 0.6, 0.4],
        ],
        max_crossing_time: vec![2, 3, 1, 3],
    };
    m.validate().unwrap();
    m
}
