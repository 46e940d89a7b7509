//! Acceptance criteria. One test runs them in order and prints one line per
//! criterion; runs shared between criteria are trained once.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use common::{instances_dir, regime_series};
use hmsddp::grid_env::VfaTerm;
use hmsddp::harness::{
    combination_dir, combination_experiment, crossing_fidelity, fit_model, load_series, run_combination_seed,
    Combination,
};
use hmsddp::oracle::{extensive_form_oracle, value_function, BranchLaw};
use hmsddp::rng::substream;
use hmsddp::sampler::{AggregationScheme, SampleDraw, SamplerConfig, SamplerKind, SamplerState};
use hmsddp::sddp::{read_test_results, read_trace, ScenarioResult};
use hmsddp::series::Sign;
use hmsddp::{
    CrossingState, CrossingStateModel, Cut, ErrorModel, Experiment, ModelChoice, OutcomeGrid, RegularizationSchedule,
    ResourceState, Sddp, SolveMode, TrainConfig, TrainResult,
};
use hmsddp_lp::solve;
use rand::Rng;

/// Relative tolerance for criterion 1.
const ORACLE_GAP: f64 = 0.01;
const CUT_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-6;
const REDUCTION_TOL: f64 = 1e-9;
const UNBIASED_TOL: f64 = 1e-9;
const BELIEF_SUM_TOL: f64 = 1e-12;
const FILTER_TOL: f64 = 1e-9;
const KS_CROSSING: f64 = 0.05;
const KS_IID: f64 = 0.15;
const SPEEDUP: f64 = 0.4;
const COMPARE_BUDGET_S: f64 = 30.0 * 60.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    // Written past the test harness's capture so the lines always appear.
    let line = format!(
        "acceptance {n:>2} {name}: {} ({})\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    let mut err = std::io::stderr();
    err.write_all(line.as_bytes()).unwrap();
    err.flush().unwrap();
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn monotone(lb: &[f64]) -> bool {
    lb.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL * w[0].abs().max(1.0))
}

fn load(name: &str, file: &str) -> Experiment {
    Experiment::load(&instances_dir().join(name).join(file)).unwrap()
}

fn criterion_1(exp: &Experiment) -> (Outcome, TrainResult) {
    let start = Instant::now();
    let oracle = extensive_form_oracle(
        &exp.instance,
        &exp.model,
        exp.initial_index(),
        BranchLaw::Compact,
        exp.config.oracle_max_leaves,
    )
    .unwrap();
    let r = hmsddp::train(&exp.instance, &exp.model, exp.config.train_config(1)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let lower = r.trace.last().unwrap().lower;
    let gap = rel_gap(lower, oracle.value);
    let info = exp.model.num_info_states();
    let pass = gap <= ORACLE_GAP && secs < 60.0 && info == 4;
    let detail = format!(
        "{info} information states, lower bound {lower:.3}, oracle {:.3}, gap {:.3}%, {} iterations, converged {}, {secs:.1} s",
        oracle.value,
        gap * 100.0,
        r.trace.len(),
        r.converged
    );
    (Outcome { pass, detail }, r)
}

fn criterion_2(exp: &Experiment, r: &TrainResult) -> Outcome {
    let inst = &exp.instance;
    let mut rng = substream(2, "acceptance/cuts");
    let (mut checked, mut worst) = (0usize, f64::NEG_INFINITY);
    for t in 0..inst.horizon {
        for _ in 0..20 {
            let mut point: Vec<f64> = inst.storage.iter().map(|b| rng.random_range(b.min..=b.max)).collect();
            point.push(rng.random_range(0.0..=20.0));
            for i in 0..exp.model.num_info_states() {
                if r.vfa.cuts[t][i].is_empty() {
                    continue;
                }
                let exact = value_function(inst, &exp.model, t, &point, i, exp.config.oracle_max_leaves).unwrap();
                for c in &r.vfa.cuts[t][i] {
                    worst = worst.max((c.eval(&point) - exact) / exact.abs().max(1.0));
                    checked += 1;
                }
            }
        }
    }
    Outcome {
        pass: checked > 0 && worst <= CUT_TOL,
        detail: format!("{checked} cut evaluations, largest relative excess {worst:.2e}"),
    }
}

/// Textbook SDDP on an IID model with exact expectations, driven along the
/// given forward paths.
fn classic_sddp(exp: &Experiment, model: &ErrorModel, paths: &[Vec<usize>]) -> Vec<Vec<Cut>> {
    let inst = &exp.instance;
    let ErrorModel::Iid(iid) = model else { panic!("IID model expected") };
    let horizon = inst.horizon;
    let mut cuts: Vec<Vec<Cut>> = vec![Vec::new(); horizon + 1];
    let one = [1.0];
    for (k, path) in paths.iter().enumerate() {
        let mut state = inst.initial_state();
        let mut posts = Vec::new();
        for t in 0..=horizon {
            let wind = inst.wind(t, iid.grid.points[path[t]]);
            let term = (t < horizon).then(|| VfaTerm {
                cuts: std::slice::from_ref(&cuts[t]),
                weights: &one,
            });
            let sp = inst.build_stage_subproblem(t, &state, wind, term, None);
            let sol = solve(&sp.problem).unwrap();
            let post: Vec<f64> = sp.layout.r_out.iter().map(|&v| sol.primal[v]).collect();
            state = ResourceState::from_slice(&post);
            posts.push(post);
        }
        for t in (1..=horizon).rev() {
            let rin = ResourceState::from_slice(&posts[t - 1]);
            let mut alpha = 0.0;
            let mut beta = vec![0.0; posts[t - 1].len()];
            for (w, &p) in iid.dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let wind = inst.wind(t, iid.grid.points[w]);
                let term = (t < horizon).then(|| VfaTerm {
                    cuts: std::slice::from_ref(&cuts[t]),
                    weights: &one,
                });
                let sp = inst.build_stage_subproblem(t, &rin, wind, term, None);
                let sol = solve(&sp.problem).unwrap();
                alpha += sol.objective * p;
                for (b, d) in beta.iter_mut().zip(&sol.coupling_duals) {
                    *b += d * p;
                }
            }
            cuts[t - 1].push(Cut {
                alpha,
                beta,
                anchor: posts[t - 1].clone(),
                iteration: k,
            });
        }
    }
    cuts
}

fn criterion_4(exp: &Experiment) -> (Outcome, Vec<f64>) {
    let series = load_series(&[instances_dir().join("tiny/training/episode_0.csv")]).unwrap();
    let model = fit_model(ModelChoice::Iid, &series, 1, 1, exp.config.grid_points).unwrap();
    let config = TrainConfig {
        max_iters: 8,
        epsilon: 1e-12,
        schedule: RegularizationSchedule { rho0: 0.0, rate: 0.95 },
        sampler: SamplerConfig::new(SamplerKind::None),
        mode: SolveMode::Cold,
        seed: 4,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let mut run = Sddp::new(&exp.instance, &model, config).unwrap();
    for _ in 0..8 {
        run.iterate().unwrap();
    }
    let lbs = run.lower_bounds.clone();
    let engine = run.finish(false);
    let classic = classic_sddp(exp, &model, &engine.paths);
    let (mut compared, mut worst) = (0usize, 0.0f64);
    let mut same_shape = true;
    for t in 0..exp.instance.horizon {
        let (a, b) = (&engine.vfa.cuts[t][0], &classic[t]);
        same_shape &= a.len() == b.len();
        for (x, y) in a.iter().zip(b) {
            let mut diff = (x.alpha - y.alpha).abs() / y.alpha.abs().max(1.0);
            for (p, q) in x.beta.iter().zip(&y.beta).chain(x.anchor.iter().zip(&y.anchor)) {
                diff = diff.max((p - q).abs() / q.abs().max(1.0));
            }
            worst = worst.max(diff);
            compared += 1;
        }
    }
    let o = Outcome {
        pass: same_shape && compared > 0 && worst <= REDUCTION_TOL,
        detail: format!("{compared} cuts compared over {} iterations, largest difference {worst:.2e}", engine.paths.len()),
    };
    (o, lbs)
}

fn criterion_5() -> Outcome {
    let grid = OutcomeGrid::new((0..8).map(|k| k as f64 - 3.5).collect()).unwrap();
    let mut rng = substream(5, "acceptance/unbiased");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // Two information states with partly overlapping supports.
        let mut nominal = Vec::new();
        for _ in 0..2 {
            let mut p: Vec<f64> = (0..8)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..1.0) })
                .collect();
            p[rng.random_range(0..8)] = 1.0;
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            nominal.push(p);
        }
        let mut state = SamplerState::new(
            SamplerConfig::new(SamplerKind::Importance),
            &grid,
            nominal.clone(),
            1,
            AggregationScheme::new(0.0, 1.0, 1),
        )
        .unwrap();
        for th in state.theta[0][0].iter_mut().flatten() {
            *th = rng.random_range(0.0..5.0);
        }
        let q = state.sampling_dist(0, 0);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-100.0..1000.0)).collect();
        for p in &nominal {
            let exact: f64 = (0..8).map(|w| v[w] * p[w]).sum();
            let mut expectation = 0.0;
            for w in (0..8).filter(|&w| q[w] > 0.0) {
                let draw = SampleDraw {
                    samples: vec![w],
                    q: Some(q.clone()),
                };
                expectation += q[w] * draw.estimate(p, |x| v[x]).unwrap_or(0.0);
            }
            worst = worst.max((expectation - exact).abs() / exact.abs().max(1.0));
        }
    }
    Outcome {
        pass: worst <= UNBIASED_TOL,
        detail: format!("100 pairs, 2 information states, largest relative error {worst:.2e}"),
    }
}

/// Filter posterior recomputed from scratch at every step: each hypothesis
/// for the current run's crossing state is scored by its entry weight and
/// the survival-weighted likelihood of every observation in the run.
fn batch_posterior(m: &CrossingStateModel, obs: &[usize], upto: usize) -> Vec<f64> {
    let sign = |u: usize| Sign::of(m.grid.points[obs[u]]);
    let mut start = upto;
    while start > 0 && sign(start - 1) == sign(upto) {
        start -= 1;
    }
    let nc = m.num_crossing_states();
    let mut weights = vec![0.0; nc];
    for (c, wt) in weights.iter_mut().enumerate() {
        if m.crossing_state(c).sign != sign(upto) {
            continue;
        }
        let mut x = if start == 0 {
            1.0 / m.m as f64
        } else {
            let mut prev = start - 1;
            while prev > 0 && sign(prev - 1) == sign(start - 1) {
                prev -= 1;
            }
            let s = sign(start - 1);
            let done = m.crossing_index(CrossingState {
                sign: s,
                duration_bin: m.duration_bin(s, start - prev),
            });
            m.transition_no_self[done][c] * m.entry_dists[c][obs[start]]
        };
        for u in start + 1..=upto {
            let before = m.grid.points[obs[u - 1]];
            x *= (1.0 - m.cdf(c, u - start)) * m.error_dists[c][m.error_bin(c, before)][obs[u]];
        }
        *wt = x;
    }
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

fn criterion_6() -> Outcome {
    let m = common::fitted(3, 2, 30);
    let model = ErrorModel::Crossing(m.clone());
    let mut rng = substream(6, "acceptance/filter");
    let w0 = m.grid.snap(0.0);
    let (obs, _) = m.sample_hidden_path(w0, 1000, &mut rng);
    let mut k = model.init_knowledge(obs[0]);
    let (mut sum_err, mut filter_err) = (0.0f64, 0.0f64);
    for t in 0..obs.len() {
        if t > 0 {
            k = model.knowledge_update(&k, obs[t]).unwrap();
        }
        sum_err = sum_err.max((k.beliefs.iter().sum::<f64>() - 1.0).abs());
        if t < 200 {
            for (a, b) in k.beliefs.iter().zip(batch_posterior(&m, &obs, t)) {
                filter_err = filter_err.max((a - b).abs());
            }
        }
    }
    Outcome {
        pass: obs.len() == 1001 && sum_err <= BELIEF_SUM_TOL && filter_err <= FILTER_TOL,
        detail: format!(
            "{} steps, largest |sum − 1| {sum_err:.2e}, largest filter difference {filter_err:.2e} over 200 steps",
            obs.len() - 1
        ),
    }
}

fn criterion_7() -> Outcome {
    let series = regime_series(10_000, 7);
    let crossing = fit_model(ModelChoice::Crossing, &series, 3, 1, 40).unwrap();
    let iid = fit_model(ModelChoice::Iid, &series, 3, 1, 40).unwrap();
    let fc = crossing_fidelity(&crossing, &series, 100, 1000, 7).unwrap();
    let fi = crossing_fidelity(&iid, &series, 100, 1000, 7).unwrap();
    Outcome {
        pass: fc.ks_down < KS_CROSSING && fi.ks_down > KS_IID,
        detail: format!(
            "down-crossing KS crossing {:.4}, IID {:.4}; mean length training {:.2}, crossing {:.2}, IID {:.2}",
            fc.ks_down, fi.ks_down, fc.train_mean_down, fc.sim_mean_down, fi.sim_mean_down
        ),
    }
}

fn criterion_8() -> (Outcome, Vec<Vec<f64>>) {
    let exp = load("medium", "config.json");
    let mut lbs = Vec::new();
    let mut backward = |kind: SamplerKind| {
        let mut config = exp.config.train_config(1);
        config.sampler.kind = kind;
        let mut run = Sddp::new(&exp.instance, &exp.model, config).unwrap();
        for _ in 0..10 {
            run.iterate().unwrap();
        }
        lbs.push(run.lower_bounds.clone());
        let ms: f64 = run.timing.iter().map(|t| t.backward_ms).sum::<f64>() / run.timing.len() as f64;
        let frac: f64 = run.timing.iter().map(|t| t.sampled_fraction).sum::<f64>() / run.timing.len() as f64;
        (ms, frac)
    };
    let (full, _) = backward(SamplerKind::None);
    let (sampled, frac) = backward(exp.config.sampler.kind);
    let ratio = sampled / full;
    let o = Outcome {
        pass: ratio <= SPEEDUP,
        detail: format!(
            "backward pass {sampled:.1} ms sampled ({:.1}% of outcomes) vs {full:.1} ms unsampled, ratio {ratio:.3}",
            frac * 100.0
        ),
    };
    (o, lbs)
}

fn lower_bounds(dir: &Path) -> Vec<f64> {
    let f = fs::File::open(dir.join("train").join("trace.csv")).unwrap();
    read_trace(f, "trace.csv").unwrap().iter().map(|r| r.lower).collect()
}

fn tests_of(dir: &Path) -> Vec<ScenarioResult> {
    read_test_results(fs::File::open(dir.join("test.csv")).unwrap(), "test.csv").unwrap()
}

fn mean_of(runs: &[Vec<ScenarioResult>], f: fn(&ScenarioResult) -> f64) -> f64 {
    let all: Vec<f64> = runs.iter().flatten().map(f).collect();
    all.iter().sum::<f64>() / all.len() as f64
}

fn worst_of(run: &[ScenarioResult]) -> f64 {
    run.iter().map(|s| s.shortage_mwh).fold(f64::NEG_INFINITY, f64::max)
}

const SEEDS: [u64; 3] = [1, 2, 3];

/// Per-seed test results of one combination.
type SeedRuns = Vec<Vec<ScenarioResult>>;

fn criterion_9(root: &Path, lbs: &mut Vec<Vec<f64>>) -> (Outcome, SeedRuns) {
    let base = load("medium", "compare.json");
    let training: Vec<_> = base.config.training.iter().map(|f| instances_dir().join("medium").join(f)).collect();
    let series = load_series(&training).unwrap();
    let start = Instant::now();
    let mut results = std::collections::BTreeMap::new();
    for combo in Combination::table() {
        let exp = combination_experiment(&base, combo, Some(&series)).unwrap();
        let mut runs = Vec::new();
        for seed in SEEDS {
            let dir = combination_dir(root, &combo.label(), seed);
            run_combination_seed(&exp, &base, seed, &dir).unwrap();
            lbs.push(lower_bounds(&dir));
            runs.push(tests_of(&dir));
        }
        results.insert(combo.label(), runs);
    }
    let secs = start.elapsed().as_secs_f64();
    let shortage = |label: &str| mean_of(&results[label], |s| s.shortage_mwh);
    let worse_seeds = |a: &str, b: &str| {
        (0..SEEDS.len())
            .filter(|&s| worst_of(&results[a][s]) <= worst_of(&results[b][s]))
            .count()
    };
    let (imp, std_, cross, iid) = (
        shortage("crossing-importance"),
        shortage("crossing-standard"),
        shortage("crossing-none"),
        shortage("iid-none"),
    );
    let worst_is = worse_seeds("crossing-importance", "crossing-standard");
    let worst_ci = worse_seeds("crossing-none", "iid-none");
    let pass = imp <= std_ && cross <= iid && worst_is >= 2 && worst_ci >= 2 && secs < COMPARE_BUDGET_S;
    let detail = format!(
        "mean shortage importance {imp:.2} vs standard {std_:.2}, crossing {cross:.2} vs IID {iid:.2} MWh; \
         worst case holds in {worst_is}/3 and {worst_ci}/3 seeds; {:.1} min",
        secs / 60.0
    );
    let imp_runs = results.remove("crossing-importance").unwrap();
    (Outcome { pass, detail }, imp_runs)
}

fn criterion_10(root: &Path, baseline: &[Vec<ScenarioResult>], lbs: &mut Vec<Vec<f64>>) -> Outcome {
    let mut exp = load("medium", "compare.json");
    let theta = exp.instance.penalties.threshold;
    let mut penalties = exp.instance.penalties;
    penalties.threshold = 5.0 * theta;
    exp.instance.penalties = penalties;
    exp.config.penalties = Some(penalties);
    let mut runs = Vec::new();
    for seed in SEEDS {
        let dir = combination_dir(&root.join("threshold"), "crossing-importance", seed);
        run_combination_seed(&exp, &exp, seed, &dir).unwrap();
        lbs.push(lower_bounds(&dir));
        runs.push(tests_of(&dir));
    }
    let (s0, s1) = (mean_of(baseline, |s| s.shortage_mwh), mean_of(&runs, |s| s.shortage_mwh));
    let (c0, c1) = (mean_of(baseline, |s| s.operating_cost), mean_of(&runs, |s| s.operating_cost));
    Outcome {
        pass: s1 > s0 && c1 < c0,
        detail: format!(
            "threshold {theta} -> {}: mean shortage {s0:.2} -> {s1:.2} MWh, generation plus storage cost {c0:.1} -> {c1:.1}",
            5.0 * theta
        ),
    }
}

fn criterion_11() -> Outcome {
    let mut pass = true;
    for inst in [common::tiny(), common::medium()] {
        let q = inst.regularization_weights();
        pass &= q.len() == inst.resource_dims() && *q.last().unwrap() == 0.0;
        pass &= q[..q.len() - 1].iter().all(|&w| w > 0.0);
    }
    let s = RegularizationSchedule::default();
    // The stored rate (just below 0.95) raised to k in exact rational
    // arithmetic, then rounded once to f64.
    let exact = [1.0, 0.95, 0.9025, 0.8573749999999999, 0.8145062499999999, 0.7737809374999998];
    for (k, e) in exact.iter().enumerate() {
        pass &= s.rho(k) == *e;
    }
    Outcome {
        pass,
        detail: format!(
            "shortage weight 0 on tiny and medium; rho = {:?}",
            (0..=5).map(|k| s.rho(k)).collect::<Vec<_>>()
        ),
    }
}

#[test]
fn acceptance() {
    let mut all: Vec<(usize, String, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| all.push((n, name.to_string(), o));
    let mut lbs: Vec<Vec<f64>> = Vec::new();

    let tiny = load("tiny", "config.json");
    let (o1, run1) = criterion_1(&tiny);
    lbs.push(run1.trace.iter().map(|r| r.lower).collect());
    record(1, "oracle equivalence", o1);
    record(2, "cut validity", criterion_2(&tiny, &run1));
    let (o4, lb4) = criterion_4(&tiny);
    lbs.push(lb4);
    record(5, "importance sampling unbiasedness", criterion_5());
    record(6, "belief filter soundness", criterion_6());
    record(7, "crossing fidelity", criterion_7());
    let (o8, lb8) = criterion_8();
    lbs.extend(lb8);
    record(8, "sampling speedup", o8);
    let root = tempfile::tempdir().unwrap();
    let (o9, imp) = criterion_9(root.path(), &mut lbs);
    record(9, "risk ordering", o9);
    record(10, "threshold responsiveness", criterion_10(root.path(), &imp, &mut lbs));
    record(11, "regularization contract", criterion_11());
    let bad = lbs.iter().filter(|l| !monotone(l)).count();
    record(
        3,
        "monotone lower bounds",
        Outcome {
            pass: bad == 0,
            detail: format!("{} runs, {bad} with a decrease beyond {MONOTONE_TOL}", lbs.len()),
        },
    );
    record(4, "classic SDDP reduction", o4);

    all.sort_by_key(|a| a.0);
    for (n, name, o) in &all {
        report(*n, name, o);
    }
    let failed: Vec<usize> = all.iter().filter(|a| !a.2.pass).map(|a| a.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
