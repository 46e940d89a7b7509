mod common;

use common::{assert_close, instances_dir, tiny};
use hmsddp::grid_env::VfaTerm;
use hmsddp::oracle::{extensive_form_oracle, policy_expected_cost, BranchLaw, DEFAULT_MAX_LEAVES};
use hmsddp::sddp::{sample_scenarios, Policy, Stats};
use hmsddp::{
    test_policy, Cut, ErrorModel, Experiment, GridInstance, IidErrorModel, OutcomeGrid, ResourceState, Sddp,
    SolveMode, TrainConfig, ValueFunctionApprox,
};
use hmsddp_lp::solve;
use proptest::prelude::*;

fn tiny_experiment() -> Experiment {
    Experiment::load(&instances_dir().join("tiny/config.json")).unwrap()
}

fn point_mass() -> ErrorModel {
    ErrorModel::Iid(IidErrorModel {
        grid: OutcomeGrid::new(vec![0.0]).unwrap(),
        dist: vec![1.0],
    })
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        record_wall_time: false,
        ..TrainConfig::default()
    }
}

fn cut(alpha: f64, beta: Vec<f64>, anchor: Vec<f64>) -> Cut {
    Cut {
        alpha,
        beta,
        anchor,
        iteration: 0,
    }
}

#[test]
fn cut_eval_example() {
    let c = cut(10.0, vec![-2.0, 1.0], vec![5.0, 0.0]);
    assert_close(c.eval(&[5.0, 0.0]), 10.0, 1e-12);
    assert_close(c.eval(&[7.0, 3.0]), 10.0 - 4.0 + 3.0, 1e-12);
    assert_close(c.intercept(), 20.0, 1e-12);
}

#[test]
fn evaluate_is_max_of_cuts() {
    let mut v = ValueFunctionApprox::new(2, 2, 1);
    assert_eq!(v.evaluate(0, 0, &[1.0]), f64::NEG_INFINITY);
    v.add_cut(0, 0, cut(4.0, vec![-1.0], vec![0.0]));
    v.add_cut(0, 0, cut(0.0, vec![1.0], vec![0.0]));
    assert_close(v.evaluate(0, 0, &[1.0]), 3.0, 1e-12);
    assert_close(v.evaluate(0, 0, &[3.0]), 3.0, 1e-12);
    assert_close(v.evaluate(0, 0, &[5.0]), 5.0, 1e-12);
    // State 1 has no cuts and contributes nothing to the expectation.
    assert_close(v.expected(0, &[0.25, 0.75], &[5.0]), 1.25, 1e-12);
}

proptest! {
    #[test]
    fn evaluate_matches_naive_loop(
        cuts in prop::collection::vec((-50.0..50.0f64, -5.0..5.0f64, -5.0..5.0f64, 0.0..10.0f64, 0.0..10.0f64), 1..12),
        x in 0.0..10.0f64,
        y in 0.0..10.0f64,
    ) {
        let mut v = ValueFunctionApprox::new(1, 1, 2);
        let mut best = f64::NEG_INFINITY;
        for &(a, b0, b1, r0, r1) in &cuts {
            v.add_cut(0, 0, cut(a, vec![b0, b1], vec![r0, r1]));
            let val = a + b0 * (x - r0) + b1 * (y - r1);
            if val > best {
                best = val;
            }
        }
        prop_assert!((v.evaluate(0, 0, &[x, y]) - best).abs() <= 1e-9);
    }
}

#[test]
fn vfa_json_round_trip() {
    let e = tiny_experiment();
    let r = hmsddp::train(
        &e.instance,
        &e.model,
        TrainConfig {
            max_iters: 5,
            ..config(2)
        },
    )
    .unwrap();
    assert!(r.vfa.total_cuts() > 0);
    let back = ValueFunctionApprox::from_json(&r.vfa.to_json()).unwrap();
    assert_eq!(back, r.vfa);
    let mut text = r.vfa.to_json();
    text = text.replace("hmsddp-vfa", "something-else");
    assert!(ValueFunctionApprox::from_json(&text).is_err());
}

#[test]
fn regularization_schedule_values() {
    let s = hmsddp::RegularizationSchedule::default();
    for k in 0..6 {
        assert_close(s.rho(k), 0.95f64.powi(k as i32), 1e-15);
    }
    assert!(s.rho(400) < 1e-8);
}

/// Chains stage problems without any value term: the myopic policy.
fn myopic(inst: &GridInstance, model: &ErrorModel, path: &[usize]) -> (Vec<Vec<f64>>, f64) {
    let mut state = inst.initial_state();
    let mut posts = Vec::new();
    let mut total = 0.0;
    for (t, &w) in path.iter().enumerate() {
        let wind = inst.wind(t, model.grid().points[w]);
        let sp = inst.build_stage_subproblem(t, &state, wind, None, None);
        let sol = solve(&sp.problem).unwrap();
        let d = inst.decision_from(&sp.layout, &sol.primal);
        let post = inst.transition_post(t, &state, &d, wind).unwrap();
        total += inst.stage_cost(t, &post, &d).total;
        posts.push(post.to_vec());
        state = post;
    }
    (posts, total)
}

#[test]
fn first_forward_pass_is_myopic() {
    let e = tiny_experiment();
    let mut run = Sddp::new(&e.instance, &e.model, config(4)).unwrap();
    let path = sample_scenarios(&e.model, run.initial_index(), e.instance.horizon, 1, 9).remove(0);
    let f = run.forward_pass(0, &path).unwrap();
    let (posts, total) = myopic(&e.instance, &e.model, &path);
    assert_close(f.total, total, 1e-6);
    for (a, b) in f.post.iter().zip(&posts) {
        for (x, y) in a.iter().zip(b) {
            assert_close(*x, *y, 1e-6);
        }
    }
}

#[test]
fn regularization_vanishes_for_large_k() {
    let e = tiny_experiment();
    let mut run = Sddp::new(&e.instance, &e.model, config(5)).unwrap();
    for _ in 0..8 {
        run.iterate().unwrap();
    }
    let path = sample_scenarios(&e.model, run.initial_index(), e.instance.horizon, 1, 11).remove(0);
    let late = run.forward_pass(400, &path).unwrap();
    let free = run.policy.simulate(&e.model, &path, &|_| None).unwrap();
    assert_close(late.total, free.total, 1e-5 * free.total.abs().max(1.0));
}

#[test]
fn expected_value_term_is_tight_at_the_optimum() {
    let e = tiny_experiment();
    let r = hmsddp::train(
        &e.instance,
        &e.model,
        TrainConfig {
            max_iters: 10,
            ..config(6)
        },
    )
    .unwrap();
    let inst = &e.instance;
    let k0 = e.model.init_knowledge(e.initial_index());
    let weights = e.model.info_weights(&k0);
    let mut policy = Policy::new(inst, r.vfa.clone(), SolveMode::Cold).unwrap();
    let input = inst.initial_state().to_vec();
    let wind = inst.wind(0, e.model.grid().points[e.initial_index()]);
    let sol = policy.solve_stage(0, &input, wind, &weights, None).unwrap();
    let d = inst.decision_from(&sol.layout, &sol.primal);
    let post: Vec<f64> = sol.layout.r_out.iter().map(|&v| sol.primal[v]).collect();
    let stage = inst.stage_cost(0, &ResourceState::from_slice(&post), &d).total;
    let future = r.vfa.expected(0, &weights, &post);
    assert_close(sol.objective, stage + future, 1e-6 * sol.objective.abs().max(1.0));
}

#[test]
fn cuts_only_tighten() {
    let e = tiny_experiment();
    let mut run = Sddp::new(&e.instance, &e.model, config(7)).unwrap();
    let probes: Vec<Vec<f64>> = vec![
        e.instance.initial_state().to_vec(),
        e.instance.storage.iter().map(|s| s.max).chain([0.0]).collect(),
        e.instance.storage.iter().map(|s| s.min).chain([3.0]).collect(),
    ];
    let mut prev: Option<ValueFunctionApprox> = None;
    for _ in 0..12 {
        run.iterate().unwrap();
        let now = run.vfa().clone();
        if let Some(p) = &prev {
            for t in 0..e.instance.horizon {
                for i in 0..now.info_states() {
                    for r in &probes {
                        let (a, b) = (p.evaluate(t, i, r), now.evaluate(t, i, r));
                        assert!(b >= a, "stage {t} state {i}: {a} then {b}");
                    }
                }
            }
        }
        prev = Some(now);
    }
    let lb = &run.lower_bounds;
    assert!(lb.windows(2).all(|w| w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0)), "{lb:?}");
}

#[test]
fn deterministic_wind_reaches_the_exact_value() {
    let inst = tiny();
    let model = point_mass();
    let exact = extensive_form_oracle(&inst, &model, 0, BranchLaw::Compact, DEFAULT_MAX_LEAVES).unwrap();
    let r = hmsddp::train(
        &inst,
        &model,
        TrainConfig {
            ub_window: 1,
            epsilon: 1e-6,
            max_iters: 20,
            ..config(1)
        },
    )
    .unwrap();
    assert!(r.converged);
    // Cuts from the first backward pass reach the forward pass one
    // iteration later, and the one-pass upper bound needs that pass.
    assert!(r.trace.len() <= 3, "{} iterations", r.trace.len());
    let last = r.trace.last().unwrap();
    assert_close(last.lower, exact.value, 1e-6 * exact.value.abs().max(1.0));
    assert_close(last.upper, exact.value, 1e-6 * exact.value.abs().max(1.0));
}

#[test]
fn identical_scenarios_have_zero_spread() {
    let inst = tiny();
    let model = point_mass();
    let vfa = ValueFunctionApprox::new(inst.horizon, 1, inst.resource_dims());
    let scenarios = vec![vec![0; inst.horizon + 1]; 4];
    let rep = test_policy(&vfa, &inst, &model, &scenarios).unwrap();
    assert_eq!(rep.scenarios.len(), 4);
    assert_eq!(rep.objective.sd, 0.0);
    assert_close(rep.objective.worst, rep.objective.mean, 1e-9);
}

#[test]
fn test_report_statistics_recompute() {
    let e = tiny_experiment();
    let r = hmsddp::train(
        &e.instance,
        &e.model,
        TrainConfig {
            max_iters: 5,
            ..config(8)
        },
    )
    .unwrap();
    let scenarios = sample_scenarios(&e.model, e.initial_index(), e.instance.horizon, 12, 3);
    let rep = test_policy(&r.vfa, &e.instance, &e.model, &scenarios).unwrap();
    let obj: Vec<f64> = rep.scenarios.iter().map(|s| s.objective).collect();
    let n = obj.len() as f64;
    let mean = obj.iter().sum::<f64>() / n;
    let var = obj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let worst = obj.iter().cloned().fold(f64::MIN, f64::max);
    assert_close(rep.objective.mean, mean, 1e-9);
    assert_close(rep.objective.sd, var.sqrt(), 1e-9);
    assert_close(rep.objective.worst, worst, 1e-9);
    for s in &rep.scenarios {
        assert!(s.shortage_mwh >= -1e-9);
        assert!(s.operating_cost <= s.objective + 1e-6);
    }
    assert_eq!(Stats::of(&[]).mean, 0.0);
    assert_eq!(Stats::of(&[3.0]).sd, 0.0);
}

#[test]
fn one_step_oracle_decomposes() {
    let e = tiny_experiment();
    let inst = e.instance.with_horizon(1).unwrap();
    let model = &e.model;
    let w0 = e.initial_index();
    let res = extensive_form_oracle(&inst, model, w0, BranchLaw::Filter, DEFAULT_MAX_LEAVES).unwrap();
    let root = &res.tree.nodes[0];
    assert_eq!(root.stage, 0);
    let post0 = ResourceState::from_slice(&res.post[0]);
    let mut value = inst.stage_cost(0, &post0, &res.decisions[0]).total;
    for &c in &root.children {
        let node = &res.tree.nodes[c];
        let wind = inst.wind(1, model.grid().points[node.obs]);
        let sp = inst.build_stage_subproblem(1, &post0, wind, None, None);
        value += node.prob * solve(&sp.problem).unwrap().objective;
    }
    assert_close(res.value, value, 1e-6 * value.abs().max(1.0));
    let probs: f64 = root.children.iter().map(|&c| res.tree.nodes[c].prob).sum();
    assert_close(probs, 1.0, 1e-12);
}

#[test]
fn oracle_bounds_any_policy() {
    let e = tiny_experiment();
    let inst = e.instance.with_horizon(2).unwrap();
    let res = extensive_form_oracle(&inst, &e.model, e.initial_index(), BranchLaw::Filter, DEFAULT_MAX_LEAVES).unwrap();
    let r = hmsddp::train(
        &inst,
        &e.model,
        TrainConfig {
            max_iters: 6,
            ..config(9)
        },
    )
    .unwrap();
    for vfa in [r.vfa, ValueFunctionApprox::new(inst.horizon, e.model.num_info_states(), inst.resource_dims())] {
        let mut policy = Policy::new(&inst, vfa, SolveMode::Cold).unwrap();
        let cost = policy_expected_cost(&mut policy, &e.model, &res.tree).unwrap();
        assert!(cost >= res.value - 1e-6 * res.value.abs().max(1.0), "{cost} < {}", res.value);
    }
}

#[test]
fn empty_cut_term_changes_nothing() {
    let inst = tiny();
    let cuts = vec![Vec::new(); 2];
    let weights = [0.5, 0.5];
    let term = VfaTerm {
        cuts: &cuts,
        weights: &weights,
    };
    let with = inst.build_stage_subproblem(0, &inst.initial_state(), 12.0, Some(term), None);
    let without = inst.build_stage_subproblem(0, &inst.initial_state(), 12.0, None, None);
    assert_close(
        solve(&with.problem).unwrap().objective,
        solve(&without.problem).unwrap().objective,
        1e-7,
    );
}

#[test]
fn training_trace_is_reproducible() {
    let e = tiny_experiment();
    let run = |seed| {
        hmsddp::train(
            &e.instance,
            &e.model,
            TrainConfig {
                max_iters: 6,
                ..config(seed)
            },
        )
        .unwrap()
    };
    let (a, b, c) = (run(21), run(21), run(22));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.vfa, b.vfa);
    assert_eq!(a.paths, b.paths);
    assert_ne!(a.paths, c.paths);
    assert!(a.trace.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn warm_and_cold_solves_agree() {
    let e = tiny_experiment();
    let r = hmsddp::train(
        &e.instance,
        &e.model,
        TrainConfig {
            max_iters: 6,
            ..config(13)
        },
    )
    .unwrap();
    let inst = &e.instance;
    let mut warm = Policy::new(inst, r.vfa.clone(), SolveMode::Warm).unwrap();
    let mut cold = Policy::new(inst, r.vfa, SolveMode::Cold).unwrap();
    let weights = e.model.info_weights(&e.model.init_knowledge(e.initial_index()));
    for t in 0..=inst.horizon {
        let w = if t < inst.horizon { weights.clone() } else { Vec::new() };
        for wind in [0.0, 10.0, 25.0] {
            let input = inst.initial_state().to_vec();
            let a = warm.solve_stage(t, &input, wind, &w, None).unwrap();
            let b = cold.solve_stage(t, &input, wind, &w, None).unwrap();
            assert_close(a.objective, b.objective, 1e-6 * b.objective.abs().max(1.0));
        }
    }
}

#[test]
fn mismatched_value_function_is_rejected() {
    let inst = tiny();
    let vfa = ValueFunctionApprox::new(inst.horizon + 1, 1, inst.resource_dims());
    assert!(Policy::new(&inst, vfa, SolveMode::Warm).is_err());
    let model = point_mass();
    let mut p = Policy::new(&inst, ValueFunctionApprox::new(inst.horizon, 1, inst.resource_dims()), SolveMode::Warm).unwrap();
    assert!(p.simulate(&model, &[0, 0], &|_| None).is_err());
}
