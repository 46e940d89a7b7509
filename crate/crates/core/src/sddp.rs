//! SDDP with cuts per hidden-Markov information state, vanishing quadratic
//! regularization and sampled backward passes.
//!
//! Stage t's value function V̄_t(R, i) approximates the expected cost from
//! t+1 on, given post-decision resources R and post-decision information
//! state i. Stage T has none; its threshold penalty sits in its objective.

use std::io::Write;
use std::time::Instant;

use hmsddp_lp::{solve, SubproblemSolution, WarmLp};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossing::{ErrorModel, KnowledgeState};
use crate::error::{Error, Result};
use crate::grid_env::{cut_row, Decision, GridInstance, Regularization, ResourceState, StageCost, StageLayout, VfaTerm};
use crate::rng::substream;
use crate::sampler::{csv_err, full_support, observe_vhat, AggregationScheme, SamplerConfig, SamplerKind, SamplerState};
use crate::vfa::{Cut, ValueFunctionApprox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// One persistent simplex per stage, re-solved from its last basis.
    Warm,
    /// Every subproblem built and solved from scratch; results depend only
    /// on the subproblem.
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    pub rho0: f64,
    pub rate: f64,
}

impl Default for RegularizationSchedule {
    fn default() -> Self {
        RegularizationSchedule { rho0: 1.0, rate: 0.95 }
    }
}

impl RegularizationSchedule {
    /// ρ^k = ρ^0 · r^k.
    pub fn rho(&self, k: usize) -> f64 {
        // powf rounds once; powi's repeated squaring can be an ulp off.
        self.rho0 * self.rate.powf(k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 >= 0.0) || !self.rho0.is_finite() || !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidInput("regularization needs rho0 >= 0 and rate in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub epsilon: f64,
    pub schedule: RegularizationSchedule,
    /// Forward passes averaged into the upper bound estimate.
    pub ub_window: usize,
    /// Iterations run before the stopping test is applied.
    pub min_iters: usize,
    pub sampler: SamplerConfig,
    pub mode: SolveMode,
    /// Cuts kept per (t, i); later cuts are dropped with a warning.
    pub cut_cap: Option<usize>,
    pub seed: u64,
    /// W_0 in MW, snapped onto the outcome grid.
    pub initial_error: f64,
    /// When false the trace's wall_ms column is written as 0.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 100,
            epsilon: 0.02,
            schedule: RegularizationSchedule::default(),
            ub_window: 10,
            min_iters: 0,
            sampler: SamplerConfig::new(SamplerKind::None),
            mode: SolveMode::Warm,
            cut_cap: None,
            seed: 1,
            initial_error: 0.0,
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub lower: f64,
    pub upper: f64,
    pub wall_ms: u64,
    pub cuts_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub iter: usize,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub backward_solves: usize,
    /// Mean over backward stages of |Ω̃_t| / |Ω_t| (distinct outcomes).
    pub sampled_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Pre-decision resources R_t for t = 0..=T.
    pub states: Vec<ResourceState>,
    /// Post-decision resource vectors R^x_t.
    pub post: Vec<Vec<f64>>,
    pub decisions: Vec<Decision>,
    pub costs: Vec<StageCost>,
    /// Weights over information states used in each stage's value term.
    pub weights: Vec<Vec<f64>>,
    /// Stage objective values, value term included.
    pub objectives: Vec<f64>,
    pub total: f64,
}

impl ForwardResult {
    pub fn shortage(&self) -> f64 {
        self.post.last().and_then(|r| r.last()).copied().unwrap_or(0.0)
    }
}

struct StageLp {
    lp: WarmLp,
    layout: StageLayout,
    nu: Vec<usize>,
    active: Vec<bool>,
    wind_row: usize,
    wind_demand: f64,
}

impl StageLp {
    fn new(inst: &GridInstance, t: usize, info_states: usize) -> Result<Self> {
        let sp = inst.build_stage_subproblem(t, &inst.initial_state(), inst.forecast[t], None, None);
        let mut lp = WarmLp::new(sp.problem).map_err(|e| Error::solver(format!("stage {t} setup"), e))?;
        let nu = if t < inst.horizon {
            (0..info_states).map(|i| lp.add_var(format!("nu{i}_t{t}"), 0.0, 0.0, 0.0)).collect()
        } else {
            Vec::new()
        };
        Ok(StageLp {
            lp,
            wind_row: sp.layout.balance_rows[inst.wind_node],
            wind_demand: inst.demand[t][inst.wind_node],
            active: vec![false; nu.len()],
            nu,
            layout: sp.layout,
        })
    }

    fn add_cut(&mut self, i: usize, cut: &Cut) {
        if !self.active[i] {
            self.lp.set_bounds(self.nu[i], f64::NEG_INFINITY, f64::INFINITY);
            self.active[i] = true;
        }
        let (coeffs, rhs) = cut_row(self.nu[i], &self.layout.r_out, cut);
        let name = format!("cut{i}_{}", self.lp.problem().num_rows());
        self.lp.add_row(name, coeffs, hmsddp_lp::Sense::Ge, rhs);
    }

    fn solve(
        &mut self,
        input: &[f64],
        wind: f64,
        weights: &[f64],
        reg: Option<&Regularization>,
    ) -> std::result::Result<SubproblemSolution, hmsddp_lp::SolverError> {
        for (k, &c) in self.layout.coupling.iter().enumerate() {
            let row = self.lp.problem().coupling[c];
            self.lp.set_rhs(row, input[k]);
        }
        self.lp.set_rhs(self.wind_row, self.wind_demand - wind);
        for (i, &v) in self.nu.iter().enumerate() {
            let c = if self.active[i] { weights.get(i).copied().unwrap_or(0.0) } else { 0.0 };
            self.lp.set_cost(v, c);
        }
        match reg {
            Some(reg) => {
                let mut lp = self.lp.clone();
                for (k, &var) in self.layout.r_out.iter().enumerate() {
                    let w = reg.rho * reg.weights[k];
                    if w > 0.0 {
                        lp.add_quadratic(var, w, reg.incumbent[k]);
                    }
                }
                lp.solve()
            }
            None => self.lp.solve(),
        }
    }
}

/// Stage problems bound to a value function approximation.
pub struct Policy<'a> {
    pub inst: &'a GridInstance,
    pub vfa: ValueFunctionApprox,
    pub mode: SolveMode,
    stages: Vec<StageLp>,
    cut_cap: Option<usize>,
    capped: bool,
}

/// Solution of one stage problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub objective: f64,
    pub primal: Vec<f64>,
    /// ∂objective/∂(incoming resources).
    pub coupling_duals: Vec<f64>,
    pub layout: StageLayout,
}

impl<'a> Policy<'a> {
    pub fn new(inst: &'a GridInstance, vfa: ValueFunctionApprox, mode: SolveMode) -> Result<Self> {
        if vfa.horizon() != inst.horizon || vfa.dims != inst.resource_dims() {
            return Err(Error::InvalidInput(format!(
                "value function has horizon {} and {} resources, instance has {} and {}",
                vfa.horizon(),
                vfa.dims,
                inst.horizon,
                inst.resource_dims()
            )));
        }
        let mut stages = Vec::new();
        if mode == SolveMode::Warm {
            for t in 0..=inst.horizon {
                let mut s = StageLp::new(inst, t, vfa.info_states())?;
                if t < inst.horizon {
                    for (i, cuts) in vfa.cuts[t].iter().enumerate() {
                        for c in cuts {
                            s.add_cut(i, c);
                        }
                    }
                }
                stages.push(s);
            }
        }
        Ok(Policy {
            inst,
            vfa,
            mode,
            stages,
            cut_cap: None,
            capped: false,
        })
    }

    pub fn add_cut(&mut self, t: usize, i: usize, cut: Cut) {
        if let Some(cap) = self.cut_cap {
            if self.vfa.cuts[t][i].len() >= cap {
                if !self.capped {
                    log::warn!("cut cap {cap} reached; further cuts are dropped");
                    self.capped = true;
                }
                return;
            }
        }
        if self.mode == SolveMode::Warm {
            self.stages[t].add_cut(i, &cut);
        }
        self.vfa.add_cut(t, i, cut);
    }

    /// Solves stage t from incoming resources `input` with wind `wind`, the
    /// value term weighted by `weights` and an optional proximal term.
    pub fn solve_stage(
        &mut self,
        t: usize,
        input: &[f64],
        wind: f64,
        weights: &[f64],
        reg: Option<&Regularization>,
    ) -> Result<StageSolution> {
        let ctx = || format!("stage {t}");
        match self.mode {
            SolveMode::Warm => {
                let s = &mut self.stages[t];
                let sol = s.solve(input, wind, weights, reg).map_err(|e| Error::solver(ctx(), e))?;
                Ok(StageSolution {
                    objective: sol.objective,
                    primal: sol.primal,
                    coupling_duals: sol.coupling_duals,
                    layout: s.layout.clone(),
                })
            }
            SolveMode::Cold => {
                let term = VfaTerm {
                    cuts: &self.vfa.cuts[t],
                    weights,
                };
                let sp = self.inst.build_stage_subproblem(
                    t,
                    &ResourceState::from_slice(input),
                    wind,
                    (t < self.inst.horizon).then_some(term),
                    reg,
                );
                let sol = solve(&sp.problem).map_err(|e| Error::solver(ctx(), e))?;
                Ok(StageSolution {
                    objective: sol.objective,
                    primal: sol.primal,
                    coupling_duals: sol.coupling_duals,
                    layout: sp.layout,
                })
            }
        }
    }

    /// Runs the policy along the observed grid indices `path` (W_0..=W_T),
    /// filtering the knowledge state as it goes. `reg` supplies the proximal
    /// term per stage.
    pub fn simulate(
        &mut self,
        model: &ErrorModel,
        path: &[usize],
        reg: &dyn Fn(usize) -> Option<Regularization>,
    ) -> Result<ForwardResult> {
        let inst = self.inst;
        let horizon = inst.horizon;
        if path.len() != horizon + 1 {
            return Err(Error::InvalidInput(format!(
                "path has {} observations, horizon needs {}",
                path.len(),
                horizon + 1
            )));
        }
        let grid = model.grid();
        let mut k: KnowledgeState = model.init_knowledge(path[0]);
        let mut state = inst.initial_state();
        let mut out = ForwardResult {
            states: Vec::new(),
            post: Vec::new(),
            decisions: Vec::new(),
            costs: Vec::new(),
            weights: Vec::new(),
            objectives: Vec::new(),
            total: 0.0,
        };
        for t in 0..=horizon {
            if t > 0 {
                k = model.knowledge_update(&k, path[t])?;
            }
            let wind = inst.wind(t, grid.points[path[t]]);
            let weights = model.info_weights(&k);
            let r = reg(t);
            let sol = self.solve_stage(t, &state.to_vec(), wind, &weights, r.as_ref())?;
            let decision = inst.decision_from(&sol.layout, &sol.primal);
            let post: Vec<f64> = sol.layout.r_out.iter().map(|&v| sol.primal[v]).collect();
            let post_state = ResourceState::from_slice(&post);
            let cost = inst.stage_cost(t, &post_state, &decision);
            out.total += cost.total;
            out.states.push(state);
            out.post.push(post);
            out.decisions.push(decision);
            out.costs.push(cost);
            out.weights.push(weights);
            out.objectives.push(sol.objective);
            state = post_state;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub vfa: ValueFunctionApprox,
    pub trace: Vec<TraceRow>,
    pub timing: Vec<IterationTiming>,
    pub converged: bool,
    /// Forward sample paths in iteration order (grid indices).
    pub paths: Vec<Vec<usize>>,
    /// Mean of the per-iteration sampled fractions.
    pub sampled_fraction: f64,
}

/// Training state of the SDDP loop.
pub struct Sddp<'a> {
    pub inst: &'a GridInstance,
    pub model: &'a ErrorModel,
    pub config: TrainConfig,
    pub policy: Policy<'a>,
    pub sampler: SamplerState,
    /// P(·|i) over the grid per information state.
    pub nominal: Vec<Vec<f64>>,
    posteriors: Vec<Option<Vec<f64>>>,
    support: Vec<usize>,
    w0: usize,
    incumbent: Option<Vec<Vec<f64>>>,
    path_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    pub lower_bounds: Vec<f64>,
    pub forward_costs: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub timing: Vec<IterationTiming>,
    pub paths: Vec<Vec<usize>>,
}

impl<'a> Sddp<'a> {
    pub fn new(inst: &'a GridInstance, model: &'a ErrorModel, config: TrainConfig) -> Result<Self> {
        if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
            return Err(Error::InvalidInput("epsilon must lie in (0, 1)".into()));
        }
        if config.ub_window == 0 {
            return Err(Error::InvalidInput("upper bound window must be positive".into()));
        }
        config.schedule.validate()?;
        let ni = model.num_info_states();
        let grid = model.grid();
        let nominal: Vec<Vec<f64>> = (0..ni).map(|i| model.compact_error_dist(i)).collect();
        let posteriors = (0..grid.len()).map(|w| model.posterior_info_probs(w).ok()).collect();
        let lo: f64 = inst.storage.iter().map(|b| b.min).sum();
        let hi: f64 = inst.storage.iter().map(|b| b.max).sum();
        let sampler = SamplerState::new(
            config.sampler,
            grid,
            nominal.clone(),
            inst.horizon,
            AggregationScheme::new(lo, hi, config.sampler.bins),
        )?;
        let mut policy = Policy::new(
            inst,
            ValueFunctionApprox::new(inst.horizon, ni, inst.resource_dims()),
            config.mode,
        )?;
        policy.cut_cap = config.cut_cap;
        Ok(Sddp {
            support: full_support(&nominal),
            w0: grid.snap(config.initial_error),
            path_rng: substream(config.seed, "paths"),
            sample_rng: substream(config.seed, "sampler"),
            inst,
            model,
            policy,
            sampler,
            nominal,
            posteriors,
            incumbent: None,
            lower_bounds: Vec::new(),
            forward_costs: Vec::new(),
            trace: Vec::new(),
            timing: Vec::new(),
            paths: Vec::new(),
            config,
        })
    }

    pub fn initial_index(&self) -> usize {
        self.w0
    }

    pub fn vfa(&self) -> &ValueFunctionApprox {
        &self.policy.vfa
    }

    fn posterior(&self, w: usize) -> Result<&[f64]> {
        self.posteriors[w].as_deref().ok_or_else(|| Error::DegenerateObservation {
            value: self.model.grid().points[w],
            context: "posterior information state probabilities".into(),
        })
    }

    /// Forward pass k along `path`: regularized towards the previous
    /// trajectory except at k = 0 and at the horizon.
    pub fn forward_pass(&mut self, k: usize, path: &[usize]) -> Result<ForwardResult> {
        let rho = self.config.schedule.rho(k);
        let weights = self.inst.regularization_weights();
        let horizon = self.inst.horizon;
        let incumbent = self.incumbent.clone();
        let reg = move |t: usize| -> Option<Regularization> {
            let inc = incumbent.as_ref()?;
            (k > 0 && t < horizon && rho > 0.0).then(|| Regularization {
                rho,
                incumbent: inc[t].clone(),
                weights: weights.clone(),
            })
        };
        self.policy.simulate(self.model, path, &reg)
    }

    /// Backward pass k over the forward pass's post-decision points. Returns
    /// (number of subproblem solves, mean sampled fraction).
    pub fn backward_pass(&mut self, k: usize, post: &[Vec<f64>]) -> Result<(usize, f64)> {
        let grid = self.model.grid().clone();
        let horizon = self.inst.horizon;
        let mut solves = 0;
        let mut fraction = 0.0;
        for t in (1..=horizon).rev() {
            let rin = &post[t - 1];
            let total_battery: f64 = rin[..rin.len() - 1].iter().sum();
            let r = self.sampler.aggregation.bin(total_battery);
            let draw = self.sampler.draw(t, r, &mut self.sample_rng);
            let unique = draw.unique();
            fraction += unique.len() as f64 / self.support.len() as f64;
            let mut value = vec![0.0; grid.len()];
            let mut slope = vec![Vec::new(); grid.len()];
            let empty: Vec<f64> = Vec::new();
            for &w in &unique {
                let wind = self.inst.wind(t, grid.points[w]);
                let weights = if t < horizon { self.posterior(w)?.to_vec() } else { empty.clone() };
                let sol = self.policy.solve_stage(t, rin, wind, &weights, None)?;
                solves += 1;
                value[w] = sol.objective;
                slope[w] = sol.coupling_duals;
            }
            if self.config.sampler.kind == SamplerKind::Importance {
                let q = draw.q.clone().expect("importance draws carry Q");
                let vhat: Vec<f64> = draw
                    .samples
                    .iter()
                    .map(|&w| {
                        let weights = if t < horizon { self.posteriors[w].clone().unwrap_or_default() } else { Vec::new() };
                        if t < horizon && !weights.is_empty() {
                            observe_vhat(value[w], &self.policy.vfa, t, rin, &weights)
                        } else {
                            value[w].max(0.0)
                        }
                    })
                    .collect();
                for i in 0..self.sampler.info_states() {
                    self.sampler.update_weights(t, r, i, &draw.samples, &vhat, &q);
                }
            }
            let dims = rin.len();
            for i in 0..self.nominal.len() {
                let p = &self.nominal[i];
                let Some(alpha) = draw.estimate_with(self.config.sampler.estimator, p, |w| value[w]) else {
                    log::warn!("stage {t}: no sampled outcome is possible from information state {i}; cut skipped");
                    continue;
                };
                let beta: Vec<f64> = (0..dims)
                    .map(|d| draw.estimate_with(self.config.sampler.estimator, p, |w| slope[w][d]).unwrap_or(0.0))
                    .collect();
                self.policy.add_cut(
                    t - 1,
                    i,
                    Cut {
                        alpha,
                        beta,
                        anchor: rin.clone(),
                        iteration: k,
                    },
                );
            }
        }
        Ok((solves, fraction / horizon as f64))
    }

    /// Stage 0 value under the initial beliefs.
    pub fn lower_bound(&mut self) -> Result<f64> {
        let k0 = self.model.init_knowledge(self.w0);
        let weights = self.model.info_weights(&k0);
        let wind = self.inst.wind(0, self.model.grid().points[self.w0]);
        let r0 = self.inst.initial_state().to_vec();
        Ok(self.policy.solve_stage(0, &r0, wind, &weights, None)?.objective)
    }

    /// One forward and one backward pass along a freshly sampled path.
    pub fn iterate(&mut self) -> Result<TraceRow> {
        let start = Instant::now();
        let k = self.trace.len();
        let path = self.model.sample_errors(self.w0, self.inst.horizon, &mut self.path_rng);
        self.iterate_on(k, &path, start)
    }

    fn iterate_on(&mut self, k: usize, path: &[usize], start: Instant) -> Result<TraceRow> {
        let fwd = self.forward_pass(k, path)?;
        let forward_ms = start.elapsed().as_secs_f64() * 1e3;
        let b0 = Instant::now();
        let (solves, fraction) = self.backward_pass(k, &fwd.post)?;
        let backward_ms = b0.elapsed().as_secs_f64() * 1e3;
        self.incumbent = Some(fwd.post.clone());
        self.forward_costs.push(fwd.total);
        self.paths.push(path.to_vec());
        let lower = self.lower_bound()?;
        self.lower_bounds.push(lower);
        let window = &self.forward_costs[self.forward_costs.len().saturating_sub(self.config.ub_window)..];
        let upper = window.iter().sum::<f64>() / window.len() as f64;
        let elapsed = start.elapsed().as_millis() as u64;
        let prev_ms = self.trace.last().map_or(0, |r| r.wall_ms);
        let row = TraceRow {
            iter: k,
            lower,
            upper,
            wall_ms: if self.config.record_wall_time { prev_ms + elapsed } else { 0 },
            cuts_total: self.policy.vfa.total_cuts(),
        };
        self.trace.push(row.clone());
        self.timing.push(IterationTiming {
            iter: k,
            forward_ms,
            backward_ms,
            backward_solves: solves,
            sampled_fraction: fraction,
        });
        Ok(row)
    }

    /// Relative gap (U − L)/|U| once the upper bound window is full.
    pub fn converged(&self) -> bool {
        match self.trace.last() {
            Some(row) if self.forward_costs.len() >= self.config.ub_window.max(self.config.min_iters) => {
                let denom = row.upper.abs().max(1e-9);
                (row.upper - row.lower) / denom <= self.config.epsilon
            }
            _ => false,
        }
    }

    pub fn train(mut self) -> Result<TrainResult> {
        let mut converged = false;
        for _ in 0..self.config.max_iters {
            self.iterate()?;
            if self.converged() {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("no convergence within {} iterations", self.config.max_iters);
        }
        Ok(self.finish(converged))
    }

    pub fn finish(self, converged: bool) -> TrainResult {
        let n = self.timing.len().max(1) as f64;
        TrainResult {
            sampled_fraction: self.timing.iter().map(|t| t.sampled_fraction).sum::<f64>() / n,
            vfa: self.policy.vfa,
            trace: self.trace,
            timing: self.timing,
            converged,
            paths: self.paths,
        }
    }
}

/// Convenience wrapper: builds the loop and trains.
pub fn train(inst: &GridInstance, model: &ErrorModel, config: TrainConfig) -> Result<TrainResult> {
    Sddp::new(inst, model, config)?.train()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub sd: f64,
    pub worst: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats {
                mean: 0.0,
                sd: 0.0,
                worst: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stats {
            mean,
            sd,
            worst: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: usize,
    pub objective: f64,
    pub shortage_mwh: f64,
    /// Generation plus storage cost.
    pub operating_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub scenarios: Vec<ScenarioResult>,
    pub objective: Stats,
    pub shortage: Stats,
    pub operating_cost: Stats,
}

impl TestReport {
    pub fn from_scenarios(scenarios: Vec<ScenarioResult>) -> Self {
        let col = |f: fn(&ScenarioResult) -> f64| Stats::of(&scenarios.iter().map(f).collect::<Vec<_>>());
        TestReport {
            objective: col(|s| s.objective),
            shortage: col(|s| s.shortage_mwh),
            operating_cost: col(|s| s.operating_cost),
            scenarios,
        }
    }
}

/// Runs the frozen policy (no regularization) along each scenario path.
pub fn test_policy(
    vfa: &ValueFunctionApprox,
    inst: &GridInstance,
    model: &ErrorModel,
    scenarios: &[Vec<usize>],
) -> Result<TestReport> {
    let mut policy = Policy::new(inst, vfa.clone(), SolveMode::Warm)?;
    let mut out = Vec::new();
    for (s, path) in scenarios.iter().enumerate() {
        let f = policy.simulate(model, path, &|_| None)?;
        out.push(ScenarioResult {
            scenario: s,
            objective: f.total,
            shortage_mwh: f.shortage(),
            operating_cost: f.costs.iter().map(|c| c.generation + c.storage).sum(),
        });
    }
    Ok(TestReport::from_scenarios(out))
}

/// Test scenarios drawn from `model` on the "test" substream of `seed`.
pub fn sample_scenarios(model: &ErrorModel, w0: usize, horizon: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = substream(seed, "test");
    (0..count).map(|_| model.sample_errors(w0, horizon, &mut rng)).collect()
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "lower", "upper", "wall_ms", "cuts_total"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.wall_ms.to_string(),
            r.cuts_total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(rows: &[IterationTiming], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "forward_ms", "backward_ms", "backward_solves", "sampled_fraction"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            format!("{:.3}", r.forward_ms),
            format!("{:.3}", r.backward_ms),
            r.backward_solves.to_string(),
            r.sampled_fraction.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_test_results<W: Write>(rows: &[ScenarioResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "objective", "shortage_mwh", "operating_cost"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.scenario.to_string(),
            r.objective.to_string(),
            r.shortage_mwh.to_string(),
            r.operating_cost.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_test_results<R: std::io::Read>(input: R, origin: &str) -> Result<Vec<ScenarioResult>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::parse(origin, e)))
        .collect()
}

pub fn read_trace<R: std::io::Read>(input: R, origin: &str) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::parse(origin, e)))
        .collect()
}
