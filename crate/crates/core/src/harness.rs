//! Experiment configuration, run directories with manifests, and report
//! emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossing::{CrossingStateModel, ErrorModel, IidErrorModel};
use crate::error::{Error, Result};
use crate::grid::OutcomeGrid;
use crate::grid_env::{GridInstance, PenaltyParams};
use crate::sampler::{csv_err, SamplerConfig, SamplerKind, SamplerState};
use crate::sddp::{
    read_test_results, read_trace, sample_scenarios, test_policy, write_test_results, write_timing, write_trace,
    RegularizationSchedule, ScenarioResult, Sddp, SolveMode, Stats, TestReport, TrainConfig, TrainResult,
};
use crate::series::ForecastErrorSeries;
use crate::synthetic::{generate, SyntheticSpec};
use crate::vfa::ValueFunctionApprox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Crossing,
    Iid,
}

impl std::str::FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossing" => Ok(ModelChoice::Crossing),
            "iid" => Ok(ModelChoice::Iid),
            _ => Err(Error::InvalidInput(format!("unknown model {s}"))),
        }
    }
}

impl ModelChoice {
    pub fn label(self) -> &'static str {
        match self {
            ModelChoice::Crossing => "crossing",
            ModelChoice::Iid => "iid",
        }
    }
}

fn d_m() -> usize {
    3
}
fn d_n() -> usize {
    5
}
fn d_grid() -> usize {
    200
}
fn d_eps() -> f64 {
    0.02
}
fn d_iters() -> usize {
    100
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4]
}
fn d_tests() -> usize {
    50
}
fn d_window() -> usize {
    10
}
fn d_true() -> bool {
    true
}
fn d_sampler() -> SamplerConfig {
    SamplerConfig::new(SamplerKind::Standard)
}
fn d_mode() -> SolveMode {
    SolveMode::Warm
}
fn d_leaves() -> usize {
    crate::oracle::DEFAULT_MAX_LEAVES
}

/// Experiment configuration file. Relative paths resolve against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: String,
    pub model: ModelChoice,
    /// Fitted model to load instead of fitting from `training`.
    #[serde(default)]
    pub model_file: Option<String>,
    /// Training CSV files, one per episode.
    #[serde(default)]
    pub training: Vec<String>,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    /// Outcome grid size when fitting.
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    #[serde(default = "d_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub schedule: RegularizationSchedule,
    /// Overrides the instance's penalties.
    #[serde(default)]
    pub penalties: Option<PenaltyParams>,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    /// Truncates the instance horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_tests")]
    pub test_scenarios: usize,
    #[serde(default = "d_window")]
    pub ub_window: usize,
    /// Iterations before the stopping test applies; equal to `max_iters`
    /// gives a fixed training budget.
    #[serde(default)]
    pub min_iters: usize,
    #[serde(default)]
    pub initial_error_mw: f64,
    #[serde(default = "d_mode")]
    pub mode: SolveMode,
    #[serde(default)]
    pub cut_cap: Option<usize>,
    #[serde(default = "d_true")]
    pub record_wall_time: bool,
    #[serde(default = "d_leaves")]
    pub oracle_max_leaves: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::parse("config", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)".into());
        }
        if self.horizon == Some(0) {
            return bad("horizon must be at least 1".into());
        }
        if self.model_file.is_none() && self.training.is_empty() {
            return bad("either model_file or training files are required".into());
        }
        if self.m == 0 || self.n == 0 || self.grid_points < 2 {
            return bad("m, n must be positive and grid_points at least 2".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.ub_window == 0 {
            return bad("ub_window must be positive".into());
        }
        if !self.initial_error_mw.is_finite() {
            return bad("initial_error_mw must be finite".into());
        }
        self.sampler.validate()?;
        self.schedule.validate()?;
        Ok(())
    }

    /// Reads a config file and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let mut files = vec![&cfg.instance];
        files.extend(cfg.model_file.iter());
        files.extend(cfg.training.iter());
        for f in files {
            let p = base.join(f);
            if !p.is_file() {
                return Err(Error::InvalidInput(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok((cfg, base))
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_iters: self.max_iters,
            epsilon: self.epsilon,
            schedule: self.schedule,
            ub_window: self.ub_window,
            min_iters: self.min_iters,
            sampler: self.sampler,
            mode: self.mode,
            cut_cap: self.cut_cap,
            seed,
            initial_error: self.initial_error_mw,
            record_wall_time: self.record_wall_time,
        }
    }
}

/// Grid from the pooled errors of all series.
pub fn fit_grid(series: &[ForecastErrorSeries], points: usize) -> Result<OutcomeGrid> {
    let all: Vec<f64> = series.iter().flat_map(|s| s.errors.iter().copied()).collect();
    OutcomeGrid::from_quantiles(&all, points)
}

pub fn fit_model(choice: ModelChoice, series: &[ForecastErrorSeries], m: usize, n: usize, points: usize) -> Result<ErrorModel> {
    let grid = fit_grid(series, points)?;
    Ok(match choice {
        ModelChoice::Crossing => ErrorModel::Crossing(CrossingStateModel::fit(series, m, n, grid)?),
        ModelChoice::Iid => ErrorModel::Iid(IidErrorModel::fit(series, grid)?),
    })
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<ForecastErrorSeries>> {
    paths.iter().map(|p| ForecastErrorSeries::load(p)).collect()
}

/// A loaded experiment: instance and model ready for training.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub instance: GridInstance,
    pub model: ErrorModel,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let (config, base) = ExperimentConfig::load(path)?;
        Self::from_config(config, &base)
    }

    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self> {
        let mut instance = GridInstance::load(&base.join(&config.instance))?;
        if let Some(h) = config.horizon {
            instance = instance.with_horizon(h)?;
        }
        if let Some(p) = config.penalties {
            instance.penalties = p;
        }
        let model = match &config.model_file {
            Some(f) => {
                let p = base.join(f);
                let text = fs::read_to_string(&p).map_err(|e| Error::parse(p.display().to_string(), e))?;
                let m = ErrorModel::from_json(&text)?;
                if m.kind() != config.model.label() {
                    return Err(Error::InvalidInput(format!(
                        "model file holds a {} model, config asks for {}",
                        m.kind(),
                        config.model.label()
                    )));
                }
                m
            }
            None => {
                let paths: Vec<PathBuf> = config.training.iter().map(|f| base.join(f)).collect();
                fit_model(config.model, &load_series(&paths)?, config.m, config.n, config.grid_points)?
            }
        };
        Ok(Experiment {
            config,
            instance,
            model,
        })
    }

    pub fn initial_index(&self) -> usize {
        self.model.grid().snap(self.config.initial_error_mw)
    }

    /// Trains with one seed; also returns the final sampler state.
    pub fn train(&self, seed: u64) -> Result<(TrainResult, SamplerState)> {
        let mut run = Sddp::new(&self.instance, &self.model, self.config.train_config(seed))?;
        let mut converged = false;
        for _ in 0..self.config.max_iters {
            run.iterate()?;
            if run.converged() {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("seed {seed}: no convergence within {} iterations", self.config.max_iters);
        }
        let sampler = run.sampler.clone();
        Ok((run.finish(converged), sampler))
    }

    /// Test scenarios for `seed`, drawn from the experiment's model.
    pub fn scenarios(&self, seed: u64, count: usize) -> Vec<Vec<usize>> {
        sample_scenarios(&self.model, self.initial_index(), self.instance.horizon, count, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: std::collections::BTreeMap<String, String>,
    pub status: RunStatus,
    #[serde(default)]
    pub converged: Option<bool>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, seed: u64) -> Self {
        let mut versions = std::collections::BTreeMap::new();
        versions.insert("hmsddp".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Manifest {
            command: command.to_string(),
            config_sha256: config.sha256(),
            seed,
            versions,
            status: RunStatus::Running,
            converged: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let p = dir.join("manifest.json");
        if !p.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        Ok(Some(serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?))
    }
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    Ok(fs::File::create(dir.join(name))?)
}

/// Trains with one seed and writes trace.csv, timing.csv, vfa.json,
/// sampler.csv and manifest.json into `dir`.
pub fn run_train(exp: &Experiment, seed: u64, dir: &Path) -> Result<TrainResult> {
    let mut manifest = Manifest::new("train", &exp.config, seed);
    manifest.write(dir)?;
    let (result, sampler) = exp.train(seed)?;
    write_trace(&result.trace, create(dir, "trace.csv")?)?;
    write_timing(&result.timing, create(dir, "timing.csv")?)?;
    fs::write(dir.join("vfa.json"), result.vfa.to_json() + "\n")?;
    sampler.write_diagnostics(create(dir, "sampler.csv")?)?;
    let mut f = create(dir, "sampling.json")?;
    writeln!(
        f,
        "{}",
        serde_json::json!({
            "sampler": exp.config.sampler.kind.label(),
            "realized_fraction": result.sampled_fraction,
            "per_iteration": result.timing.iter().map(|t| t.sampled_fraction).collect::<Vec<_>>(),
        })
    )?;
    manifest.status = RunStatus::Complete;
    manifest.converged = Some(result.converged);
    manifest.outputs = ["trace.csv", "timing.csv", "vfa.json", "sampler.csv", "sampling.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    manifest.write(dir)?;
    Ok(result)
}

/// Evaluates a frozen value function on the seed's test scenarios and
/// writes test.csv, reports and manifest.json into `dir`.
pub fn run_test(exp: &Experiment, vfa: &ValueFunctionApprox, seed: u64, count: usize, dir: &Path) -> Result<TestReport> {
    let mut manifest = Manifest::new("test", &exp.config, seed);
    manifest.write(dir)?;
    let scenarios = exp.scenarios(seed, count);
    let report = test_policy(vfa, &exp.instance, &exp.model, &scenarios)?;
    write_test_results(&report.scenarios, create(dir, "test.csv")?)?;
    emit_scenario_reports(exp, vfa, &scenarios, &report, dir)?;
    manifest.status = RunStatus::Complete;
    manifest.outputs = vec!["test.csv".into(), "scenarios.csv".into(), "trajectory.csv".into(), "summary.json".into()];
    manifest.write(dir)?;
    Ok(report)
}

/// Per-scenario series with threshold exceedance markers, the battery and
/// shortage trajectory of the worst-shortage scenario, and a summary.
pub fn emit_scenario_reports(
    exp: &Experiment,
    vfa: &ValueFunctionApprox,
    scenarios: &[Vec<usize>],
    report: &TestReport,
    dir: &Path,
) -> Result<()> {
    let theta_c = exp.instance.penalties.threshold;
    let mut w = csv::Writer::from_writer(create(dir, "scenarios.csv")?);
    w.write_record(["scenario", "objective", "shortage_mwh", "operating_cost", "exceeds_threshold"])
        .map_err(csv_err)?;
    for s in &report.scenarios {
        w.write_record([
            s.scenario.to_string(),
            s.objective.to_string(),
            s.shortage_mwh.to_string(),
            s.operating_cost.to_string(),
            (s.shortage_mwh > theta_c).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(dir, "trajectory.csv")?);
    let nb = exp.instance.storage.len();
    let mut header = vec!["t".to_string(), "wind_error_mw".to_string()];
    header.extend((0..nb).map(|k| format!("battery{k}_mwh")));
    header.push("shortage_mwh".into());
    w.write_record(&header).map_err(csv_err)?;
    if let Some(worst) = report
        .scenarios
        .iter()
        .max_by(|a, b| a.shortage_mwh.total_cmp(&b.shortage_mwh).then(b.scenario.cmp(&a.scenario)))
    {
        let mut policy = crate::sddp::Policy::new(&exp.instance, vfa.clone(), SolveMode::Warm)?;
        let path = &scenarios[worst.scenario];
        let f = policy.simulate(&exp.model, path, &|_| None)?;
        for (t, post) in f.post.iter().enumerate() {
            let mut rec = vec![t.to_string(), exp.model.grid().points[path[t]].to_string()];
            rec.extend(post.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    let summary = serde_json::json!({
        "scenarios": report.scenarios.len(),
        "threshold_mwh": theta_c,
        "exceedances": report.scenarios.iter().filter(|s| s.shortage_mwh > theta_c).count(),
        "objective": report.objective,
        "shortage": report.shortage,
        "operating_cost": report.operating_cost,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    Ok(())
}

/// One configuration of the comparison grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combination {
    pub model: ModelChoice,
    pub sampler: SamplerKind,
}

impl Combination {
    pub fn label(&self) -> String {
        format!("{}-{}", self.model.label(), self.sampler.label())
    }

    /// IID model with exact expectations, then the crossing model with each
    /// sampler.
    pub fn table() -> Vec<Combination> {
        let mut v = vec![Combination {
            model: ModelChoice::Iid,
            sampler: SamplerKind::None,
        }];
        for s in [SamplerKind::None, SamplerKind::Standard, SamplerKind::Importance] {
            v.push(Combination {
                model: ModelChoice::Crossing,
                sampler: s,
            });
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub combination: String,
    pub seeds: usize,
    pub objective: Stats,
    pub shortage: Stats,
    pub operating_cost: Stats,
    /// Mean training wall time, ms.
    pub train_ms: f64,
    pub converged_runs: usize,
    pub iterations: f64,
}

/// Training outcome of one combination and seed, kept in result.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub train_ms: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sampled_fraction: f64,
}

/// Pools the scenarios of all seeds of one combination.
pub fn summarize(label: &str, runs: &[(SeedResult, Vec<ScenarioResult>)]) -> SummaryRow {
    let all: Vec<&ScenarioResult> = runs.iter().flat_map(|r| r.1.iter()).collect();
    let col = |f: fn(&ScenarioResult) -> f64| Stats::of(&all.iter().map(|s| f(s)).collect::<Vec<_>>());
    let n = runs.len().max(1) as f64;
    SummaryRow {
        combination: label.to_string(),
        seeds: runs.len(),
        objective: col(|s| s.objective),
        shortage: col(|s| s.shortage_mwh),
        operating_cost: col(|s| s.operating_cost),
        train_ms: runs.iter().map(|r| r.0.train_ms).sum::<f64>() / n,
        converged_runs: runs.iter().filter(|r| r.0.converged).count(),
        iterations: runs.iter().map(|r| r.0.iterations as f64).sum::<f64>() / n,
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "combination",
        "seeds",
        "objective_mean",
        "objective_sd",
        "objective_worst",
        "shortage_mean",
        "shortage_sd",
        "shortage_worst",
        "operating_cost_mean",
        "train_ms",
        "converged_runs",
        "iterations",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.combination.clone(),
            r.seeds.to_string(),
            r.objective.mean.to_string(),
            r.objective.sd.to_string(),
            r.objective.worst.to_string(),
            r.shortage.mean.to_string(),
            r.shortage.sd.to_string(),
            r.shortage.worst.to_string(),
            r.operating_cost.mean.to_string(),
            format!("{:.1}", r.train_ms),
            r.converged_runs.to_string(),
            r.iterations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Run directory of one combination and seed under a compare directory.
pub fn combination_dir(root: &Path, label: &str, seed: u64) -> PathBuf {
    root.join(label).join(format!("seed{seed}"))
}

/// Experiment for one combination, refitting the model when the choice
/// differs from the base experiment's.
pub fn combination_experiment(base: &Experiment, combo: Combination, training: Option<&[ForecastErrorSeries]>) -> Result<Experiment> {
    let mut config = base.config.clone();
    config.model = combo.model;
    config.sampler.kind = combo.sampler;
    let model = if combo.model == base.config.model {
        base.model.clone()
    } else {
        let series = training.ok_or_else(|| {
            Error::InvalidInput(format!("comparing the {} model needs training files", combo.model.label()))
        })?;
        config.model_file = None;
        fit_model(combo.model, series, config.m, config.n, config.grid_points)?
    };
    Ok(Experiment {
        config,
        instance: base.instance.clone(),
        model,
    })
}

/// Trains and tests one combination for one seed inside `dir`, reusing a
/// completed run with the same configuration hash. Test scenarios come from
/// `scenario_model` so every combination faces the same paths.
pub fn run_combination_seed(exp: &Experiment, scenario_model: &Experiment, seed: u64, dir: &Path) -> Result<SeedResult> {
    let result_path = dir.join("result.json");
    if let Some(m) = Manifest::read(dir)? {
        if m.status == RunStatus::Complete && m.config_sha256 == exp.config.sha256() && result_path.is_file() {
            let text = fs::read_to_string(&result_path)?;
            if let Ok(r) = serde_json::from_str::<SeedResult>(&text) {
                if dir.join("test.csv").is_file() {
                    log::info!("reusing completed run in {}", dir.display());
                    return Ok(r);
                }
            }
        }
    }
    let mut manifest = Manifest::new("compare", &exp.config, seed);
    manifest.write(dir)?;
    let train = run_train(exp, seed, &dir.join("train"))?;
    let scenarios = scenario_model.scenarios(seed, exp.config.test_scenarios);
    let report = test_policy(&train.vfa, &exp.instance, &scenario_model.model, &scenarios)?;
    write_test_results(&report.scenarios, create(dir, "test.csv")?)?;
    let result = SeedResult {
        seed,
        train_ms: train.trace.last().map_or(0.0, |r| r.wall_ms as f64),
        converged: train.converged,
        iterations: train.trace.len(),
        sampled_fraction: train.sampled_fraction,
    };
    fs::write(&result_path, serde_json::to_string_pretty(&result).expect("json") + "\n")?;
    manifest.status = RunStatus::Complete;
    manifest.converged = Some(train.converged);
    manifest.outputs = vec!["train".into(), "test.csv".into(), "result.json".into()];
    manifest.write(dir)?;
    Ok(result)
}

/// Reads completed compare runs under `root` and writes summary.csv and
/// convergence.csv. Returns the summary rows and the runs that were missing.
pub fn emit_reports(root: &Path, labels: &[String], seeds: &[u64]) -> Result<(Vec<SummaryRow>, Vec<PathBuf>)> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let mut conv = csv::Writer::from_writer(create(root, "convergence.csv")?);
    conv.write_record(["combination", "seed", "iter", "lower", "upper", "wall_ms"])
        .map_err(csv_err)?;
    for label in labels {
        let mut runs = Vec::new();
        for &seed in seeds {
            let dir = combination_dir(root, label, seed);
            let loaded = (|| -> Result<_> {
                let result: SeedResult = serde_json::from_str(&fs::read_to_string(dir.join("result.json"))?)
                    .map_err(|e| Error::parse("result.json", e))?;
                let tests = read_test_results(fs::File::open(dir.join("test.csv"))?, "test.csv")?;
                let trace = read_trace(fs::File::open(dir.join("train").join("trace.csv"))?, "trace.csv")?;
                Ok((result, tests, trace))
            })();
            match loaded {
                Ok((result, tests, trace)) => {
                    for r in &trace {
                        conv.write_record([
                            label.clone(),
                            seed.to_string(),
                            r.iter.to_string(),
                            r.lower.to_string(),
                            r.upper.to_string(),
                            r.wall_ms.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                    runs.push((result, tests));
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", dir.display());
                    missing.push(dir);
                }
            }
        }
        if !runs.is_empty() {
            rows.push(summarize(label, &runs));
        }
    }
    conv.flush()?;
    write_summary(&rows, create(root, "summary.csv")?)?;
    Ok((rows, missing))
}

/// Generates synthetic training files `episode_<k>.csv` into `dir`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (k, s) in generate(spec, seed)?.iter().enumerate() {
        let p = dir.join(format!("episode_{k}.csv"));
        s.write_csv(fs::File::create(&p)?)?;
        out.push(p);
    }
    Ok(out)
}

/// Two-sample Kolmogorov–Smirnov distance between integer samples.
pub fn ks_distance(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Crossing-time comparison of simulated paths against training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingFidelity {
    pub model: String,
    pub paths: usize,
    pub steps: usize,
    pub ks_down: f64,
    pub ks_up: f64,
    pub train_mean_down: f64,
    pub sim_mean_down: f64,
    pub train_mean_up: f64,
    pub sim_mean_up: f64,
    #[serde(skip)]
    pub train_down: Vec<usize>,
    #[serde(skip)]
    pub sim_down: Vec<usize>,
}

fn mean_usize(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Simulates `paths` paths of `steps` steps and compares completed crossing
/// durations with the training series. Each path starts at a training
/// observation; its first run is dropped because it began before the path.
pub fn crossing_fidelity(
    model: &ErrorModel,
    series: &[ForecastErrorSeries],
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<CrossingFidelity> {
    let mut train_down = Vec::new();
    let mut train_up = Vec::new();
    for s in series {
        let c = crate::series::extract_crossings(&s.errors)?;
        train_down.extend(c.down_times);
        train_up.extend(c.up_times);
    }
    let starts: Vec<f64> = series.iter().flat_map(|s| s.errors.iter().copied()).collect();
    let grid = model.grid();
    let mut rng = crate::rng::substream(seed, "validate");
    let mut sim_down = Vec::new();
    let mut sim_up = Vec::new();
    for _ in 0..paths {
        use rand::Rng;
        let w0 = grid.snap(starts[rng.random_range(0..starts.len())]);
        let idx = model.sample_errors(w0, steps, &mut rng);
        let errors: Vec<f64> = idx.iter().map(|&k| grid.points[k]).collect();
        let c = crate::series::extract_crossings(&errors)?;
        for run in c.runs.iter().skip(1).filter(|r| r.complete) {
            match run.sign {
                crate::series::Sign::Below => sim_down.push(run.len),
                crate::series::Sign::Above => sim_up.push(run.len),
            }
        }
    }
    Ok(CrossingFidelity {
        model: model.kind().to_string(),
        paths,
        steps,
        ks_down: ks_distance(&train_down, &sim_down),
        ks_up: ks_distance(&train_up, &sim_up),
        train_mean_down: mean_usize(&train_down),
        sim_mean_down: mean_usize(&sim_down),
        train_mean_up: mean_usize(&train_up),
        sim_mean_up: mean_usize(&sim_up),
        train_down,
        sim_down,
    })
}

/// Tree statistics and optimum written by the `oracle` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub value: f64,
    pub law: crate::oracle::BranchLaw,
    pub initial_index: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub depth_sums: Vec<f64>,
}

/// Solves the extensive form and writes oracle.json, decisions.csv and
/// manifest.json into `dir`.
pub fn run_oracle(exp: &Experiment, law: crate::oracle::BranchLaw, dir: &Path) -> Result<OracleSummary> {
    let mut manifest = Manifest::new("oracle", &exp.config, 0);
    manifest.write(dir)?;
    let res = crate::oracle::extensive_form_oracle(
        &exp.instance,
        &exp.model,
        exp.initial_index(),
        law,
        exp.config.oracle_max_leaves,
    )?;
    let summary = OracleSummary {
        value: res.value,
        law,
        initial_index: exp.initial_index(),
        nodes: res.tree.nodes.len(),
        leaves: res.tree.leaves().count(),
        depth_sums: res.tree.depth_sums(),
    };
    fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    let mut w = csv::Writer::from_writer(create(dir, "decisions.csv")?);
    let nb = exp.instance.storage.len();
    let mut header = vec!["node".to_string(), "parent".into(), "stage".into(), "prob".into(), "error_mw".into()];
    header.extend((0..exp.instance.generators.len()).map(|g| format!("gen{g}_mw")));
    header.extend((0..nb).map(|b| format!("battery{b}_mwh")));
    header.push("shortage_mwh".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, node) in res.tree.nodes.iter().enumerate() {
        let mut rec = vec![
            k.to_string(),
            node.parent.map_or(String::new(), |p| p.to_string()),
            node.stage.to_string(),
            node.prob.to_string(),
            exp.model.grid().points[node.obs].to_string(),
        ];
        rec.extend(res.decisions[k].gen.iter().map(|g| g.to_string()));
        rec.extend(res.post[k].iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    manifest.status = RunStatus::Complete;
    manifest.outputs = vec!["oracle.json".into(), "decisions.csv".into()];
    manifest.write(dir)?;
    Ok(summary)
}
