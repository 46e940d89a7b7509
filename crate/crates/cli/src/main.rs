use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hmsddp::harness::{
    combination_dir, combination_experiment, crossing_fidelity, emit_reports, fit_model, gen_synthetic, load_series,
    run_combination_seed, run_oracle, run_test, run_train, Combination, Manifest, RunStatus,
};
use hmsddp::oracle::BranchLaw;
use hmsddp::synthetic::SyntheticSpec;
use hmsddp::{Error, Experiment, ExperimentConfig, ModelChoice, SamplerKind, ValueFunctionApprox};

#[derive(Parser)]
#[command(name = "hmsddp", version, about = "Grid storage planning with hidden-Markov SDDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Filter,
    Compact,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an error model from the configured training files.
    FitModel {
        #[command(flatten)]
        common: Common,
    },
    /// Compare simulated crossing times with the training data.
    ValidateCrossings {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
    /// Generate synthetic forecast-error series from a generator spec.
    GenSynthetic {
        /// Generator spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy for one seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Evaluate a trained value function on test scenarios.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Value function file; defaults to vfa.json in the run directory.
        #[arg(long)]
        vfa: Option<PathBuf>,
    },
    /// Solve the extensive form on the full scenario tree.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Law::Filter)]
        law: Law,
    },
    /// Train and test every model and sampler combination over the seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured seeds, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

/// Loads the config and applies command-line overrides.
fn load_experiment(c: &Common) -> Result<Experiment> {
    let (mut config, base) = ExperimentConfig::load(&c.config)?;
    if let Some(m) = c.model {
        if m != config.model {
            config.model_file = None;
        }
        config.model = m;
    }
    if let Some(p) = &c.instance {
        config.instance = std::path::absolute(p)?.display().to_string();
    }
    if let Some(s) = c.sampler {
        config.sampler.kind = s;
    }
    if let Some(k) = c.max_iters {
        config.max_iters = k;
    }
    if let Some(e) = c.epsilon {
        config.epsilon = e;
    }
    config.validate()?;
    Ok(Experiment::from_config(config, &base)?)
}

fn out_dir(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(default))
}

fn training_series(config: &ExperimentConfig, config_path: &Path) -> Result<Vec<hmsddp::ForecastErrorSeries>> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = config.training.iter().map(|f| base.join(f)).collect();
    Ok(load_series(&paths)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::FitModel { common } => {
            let (mut config, _) = ExperimentConfig::load(&common.config)?;
            if let Some(m) = common.model {
                config.model = m;
            }
            let series = training_series(&config, &common.config)?;
            if series.is_empty() {
                anyhow::bail!(Error::InvalidInput("fit-model needs training files in the config".into()));
            }
            let model = fit_model(config.model, &series, config.m, config.n, config.grid_points)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from(format!("{}-model.json", config.model.label())));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&out, model.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} model with {} information states to {}", model.kind(), model.num_info_states(), out.display());
        }
        Command::ValidateCrossings {
            common,
            seed,
            paths,
            steps,
        } => {
            let exp = load_experiment(&common)?;
            let series = training_series(&exp.config, &common.config)?;
            if series.is_empty() {
                anyhow::bail!(Error::InvalidInput("validate-crossings needs training files in the config".into()));
            }
            let dir = out_dir(&common, "validate");
            let mut manifest = Manifest::new("validate-crossings", &exp.config, seed);
            manifest.write(&dir)?;
            let fid = crossing_fidelity(&exp.model, &series, paths, steps, seed)?;
            let mut w = csv::Writer::from_path(dir.join("crossings.csv"))?;
            w.write_record(["source", "down_crossing_steps"])?;
            for d in &fid.train_down {
                w.write_record(["training", &d.to_string()])?;
            }
            for d in &fid.sim_down {
                w.write_record(["simulated", &d.to_string()])?;
            }
            w.flush()?;
            fs::write(dir.join("fidelity.json"), serde_json::to_string_pretty(&fid)? + "\n")?;
            manifest.status = RunStatus::Complete;
            manifest.outputs = vec!["crossings.csv".into(), "fidelity.json".into()];
            manifest.write(&dir)?;
            println!(
                "{} model: KS down {:.4}, KS up {:.4}, mean down {:.2} (training {:.2})",
                fid.model, fid.ks_down, fid.ks_up, fid.sim_mean_down, fid.train_mean_down
            );
        }
        Command::GenSynthetic { config, seed, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::parse(config.display().to_string(), e))?;
            let files = gen_synthetic(&spec, seed, &out)?;
            println!("wrote {} series to {}", files.len(), out.display());
        }
        Command::Train { common, seed } => {
            let exp = load_experiment(&common)?;
            let dir = out_dir(&common, &format!("train-seed{seed}"));
            let res = run_train(&exp, seed, &dir)?;
            let last = res.trace.last().expect("at least one iteration");
            println!(
                "{} iterations, lower {:.4}, upper {:.4}, converged {}",
                res.trace.len(),
                last.lower,
                last.upper,
                res.converged
            );
            if !res.converged {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Test { common, seed, vfa } => {
            let exp = load_experiment(&common)?;
            let dir = out_dir(&common, &format!("train-seed{seed}"));
            let vfa_path = vfa.unwrap_or_else(|| dir.join("vfa.json"));
            let text = fs::read_to_string(&vfa_path).with_context(|| format!("reading {}", vfa_path.display()))?;
            let vfa = ValueFunctionApprox::from_json(&text)?;
            let report = run_test(&exp, &vfa, seed, exp.config.test_scenarios, &dir)?;
            println!(
                "{} scenarios: objective {:.3} (sd {:.3}), shortage {:.3} MWh (worst {:.3})",
                report.scenarios.len(),
                report.objective.mean,
                report.objective.sd,
                report.shortage.mean,
                report.shortage.worst
            );
        }
        Command::Oracle { common, law } => {
            let exp = load_experiment(&common)?;
            let dir = out_dir(&common, "oracle");
            let law = match law {
                Law::Filter => BranchLaw::Filter,
                Law::Compact => BranchLaw::Compact,
            };
            let s = run_oracle(&exp, law, &dir)?;
            println!("optimal value {:.6} over {} leaves", s.value, s.leaves);
        }
        Command::Compare { common, seeds } => {
            let base = load_experiment(&common)?;
            let seeds = seeds.unwrap_or_else(|| base.config.seeds.clone());
            let series = training_series(&base.config, &common.config)?;
            let training = (!series.is_empty()).then_some(series.as_slice());
            let dir = out_dir(&common, "compare");
            fs::create_dir_all(&dir)?;
            let combos = Combination::table();
            for combo in &combos {
                let exp = combination_experiment(&base, *combo, training)?;
                for &seed in &seeds {
                    log::info!("{} seed {seed}", combo.label());
                    run_combination_seed(&exp, &base, seed, &combination_dir(&dir, &combo.label(), seed))?;
                }
            }
            let labels: Vec<String> = combos.iter().map(Combination::label).collect();
            let (rows, missing) = emit_reports(&dir, &labels, &seeds)?;
            for r in &rows {
                println!(
                    "{:<20} shortage mean {:.3} worst {:.3}, objective mean {:.3}",
                    r.combination, r.shortage.mean, r.shortage.worst, r.objective.mean
                );
            }
            for m in missing {
                eprintln!("missing run {}", m.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Solver { .. }) | Some(Error::ContractViolation(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
