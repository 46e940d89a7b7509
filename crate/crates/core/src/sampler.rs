//! Backward-pass outcome sampling: exhaustive, standard (nominal draws per
//! information state) and risk-directed importance sampling.
//!
//! The importance sampler keeps, per (stage, aggregated resource bin,
//! information state), nonnegative weights over a small set of basis
//! distributions. The weights chase |v̂|·P(w|i), the shape of the zero-variance
//! sampling density, so draws concentrate where the cost-to-go is sensitive.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OutcomeGrid;
use crate::rng::sample_index;
use crate::vfa::ValueFunctionApprox;

/// Largest supported basis set.
pub const MAX_BASIS: usize = 32;
/// Mass kept on every supported point by each basis distribution.
pub const BASIS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Every outcome, exact expectations.
    None,
    Standard,
    Importance,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SamplerKind::None),
            "standard" => Ok(SamplerKind::Standard),
            "importance" => Ok(SamplerKind::Importance),
            _ => Err(Error::InvalidInput(format!("unknown sampler {s}"))),
        }
    }
}

impl SamplerKind {
    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::None => "none",
            SamplerKind::Standard => "standard",
            SamplerKind::Importance => "importance",
        }
    }
}

fn default_per_state() -> usize {
    1
}
fn default_bins() -> usize {
    5
}
fn default_basis() -> usize {
    6
}
fn default_stepsize() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Draws per information state.
    #[serde(default = "default_per_state")]
    pub per_state: usize,
    /// Aggregated resource bins R.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Basis distributions J.
    #[serde(default = "default_basis")]
    pub basis: usize,
    /// Stepsize constant a.
    #[serde(default = "default_stepsize")]
    pub stepsize: f64,
    #[serde(default)]
    pub estimator: Estimator,
}

/// How sampled backward-pass values are combined into a cut.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// (1/N)·Σ f·P/Q: unbiased, but single cuts can overshoot by the
    /// likelihood ratio and the overshoot compounds through later stages.
    LikelihoodRatio,
    /// Σ f·P/Q / Σ P/Q: a convex combination of the sampled values.
    #[default]
    SelfNormalized,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        SamplerConfig {
            kind,
            per_state: default_per_state(),
            bins: default_bins(),
            basis: default_basis(),
            stepsize: default_stepsize(),
            estimator: Estimator::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_state == 0 || self.bins == 0 {
            return Err(Error::InvalidInput("sampler needs per_state >= 1 and bins >= 1".into()));
        }
        if self.basis < 2 || self.basis > MAX_BASIS {
            return Err(Error::InvalidInput(format!("basis count must lie in 2..={MAX_BASIS}")));
        }
        if !(self.stepsize > 0.0) || !self.stepsize.is_finite() {
            return Err(Error::InvalidInput("stepsize constant must be positive".into()));
        }
        Ok(())
    }
}

/// γ = a / (a + n).
pub fn stepsize(a: f64, n: usize) -> f64 {
    a / (a + n as f64)
}

/// P(w|i) / Q(w).
pub fn likelihood_ratio(p: f64, q: f64) -> f64 {
    assert!(q > 0.0 || p == 0.0, "sampled outcome outside the sampling support");
    if p == 0.0 {
        0.0
    } else {
        p / q
    }
}

/// v̂ = max{0, V_lower − Σ_i V̄(t, i, R)·weights_i}; stages without cuts
/// count as 0 downstream value.
pub fn observe_vhat(v_lower: f64, vfa: &ValueFunctionApprox, t: usize, r: &[f64], weights: &[f64]) -> f64 {
    (v_lower - vfa.expected(t, weights, r)).max(0.0)
}

/// Equal-width bins of the total battery level over [Σκl, Σκu].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationScheme {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl AggregationScheme {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Self {
        AggregationScheme { lower, upper, bins }
    }

    /// Lower edges b^0 < ... < b^{R−1}.
    pub fn edges(&self) -> Vec<f64> {
        let w = (self.upper - self.lower) / self.bins as f64;
        (0..self.bins).map(|r| self.lower + w * r as f64).collect()
    }

    pub fn bin(&self, total: f64) -> usize {
        if !(self.upper > self.lower) {
            return 0;
        }
        let x = (total - self.lower) / (self.upper - self.lower) * self.bins as f64;
        (x.floor().max(0.0) as usize).min(self.bins - 1)
    }
}

fn gauss(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp()
}

/// Basis distributions for one nominal distribution: the nominal itself, a
/// wide centred normal, a right half-normal at the smallest supported error,
/// a left half-normal at the largest, then narrow normals spread across the
/// support. All vanish off the nominal support and keep at least
/// [`BASIS_FLOOR`] on it.
pub fn build_basis(grid: &OutcomeGrid, nominal: &[f64], j: usize) -> Result<Vec<Vec<f64>>> {
    if j < 2 || j > MAX_BASIS {
        return Err(Error::InvalidInput(format!("basis count {j} outside 2..={MAX_BASIS}")));
    }
    let support: Vec<usize> = (0..nominal.len()).filter(|&k| nominal[k] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::InvalidInput("nominal distribution has no support".into()));
    }
    let x = &grid.points;
    let lo = x[support[0]];
    let hi = x[*support.last().unwrap()];
    let span = hi - lo;
    let mut out = vec![nominal.to_vec()];
    for b in 1..j {
        let mut phi = vec![0.0; nominal.len()];
        if span > 0.0 {
            let wide = span / 4.0;
            let narrow = span / 8.0;
            for &k in &support {
                phi[k] = match b {
                    1 => gauss(x[k], (lo + hi) / 2.0, wide),
                    2 => gauss(x[k], lo, narrow),
                    3 => gauss(x[k], hi, narrow),
                    _ => {
                        let mean = lo + span * (b - 3) as f64 / (j - 3) as f64;
                        gauss(x[k], mean, narrow)
                    }
                }
                .max(BASIS_FLOOR);
            }
        } else {
            for &k in &support {
                phi[k] = 1.0;
            }
        }
        let s: f64 = phi.iter().sum();
        for p in phi.iter_mut() {
            *p /= s;
        }
        out.push(phi);
    }
    Ok(out)
}

/// A backward-pass outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    /// Grid indices in draw order (repeats allowed).
    pub samples: Vec<usize>,
    /// Sampling distribution Q over the grid the draws came from; `None` for
    /// the exhaustive set, whose expectations are exact.
    pub q: Option<Vec<f64>>,
}

impl SampleDraw {
    /// Distinct grid indices in increasing order.
    pub fn unique(&self) -> Vec<usize> {
        let mut u = self.samples.clone();
        u.sort_unstable();
        u.dedup();
        u
    }

    /// Estimate of Σ_w f(w)·P(w|i) from this outcome set: the exact sum for
    /// the exhaustive set, else the likelihood-ratio average
    /// (1/N)·Σ_ℓ f(w_ℓ)·P(w_ℓ|i)/Q(w_ℓ). Returns `None` when no drawn outcome
    /// has positive probability under `p`.
    pub fn estimate<F: Fn(usize) -> f64>(&self, p: &[f64], f: F) -> Option<f64> {
        self.estimate_with(Estimator::LikelihoodRatio, p, f)
    }

    pub fn estimate_with<F: Fn(usize) -> f64>(&self, estimator: Estimator, p: &[f64], f: F) -> Option<f64> {
        if self.samples.iter().all(|&w| p[w] == 0.0) {
            return None;
        }
        let kept = self.samples.iter().copied().filter(|&w| p[w] > 0.0);
        match &self.q {
            None => Some(kept.map(|w| f(w) * p[w]).sum()),
            Some(q) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for w in kept {
                    let l = likelihood_ratio(p[w], q[w]);
                    num += f(w) * l;
                    den += l;
                }
                Some(match estimator {
                    Estimator::LikelihoodRatio => num / self.samples.len() as f64,
                    Estimator::SelfNormalized => num / den,
                })
            }
        }
    }
}

/// Outcomes with positive probability under some information state.
pub fn full_support(nominal: &[Vec<f64>]) -> Vec<usize> {
    let k = nominal.first().map_or(0, Vec::len);
    (0..k).filter(|&w| nominal.iter().any(|p| p[w] > 0.0)).collect()
}

/// Draws `per_state` outcomes from each P(·|i). Q = (1/|I|)·Σ_i P(·|i).
pub fn standard_sample<R: Rng + ?Sized>(nominal: &[Vec<f64>], per_state: usize, rng: &mut R) -> SampleDraw {
    let k = nominal[0].len();
    let mut q = vec![0.0; k];
    let mut samples = Vec::new();
    for p in nominal {
        for (qw, pw) in q.iter_mut().zip(p) {
            *qw += pw / nominal.len() as f64;
        }
        for _ in 0..per_state {
            samples.push(sample_index(p, rng));
        }
    }
    SampleDraw { samples, q: Some(q) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub config: SamplerConfig,
    pub aggregation: AggregationScheme,
    /// P(·|i) per information state.
    pub nominal: Vec<Vec<f64>>,
    /// `basis[i][j]` over the grid (shared by all stages and bins, since the
    /// outcome grid and the conditionals do not vary with t).
    pub basis: Vec<Vec<Vec<f64>>>,
    /// `theta[t][r][i][j]`.
    pub theta: Vec<Vec<Vec<Vec<f64>>>>,
    /// `visits[t][r]`: number of weight updates applied at (t, r).
    pub visits: Vec<Vec<usize>>,
}

impl SamplerState {
    pub fn new(
        config: SamplerConfig,
        grid: &OutcomeGrid,
        nominal: Vec<Vec<f64>>,
        horizon: usize,
        aggregation: AggregationScheme,
    ) -> Result<Self> {
        config.validate()?;
        let basis = nominal
            .iter()
            .map(|p| build_basis(grid, p, config.basis))
            .collect::<Result<Vec<_>>>()?;
        let ni = nominal.len();
        Ok(SamplerState {
            config,
            theta: vec![vec![vec![vec![0.0; config.basis]; ni]; aggregation.bins]; horizon + 1],
            visits: vec![vec![0; aggregation.bins]; horizon + 1],
            aggregation,
            nominal,
            basis,
        })
    }

    pub fn info_states(&self) -> usize {
        self.nominal.len()
    }

    /// Q^k_t(·|i) = Σ_j θ_j φ_j / Σ_j θ_j, with equal weights while θ = 0.
    pub fn conditional_sampling_dist(&self, t: usize, r: usize, i: usize) -> Vec<f64> {
        let theta = &self.theta[t][r][i];
        let total: f64 = theta.iter().sum();
        let basis = &self.basis[i];
        let k = basis[0].len();
        let mut q = vec![0.0; k];
        for (j, phi) in basis.iter().enumerate() {
            let wj = if total > 0.0 { theta[j] / total } else { 1.0 / basis.len() as f64 };
            if wj > 0.0 {
                for (qw, pw) in q.iter_mut().zip(phi) {
                    *qw += wj * pw;
                }
            }
        }
        q
    }

    /// Q^k_t = (1/|I|)·Σ_i Q^k_t(·|i).
    pub fn sampling_dist(&self, t: usize, r: usize) -> Vec<f64> {
        let ni = self.info_states() as f64;
        let mut q = vec![0.0; self.nominal[0].len()];
        for i in 0..self.info_states() {
            for (qw, c) in q.iter_mut().zip(self.conditional_sampling_dist(t, r, i)) {
                *qw += c / ni;
            }
        }
        q
    }

    pub fn importance_sample<R: Rng + ?Sized>(&self, t: usize, r: usize, rng: &mut R) -> SampleDraw {
        let mut samples = Vec::new();
        for i in 0..self.info_states() {
            let qi = self.conditional_sampling_dist(t, r, i);
            for _ in 0..self.config.per_state {
                samples.push(sample_index(&qi, rng));
            }
        }
        let q = self.sampling_dist(t, r);
        for &w in &samples {
            assert!(q[w] > 0.0, "importance draw outside the sampling support");
        }
        SampleDraw { samples, q: Some(q) }
    }

    /// Outcome set for backward stage t at aggregated bin r.
    pub fn draw<R: Rng + ?Sized>(&self, t: usize, r: usize, rng: &mut R) -> SampleDraw {
        match self.config.kind {
            SamplerKind::None => SampleDraw {
                samples: full_support(&self.nominal),
                q: None,
            },
            SamplerKind::Standard => standard_sample(&self.nominal, self.config.per_state, rng),
            SamplerKind::Importance => self.importance_sample(t, r, rng),
        }
    }

    /// θ ← max{0, θ − γ·Φᵀε} with ε_ℓ = (θᵀφ(w_ℓ) − |v̂_ℓ|·P(w_ℓ|i)) / Q^{k−1}(w_ℓ)
    /// and γ = a/(a + n_{t,r}); counts one visit of (t, r).
    pub fn update_weights(&mut self, t: usize, r: usize, i: usize, samples: &[usize], vhat: &[f64], q_prev: &[f64]) {
        let gamma = stepsize(self.config.stepsize, self.visits[t][r]);
        self.visits[t][r] += 1;
        let basis = &self.basis[i];
        let nominal = &self.nominal[i];
        let theta = &mut self.theta[t][r][i];
        let eps: Vec<f64> = samples
            .iter()
            .zip(vhat)
            .map(|(&w, v)| {
                let fit: f64 = theta.iter().zip(basis).map(|(th, phi)| th * phi[w]).sum();
                (fit - v.abs() * nominal[w]) / q_prev[w]
            })
            .collect();
        for (j, th) in theta.iter_mut().enumerate() {
            let grad: f64 = samples.iter().zip(&eps).map(|(&w, e)| basis[j][w] * e).sum();
            *th = (*th - gamma * grad).max(0.0);
        }
    }

    /// Rows `t,r,i,j,theta` for every stored weight.
    pub fn write_diagnostics<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r", "i", "j", "theta"]).map_err(csv_err)?;
        for (t, by_r) in self.theta.iter().enumerate() {
            for (r, by_i) in by_r.iter().enumerate() {
                for (i, by_j) in by_i.iter().enumerate() {
                    for (j, th) in by_j.iter().enumerate() {
                        w.write_record([t.to_string(), r.to_string(), i.to_string(), j.to_string(), th.to_string()])
                            .map_err(csv_err)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}
