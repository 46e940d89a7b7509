//! Regime-switching AR(1) forecast errors on a daily forecast profile, used
//! in place of measured wind data.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::series::ForecastErrorSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// AR(1) coefficient in [0, 1).
    pub persistence: f64,
    /// Stationary standard deviation of the error, MW.
    pub sigma_mw: f64,
}

fn default_step() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub steps: usize,
    #[serde(default = "one")]
    pub episodes: usize,
    pub capacity_mw: f64,
    /// Forecast = capacity · (mean + amplitude · sin(2πt/period + phase)).
    pub forecast_mean: f64,
    pub forecast_amplitude: f64,
    pub period_steps: f64,
    pub regimes: Vec<Regime>,
    /// Per-step probability of jumping to another regime.
    pub switch_prob: f64,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    /// Single-regime AR(1) with the given persistence.
    pub fn ar1(steps: usize, persistence: f64, sigma_mw: f64, capacity_mw: f64) -> Self {
        SyntheticSpec {
            steps,
            episodes: 1,
            capacity_mw,
            forecast_mean: 0.5,
            forecast_amplitude: 0.0,
            period_steps: 288.0,
            regimes: vec![Regime { persistence, sigma_mw }],
            switch_prob: 0.0,
            step_minutes: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.steps < 2 || self.episodes == 0 {
            return bad("synthetic series need at least 2 steps and 1 episode");
        }
        if self.regimes.is_empty() {
            return bad("at least one regime is required");
        }
        if self
            .regimes
            .iter()
            .any(|r| !(0.0..1.0).contains(&r.persistence) || !(r.sigma_mw >= 0.0) || !r.sigma_mw.is_finite())
        {
            return bad("regimes need persistence in [0, 1) and sigma >= 0");
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return bad("switch_prob must lie in [0, 1]");
        }
        if !(self.capacity_mw > 0.0) || !self.capacity_mw.is_finite() || !(self.period_steps > 0.0) {
            return bad("capacity and period must be positive");
        }
        if !self.forecast_mean.is_finite() || !self.forecast_amplitude.is_finite() {
            return bad("forecast shape must be finite");
        }
        Ok(())
    }

    /// Forecast profile for one episode.
    pub fn forecast(&self, episode: usize, len: usize) -> Vec<f64> {
        let phase = 2.0 * PI * episode as f64 / self.episodes.max(1) as f64;
        (0..len)
            .map(|t| {
                let s = (2.0 * PI * t as f64 / self.period_steps + phase).sin();
                (self.capacity_mw * (self.forecast_mean + self.forecast_amplitude * s)).clamp(0.0, self.capacity_mw)
            })
            .collect()
    }
}

/// Episodes of (forecast, error) with actual output clamped to
/// [0, capacity]. Deterministic in `seed`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<ForecastErrorSeries>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.episodes);
    for ep in 0..spec.episodes {
        let mut rng = substream(seed, &format!("synthetic/{ep}"));
        let forecasts = spec.forecast(ep, spec.steps);
        let mut regime = rng.random_range(0..spec.regimes.len());
        let r0 = spec.regimes[regime];
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut latent = r0.sigma_mw * z;
        let mut errors = Vec::with_capacity(spec.steps);
        for &f in &forecasts {
            let actual = (f + latent).clamp(0.0, spec.capacity_mw);
            errors.push(actual - f);
            if spec.regimes.len() > 1 && rng.random_bool(spec.switch_prob) {
                let mut next = rng.random_range(0..spec.regimes.len() - 1);
                if next >= regime {
                    next += 1;
                }
                regime = next;
            }
            let r = spec.regimes[regime];
            let z: f64 = StandardNormal.sample(&mut rng);
            latent = r.persistence * latent + r.sigma_mw * (1.0 - r.persistence * r.persistence).sqrt() * z;
        }
        let mut s = ForecastErrorSeries::new(errors, forecasts)?;
        s.step_minutes = spec.step_minutes;
        out.push(s);
    }
    Ok(out)
}
