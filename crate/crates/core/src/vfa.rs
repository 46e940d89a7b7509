//! Benders cuts and the per-(stage, information state) value function
//! approximation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VFA_FORMAT: &str = "hmsddp-vfa";
pub const VFA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    /// Value at the anchor.
    pub alpha: f64,
    /// Subgradient over (battery levels..., cumulative shortage).
    pub beta: Vec<f64>,
    pub anchor: Vec<f64>,
    pub iteration: usize,
}

impl Cut {
    pub fn eval(&self, r: &[f64]) -> f64 {
        self.alpha
            + self
                .beta
                .iter()
                .zip(r.iter().zip(&self.anchor))
                .map(|(b, (x, a))| b * (x - a))
                .sum::<f64>()
    }

    /// Constant term of the cut written as `alpha' + <beta, R>`.
    pub fn intercept(&self) -> f64 {
        self.alpha - self.beta.iter().zip(&self.anchor).map(|(b, a)| b * a).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctionApprox {
    pub format: String,
    pub version: u32,
    /// Length of a resource vector.
    pub dims: usize,
    /// `cuts[t][i]` holds the cuts of stage t, information state i. Stage T
    /// carries none: its terminal value is folded into the stage problem.
    pub cuts: Vec<Vec<Vec<Cut>>>,
}

impl ValueFunctionApprox {
    pub fn new(horizon: usize, info_states: usize, dims: usize) -> Self {
        ValueFunctionApprox {
            format: VFA_FORMAT.into(),
            version: VFA_VERSION,
            dims,
            cuts: vec![vec![Vec::new(); info_states]; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.cuts.len().saturating_sub(1)
    }

    pub fn info_states(&self) -> usize {
        self.cuts.first().map_or(0, |c| c.len())
    }

    pub fn add_cut(&mut self, t: usize, i: usize, cut: Cut) {
        self.cuts[t][i].push(cut);
    }

    pub fn total_cuts(&self) -> usize {
        self.cuts.iter().flatten().map(Vec::len).sum()
    }

    /// Max over the cuts of (t, i); −∞ when there are none.
    pub fn evaluate(&self, t: usize, i: usize, r: &[f64]) -> f64 {
        self.cuts[t][i].iter().map(|c| c.eval(r)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Σ_i weight_i · V̄(t, i, R), treating states without cuts as 0.
    pub fn expected(&self, t: usize, weights: &[f64], r: &[f64]) -> f64 {
        weights
            .iter()
            .enumerate()
            .filter(|(i, &w)| w > 0.0 && !self.cuts[t][*i].is_empty())
            .map(|(i, &w)| w * self.evaluate(t, i, r))
            .sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: ValueFunctionApprox = serde_json::from_str(text).map_err(|e| Error::parse("vfa", e))?;
        v.validate()?;
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cuts serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != VFA_FORMAT || self.version != VFA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported value function format {} v{}",
                self.format, self.version
            )));
        }
        let n = self.info_states();
        for (t, stage) in self.cuts.iter().enumerate() {
            if stage.len() != n {
                return Err(Error::InvalidInput(format!("stage {t} has {} information states", stage.len())));
            }
            for cut in stage.iter().flatten() {
                if cut.beta.len() != self.dims || cut.anchor.len() != self.dims {
                    return Err(Error::InvalidInput(format!("cut at stage {t} has wrong dimension")));
                }
                if !cut.alpha.is_finite() || cut.beta.iter().chain(&cut.anchor).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput(format!("cut at stage {t} is not finite")));
                }
            }
        }
        Ok(())
    }
}
