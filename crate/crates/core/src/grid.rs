//! Discrete outcome grid for forecast errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Sign;

/// Ordered error values shared by every stage. Each stage's nominal masses
/// live in the error model; physical truncation near zero or full output is
/// applied when converting an error to wind power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeGrid {
    pub points: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    // Inverted empirical CDF: smallest x with F(x) ≥ q.
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

impl OutcomeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("outcome grid is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("outcome grid has non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("outcome grid points must be strictly increasing".into()));
        }
        Ok(OutcomeGrid { points })
    }

    /// Places `k` points at mid-quantiles of the empirical error
    /// distribution, splitting them between the two sign classes in
    /// proportion to each class's mass (at least one point per observed class).
    pub fn from_quantiles(errors: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("grid needs at least one point".into()));
        }
        let mut below: Vec<f64> = errors.iter().copied().filter(|&e| e <= 0.0).collect();
        let mut above: Vec<f64> = errors.iter().copied().filter(|&e| e > 0.0).collect();
        if below.len() + above.len() == 0 || errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput("no finite errors to place a grid on".into()));
        }
        below.sort_by(f64::total_cmp);
        above.sort_by(f64::total_cmp);
        let total = (below.len() + above.len()) as f64;
        let (k_below, k_above) = match (below.is_empty(), above.is_empty()) {
            (true, _) => (0, k),
            (_, true) => (k, 0),
            _ if k == 1 => {
                if below.len() >= above.len() {
                    (1, 0)
                } else {
                    (0, 1)
                }
            }
            _ => {
                let kb = ((k as f64) * below.len() as f64 / total).round() as usize;
                let kb = kb.clamp(1, k - 1);
                (kb, k - kb)
            }
        };
        let mut points = Vec::with_capacity(k);
        for (class, count) in [(&below, k_below), (&above, k_above)] {
            for j in 0..count {
                points.push(quantile_sorted(class, (j as f64 + 0.5) / count as f64));
            }
        }
        points.dedup();
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sign(&self, idx: usize) -> Sign {
        Sign::of(self.points[idx])
    }

    /// Indices of points in the given sign class.
    pub fn class(&self, sign: Sign) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.sign(k) == sign).collect()
    }

    /// Exact lookup of a grid value (relative tolerance 1e-9).
    pub fn index_of(&self, w: f64) -> Option<usize> {
        self.points
            .iter()
            .position(|&p| (p - w).abs() <= 1e-9 * (1.0 + p.abs()))
    }

    /// Nearest point with the same sign as `w`; nearest overall when that
    /// class has no points.
    pub fn snap(&self, w: f64) -> usize {
        let sign = Sign::of(w);
        let nearest = |filter: &dyn Fn(usize) -> bool| {
            (0..self.len())
                .filter(|&k| filter(k))
                .min_by(|&a, &b| (self.points[a] - w).abs().total_cmp(&(self.points[b] - w).abs()))
        };
        nearest(&|k| self.sign(k) == sign).unwrap_or_else(|| nearest(&|_| true).expect("grid is non-empty"))
    }
}
