//! Forecast error series and their crossing structure.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastErrorSeries {
    /// W_t = actual − forecast (MW).
    pub errors: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub step_minutes: u32,
}

#[derive(Debug, Deserialize, Serialize)]
struct TrainingRecord {
    t: i64,
    forecast_mw: f64,
    actual_mw: f64,
}

impl ForecastErrorSeries {
    pub fn new(errors: Vec<f64>, forecasts: Vec<f64>) -> Result<Self> {
        let s = ForecastErrorSeries {
            errors,
            forecasts,
            step_minutes: 5,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        let n = errors.len();
        Self::new(errors, vec![0.0; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.errors.len() != self.forecasts.len() {
            return Err(Error::InvalidInput("errors and forecasts differ in length".into()));
        }
        if self.errors.len() < 2 {
            return Err(Error::InvalidInput("series needs at least 2 observations".into()));
        }
        if let Some(t) = self.errors.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidInput(format!("error at step {t} is not finite")));
        }
        if self.step_minutes == 0 {
            return Err(Error::InvalidInput("step length must be positive".into()));
        }
        Ok(())
    }

    /// Parses training CSV with columns `t, forecast_mw, actual_mw`.
    pub fn read_csv<R: Read>(reader: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows: Vec<TrainingRecord> = Vec::new();
        for rec in rdr.deserialize() {
            let rec: TrainingRecord = rec.map_err(|e| Error::parse(origin, e))?;
            if !rec.forecast_mw.is_finite() || !rec.actual_mw.is_finite() {
                return Err(Error::parse(origin, format!("non-finite value at t={}", rec.t)));
            }
            rows.push(rec);
        }
        if rows.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::parse(origin, "t must be strictly increasing"));
        }
        let forecasts = rows.iter().map(|r| r.forecast_mw).collect();
        let errors = rows.iter().map(|r| r.actual_mw - r.forecast_mw).collect();
        Self::new(errors, forecasts).map_err(|e| Error::parse(origin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (t, (f, e)) in self.forecasts.iter().zip(&self.errors).enumerate() {
            w.serialize(TrainingRecord {
                t: t as i64,
                forecast_mw: *f,
                actual_mw: f + e,
            })
            .map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sign class of an error. Zero counts as below forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Below,
    Above,
}

impl Sign {
    pub fn of(w: f64) -> Sign {
        if w > 0.0 {
            Sign::Above
        } else {
            Sign::Below
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Sign {
        if k == 0 {
            Sign::Below
        } else {
            Sign::Above
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sign::Below => "down",
            Sign::Above => "up",
        }
    }
}

/// Maximal run of same-sign errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub sign: Sign,
    /// Position of the first observation (0-based).
    pub start: usize,
    pub len: usize,
    /// False only for the final run, which is still in progress.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Crossings {
    pub runs: Vec<Run>,
    /// Completed above-forecast durations.
    pub up_times: Vec<usize>,
    /// Completed at-or-below-forecast durations.
    pub down_times: Vec<usize>,
    /// Time indices (first observation is t = 1) where the error turns ≤ 0.
    pub down_cross: Vec<usize>,
    /// Time indices (first observation is t = 1) where the error turns > 0.
    pub up_cross: Vec<usize>,
}

/// Splits the series into sign runs. The leading run counts as completed
/// once the sign first flips; the trailing run never does.
pub fn extract_crossings(errors: &[f64]) -> Result<Crossings> {
    if errors.len() < 2 {
        return Err(Error::InvalidInput("series needs at least 2 observations".into()));
    }
    let mut out = Crossings::default();
    let mut start = 0;
    for t in 1..=errors.len() {
        let flip = t == errors.len() || Sign::of(errors[t]) != Sign::of(errors[start]);
        if !flip {
            continue;
        }
        let sign = Sign::of(errors[start]);
        let complete = t < errors.len();
        out.runs.push(Run {
            sign,
            start,
            len: t - start,
            complete,
        });
        if complete {
            match sign {
                Sign::Above => out.up_times.push(t - start),
                Sign::Below => out.down_times.push(t - start),
            }
            match Sign::of(errors[t]) {
                Sign::Below => out.down_cross.push(t + 1),
                Sign::Above => out.up_cross.push(t + 1),
            }
        }
        start = t;
    }
    Ok(out)
}
