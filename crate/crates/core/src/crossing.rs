//! Crossing-state hidden semi-Markov forecast error model and the IID baseline.
//!
//! A crossing state is a pair (sign of the error, bin of the duration the
//! current run above/below forecast will eventually have). The duration bin
//! is hidden until the run ends, so the controller carries a belief over it
//! (the knowledge state). The compact information state adds the bin of the
//! current error and is what value-function cuts are keyed on.
//!
//! All distributions over errors are vectors indexed by outcome grid point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OutcomeGrid;
use crate::rng::sample_index;
use crate::series::{extract_crossings, ForecastErrorSeries, Sign};

/// Mass added to every same-sign grid point of a fitted error histogram.
pub const SMOOTHING: f64 = 1e-6;

/// Sum-to-one tolerance for stored and returned distributions.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Upper limit on m and n.
pub const MAX_BINS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrossingState {
    pub sign: Sign,
    pub duration_bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InformationState {
    pub sign: Sign,
    pub duration_bin: usize,
    pub error_bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    /// Belief per crossing state (a single entry for the IID model).
    pub beliefs: Vec<f64>,
    /// Steps elapsed in the current run, counting the current one.
    pub elapsed: usize,
    pub last_error: f64,
    /// Grid index of `last_error`.
    pub last_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub error: f64,
    pub index: usize,
    /// Wind output `clamp(forecast + error, 0, capacity)`.
    pub wind: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingStateModel {
    pub m: usize,
    pub n: usize,
    pub grid: OutcomeGrid,
    /// Per sign (below, above): the m−1 duration split points.
    pub duration_edges: Vec<Vec<f64>>,
    /// Per crossing state: F(τ) for τ = 1..=τ_max, ending at 1.
    pub crossing_time_cdfs: Vec<Vec<f64>>,
    pub transition_no_self: Vec<Vec<f64>>,
    pub transition_compact: Vec<Vec<f64>>,
    /// Per crossing state: the n−1 error split points.
    pub error_bin_edges: Vec<Vec<f64>>,
    /// Per crossing state and error bin: distribution of the next error while
    /// the run continues.
    pub error_dists: Vec<Vec<Vec<f64>>>,
    /// Per crossing state: distribution of the first error of a new run.
    pub entry_dists: Vec<Vec<f64>>,
    pub max_crossing_time: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidErrorModel {
    pub grid: OutcomeGrid,
    pub dist: Vec<f64>,
}

/// Either error model behind one interface; the IID model has a single
/// information state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ErrorModel {
    Crossing(CrossingStateModel),
    Iid(IidErrorModel),
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Number of split points strictly below `x`: ties go to the lower bin.
fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.iter().filter(|&&e| x > e).count()
}

fn count_distinct(mut v: Vec<f64>) -> usize {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_distribution(name: &str, d: &[f64], len: usize) -> Result<()> {
    if d.len() != len {
        return Err(Error::InvalidInput(format!("{name} has length {} (expected {len})", d.len())));
    }
    if d.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has a negative or non-finite mass")));
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > MASS_TOLERANCE * len.max(1) as f64 {
        return Err(Error::InvalidInput(format!("{name} sums to {s}")));
    }
    Ok(())
}

fn smooth_on_class(hist: &mut [f64], class: &[usize]) {
    normalize(hist);
    for &k in class {
        hist[k] += SMOOTHING;
    }
    normalize(hist);
}

impl CrossingStateModel {
    pub fn num_crossing_states(&self) -> usize {
        2 * self.m
    }

    pub fn num_info_states(&self) -> usize {
        2 * self.m * self.n
    }

    pub fn crossing_index(&self, s: CrossingState) -> usize {
        s.sign.index() * self.m + s.duration_bin
    }

    pub fn crossing_state(&self, c: usize) -> CrossingState {
        CrossingState {
            sign: Sign::from_index(c / self.m),
            duration_bin: c % self.m,
        }
    }

    pub fn info_index(&self, s: InformationState) -> usize {
        (s.sign.index() * self.m + s.duration_bin) * self.n + s.error_bin
    }

    pub fn info_state(&self, i: usize) -> InformationState {
        let c = self.crossing_state(i / self.n);
        InformationState {
            sign: c.sign,
            duration_bin: c.duration_bin,
            error_bin: i % self.n,
        }
    }

    pub fn state_label(&self, c: usize) -> String {
        let s = self.crossing_state(c);
        format!("{}:{}", s.sign.label(), s.duration_bin)
    }

    /// F_c(τ), clamped to 0 below τ = 1 and to 1 from τ_max on.
    pub fn cdf(&self, c: usize, tau: usize) -> f64 {
        if tau == 0 {
            return 0.0;
        }
        let f = &self.crossing_time_cdfs[c];
        if tau >= f.len() {
            1.0
        } else {
            f[tau - 1]
        }
    }

    /// Probability that a run in state `c` lasting at least τ steps ends at τ.
    pub fn exit_hazard(&self, c: usize, tau: usize) -> f64 {
        let survive = 1.0 - self.cdf(c, tau.saturating_sub(1));
        if survive <= 0.0 {
            1.0
        } else {
            ((self.cdf(c, tau) - self.cdf(c, tau - 1)) / survive).clamp(0.0, 1.0)
        }
    }

    pub fn duration_bin(&self, sign: Sign, tau: usize) -> usize {
        bin_of(&self.duration_edges[sign.index()], tau as f64)
    }

    pub fn error_bin(&self, c: usize, w: f64) -> usize {
        bin_of(&self.error_bin_edges[c], w)
    }

    pub fn duration_transition(&self, c: usize, tau: usize) -> Vec<f64> {
        let f = self.cdf(c, tau);
        let mut out: Vec<f64> = self.transition_no_self[c].iter().map(|p| f * p).collect();
        out[c] = 1.0 - f;
        out
    }

    pub fn full_state_error_dist(&self, c: usize, tau: usize, error_bin: usize) -> Vec<f64> {
        let f = self.cdf(c, tau);
        let stay = &self.error_dists[c][error_bin];
        let mut out: Vec<f64> = stay.iter().map(|p| (1.0 - f) * p).collect();
        for (c2, &p) in self.transition_no_self[c].iter().enumerate() {
            if c2 != c && p > 0.0 {
                for (o, e) in out.iter_mut().zip(&self.entry_dists[c2]) {
                    *o += f * p * e;
                }
            }
        }
        out
    }

    pub fn compact_error_dist(&self, i: usize) -> Vec<f64> {
        let c = i / self.n;
        let b = i % self.n;
        let row = &self.transition_compact[c];
        let mut out: Vec<f64> = self.error_dists[c][b].iter().map(|p| row[c] * p).collect();
        for (c2, &p) in row.iter().enumerate() {
            if c2 != c && p > 0.0 {
                for (o, e) in out.iter_mut().zip(&self.entry_dists[c2]) {
                    *o += p * e;
                }
            }
        }
        out
    }

    /// P(crossing state | W = w) without elapsed-time information.
    pub fn posterior_crossing(&self, w_index: usize) -> Result<Vec<f64>> {
        let k = self.num_crossing_states();
        let mut out = vec![0.0; k];
        for (c, o) in out.iter_mut().enumerate() {
            let row_self = self.transition_compact[c][c];
            let cont: f64 = self.error_dists[c].iter().map(|d| d[w_index]).sum();
            let mut v = row_self * cont;
            for c2 in 0..k {
                if c2 != c {
                    v += self.transition_compact[c2][c] * self.entry_dists[c][w_index];
                }
            }
            *o = v;
        }
        let norm: f64 = out.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::DegenerateObservation {
                value: self.grid.points[w_index],
                context: "posterior information state probabilities".into(),
            });
        }
        for o in out.iter_mut() {
            *o /= norm;
        }
        Ok(out)
    }

    pub fn posterior_info_probs(&self, w_index: usize) -> Result<Vec<f64>> {
        let post = self.posterior_crossing(w_index)?;
        let w = self.grid.points[w_index];
        let mut out = vec![0.0; self.num_info_states()];
        for (c, p) in post.into_iter().enumerate() {
            out[c * self.n + self.error_bin(c, w)] = p;
        }
        Ok(out)
    }

    pub fn init_knowledge(&self, w_index: usize) -> KnowledgeState {
        let w = self.grid.points[w_index];
        let sign = Sign::of(w);
        let mut beliefs = vec![0.0; self.num_crossing_states()];
        for d in 0..self.m {
            beliefs[self.crossing_index(CrossingState { sign, duration_bin: d })] = 1.0 / self.m as f64;
        }
        KnowledgeState {
            beliefs,
            elapsed: 1,
            last_error: w,
            last_index: w_index,
        }
    }

    pub fn predict_next_error(&self, k: &KnowledgeState) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (c, &b) in k.beliefs.iter().enumerate() {
            if b > 0.0 {
                let d = self.full_state_error_dist(c, k.elapsed, self.error_bin(c, k.last_error));
                for (o, p) in out.iter_mut().zip(d) {
                    *o += b * p;
                }
            }
        }
        out
    }

    /// Bayesian update of the knowledge state after observing the next error.
    ///
    /// While the sign persists, each hypothesis is weighted by the chance its
    /// run lasts at least the new elapsed time, `P(L ≥ τ+1) = 1 − F(τ)`, and by
    /// the continuation likelihood. On a sign flip the completed run pins down
    /// the previous crossing state and the new belief follows its exit row.
    pub fn knowledge_update(&self, k: &KnowledgeState, w_index: usize) -> Result<KnowledgeState> {
        let w = self.grid.points[w_index];
        let mut beliefs = vec![0.0; self.num_crossing_states()];
        let prev_sign = Sign::of(k.last_error);
        let elapsed;
        if Sign::of(w) == prev_sign {
            elapsed = k.elapsed + 1;
            for (c, &b) in k.beliefs.iter().enumerate() {
                if b > 0.0 {
                    let survive = 1.0 - self.cdf(c, k.elapsed);
                    let like = self.error_dists[c][self.error_bin(c, k.last_error)][w_index];
                    beliefs[c] = b * survive * like;
                }
            }
        } else {
            elapsed = 1;
            let done = self.crossing_index(CrossingState {
                sign: prev_sign,
                duration_bin: self.duration_bin(prev_sign, k.elapsed),
            });
            for (c, b) in beliefs.iter_mut().enumerate() {
                *b = self.transition_no_self[done][c] * self.entry_dists[c][w_index];
            }
        }
        let norm: f64 = beliefs.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::DegenerateObservation {
                value: w,
                context: format!("knowledge update after {} steps at error {}", k.elapsed, k.last_error),
            });
        }
        for b in beliefs.iter_mut() {
            *b /= norm;
        }
        Ok(KnowledgeState {
            beliefs,
            elapsed,
            last_error: w,
            last_index: w_index,
        })
    }

    /// P(post-decision information state | K): each crossing belief sits on
    /// the error bin the last error occupies for that state.
    pub fn info_weights(&self, k: &KnowledgeState) -> Vec<f64> {
        let mut out = vec![0.0; self.num_info_states()];
        for (c, &b) in k.beliefs.iter().enumerate() {
            if b > 0.0 {
                out[c * self.n + self.error_bin(c, k.last_error)] += b;
            }
        }
        out
    }

    fn duration_pmf(&self, c: usize) -> Vec<f64> {
        let f = &self.crossing_time_cdfs[c];
        (0..f.len()).map(|t| f[t] - if t == 0 { 0.0 } else { f[t - 1] }).collect()
    }

    /// Simulates errors and the hidden crossing states that produced them.
    ///
    /// Runs are drawn semi-Markov style: entering a state fixes the run's
    /// length from that state's duration distribution, the run continues with
    /// the continuation distributions and then exits along the no-self
    /// transition row into a new state's entry distribution.
    pub fn sample_hidden_path<R: Rng + ?Sized>(
        &self,
        w0_index: usize,
        horizon: usize,
        rng: &mut R,
    ) -> (Vec<usize>, Vec<usize>) {
        let sign = self.grid.sign(w0_index);
        let mut c = self.crossing_index(CrossingState {
            sign,
            duration_bin: rng.random_range(0..self.m),
        });
        let mut length = 1 + sample_index(&self.duration_pmf(c), rng);
        let mut tau = 1;
        let mut w = w0_index;
        let mut errors = vec![w];
        let mut hidden = vec![c];
        for _ in 0..horizon {
            if tau < length {
                let b = self.error_bin(c, self.grid.points[w]);
                w = sample_index(&self.error_dists[c][b], rng);
                tau += 1;
            } else {
                c = sample_index(&self.transition_no_self[c], rng);
                length = 1 + sample_index(&self.duration_pmf(c), rng);
                w = sample_index(&self.entry_dists[c], rng);
                tau = 1;
            }
            errors.push(w);
            hidden.push(c);
        }
        (errors, hidden)
    }

    pub fn fit(series: &[ForecastErrorSeries], m: usize, n: usize, grid: OutcomeGrid) -> Result<Self> {
        if m == 0 || n == 0 || m > MAX_BINS || n > MAX_BINS {
            return Err(Error::InvalidInput(format!("m and n must lie in 1..={MAX_BINS}")));
        }
        if series.is_empty() {
            return Err(Error::InvalidInput("no training series".into()));
        }
        for s in series {
            s.validate()?;
        }
        let k = grid.len();
        let classes = [grid.class(Sign::Below), grid.class(Sign::Above)];
        for (s, class) in classes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "outcome grid has no {} points",
                    Sign::from_index(s).label()
                )));
            }
        }

        struct Episode {
            snapped: Vec<usize>,
            raw: Vec<f64>,
            runs: Vec<crate::series::Run>,
        }
        let mut episodes = Vec::new();
        let mut durations: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut raw_by_sign: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for s in series {
            let cr = extract_crossings(&s.errors)?;
            for r in cr.runs.iter().filter(|r| r.complete) {
                durations[r.sign.index()].push(r.len as f64);
            }
            for &e in &s.errors {
                raw_by_sign[Sign::of(e).index()].push(e);
            }
            episodes.push(Episode {
                snapped: s.errors.iter().map(|&e| grid.snap(e)).collect(),
                raw: s.errors.clone(),
                runs: cr.runs,
            });
        }
        for s in 0..2 {
            let label = Sign::from_index(s).label();
            if !durations[s].is_empty() && count_distinct(durations[s].clone()) < m {
                return Err(Error::InvalidInput(format!(
                    "m = {m} exceeds the number of distinct completed {label}-crossing durations"
                )));
            }
            if !raw_by_sign[s].is_empty() && count_distinct(raw_by_sign[s].clone()) < n {
                return Err(Error::InvalidInput(format!(
                    "n = {n} exceeds the number of distinct {label} errors"
                )));
            }
        }
        let duration_edges: Vec<Vec<f64>> = durations
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.sort_by(f64::total_cmp);
                if d.is_empty() {
                    return vec![0.0; m - 1];
                }
                (1..m).map(|b| quantile_sorted(&d, b as f64 / m as f64)).collect()
            })
            .collect();
        let n_cross = 2 * m;
        let state_of_run = |r: &crate::series::Run| {
            r.sign.index() * m + bin_of(&duration_edges[r.sign.index()], r.len as f64)
        };

        // Per-step labels and per-state duration samples.
        let mut state_durations: Vec<Vec<usize>> = vec![Vec::new(); n_cross];
        let mut labels: Vec<Vec<Option<usize>>> = Vec::new();
        for ep in &episodes {
            let mut lab = vec![None; ep.raw.len()];
            for r in ep.runs.iter().filter(|r| r.complete) {
                let c = state_of_run(r);
                state_durations[c].push(r.len);
                for l in lab.iter_mut().skip(r.start).take(r.len) {
                    *l = Some(c);
                }
            }
            labels.push(lab);
        }
        let probe = CrossingStateModel {
            m,
            n,
            grid: grid.clone(),
            duration_edges: duration_edges.clone(),
            crossing_time_cdfs: Vec::new(),
            transition_no_self: Vec::new(),
            transition_compact: Vec::new(),
            error_bin_edges: Vec::new(),
            error_dists: Vec::new(),
            entry_dists: Vec::new(),
            max_crossing_time: Vec::new(),
        };
        let missing: Vec<String> = (0..n_cross)
            .filter(|&c| state_durations[c].is_empty())
            .map(|c| probe.state_label(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::FitFailure { missing });
        }

        let max_crossing_time: Vec<usize> = state_durations.iter().map(|d| *d.iter().max().unwrap()).collect();
        let crossing_time_cdfs: Vec<Vec<f64>> = state_durations
            .iter()
            .zip(&max_crossing_time)
            .map(|(d, &tmax)| {
                let mut counts = vec![0usize; tmax];
                for &l in d {
                    counts[l - 1] += 1;
                }
                let total = d.len() as f64;
                let mut acc = 0usize;
                let mut cdf: Vec<f64> = counts
                    .iter()
                    .map(|&c| {
                        acc += c;
                        acc as f64 / total
                    })
                    .collect();
                *cdf.last_mut().unwrap() = 1.0;
                cdf
            })
            .collect();

        // Error bin edges from each state's raw conditional errors.
        let mut state_errors: Vec<Vec<f64>> = vec![Vec::new(); n_cross];
        for (ep, lab) in episodes.iter().zip(&labels) {
            for (t, l) in lab.iter().enumerate() {
                if let Some(c) = *l {
                    state_errors[c].push(ep.raw[t]);
                }
            }
        }
        let error_bin_edges: Vec<Vec<f64>> = state_errors
            .iter_mut()
            .map(|e| {
                e.sort_by(f64::total_cmp);
                (1..n).map(|b| quantile_sorted(e, b as f64 / n as f64)).collect()
            })
            .collect();

        let mut flips = vec![vec![0.0; n_cross]; n_cross];
        let mut compact = vec![vec![0.0; n_cross]; n_cross];
        let mut cont = vec![vec![vec![0.0; k]; n]; n_cross];
        let mut entry = vec![vec![0.0; k]; n_cross];
        for (ep, lab) in episodes.iter().zip(&labels) {
            let complete: Vec<&crate::series::Run> = ep.runs.iter().filter(|r| r.complete).collect();
            for pair in complete.windows(2) {
                flips[state_of_run(pair[0])][state_of_run(pair[1])] += 1.0;
            }
            for (idx, r) in complete.iter().enumerate() {
                if idx > 0 {
                    entry[state_of_run(r)][ep.snapped[r.start]] += 1.0;
                }
            }
            for t in 0..ep.raw.len().saturating_sub(1) {
                if let (Some(a), Some(b)) = (lab[t], lab[t + 1]) {
                    compact[a][b] += 1.0;
                    if a == b && Sign::of(ep.raw[t]) == Sign::of(ep.raw[t + 1]) {
                        let wb = bin_of(&error_bin_edges[a], grid.points[ep.snapped[t]]);
                        cont[a][wb][ep.snapped[t + 1]] += 1.0;
                    }
                }
            }
        }
        for (c, row) in flips.iter_mut().enumerate() {
            if row.iter().sum::<f64>() == 0.0 {
                let other = 1 - c / m;
                for c2 in other * m..(other + 1) * m {
                    row[c2] = 1.0;
                }
                log::warn!("crossing state {} has no observed exit; using a uniform exit row", probe.state_label(c));
            }
            row[c] = 0.0;
            normalize(row);
        }
        for (c, row) in compact.iter_mut().enumerate() {
            if row.iter().sum::<f64>() == 0.0 {
                row[c] = 1.0;
            }
            normalize(row);
        }
        for c in 0..n_cross {
            let class = &classes[c / m];
            let pooled: Vec<f64> = (0..k).map(|g| cont[c].iter().map(|h| h[g]).sum()).collect();
            let uniform: Vec<f64> = (0..k).map(|g| if class.contains(&g) { 1.0 } else { 0.0 }).collect();
            let fallback = |own: &[f64], chain: &[&[f64]]| -> Vec<f64> {
                if own.iter().sum::<f64>() > 0.0 {
                    return own.to_vec();
                }
                for alt in chain {
                    if alt.iter().sum::<f64>() > 0.0 {
                        return alt.to_vec();
                    }
                }
                uniform.clone()
            };
            let entry_c = fallback(&entry[c], &[&pooled]);
            for b in 0..n {
                let mut h = fallback(&cont[c][b], &[&pooled, &entry[c]]);
                smooth_on_class(&mut h, class);
                cont[c][b] = h;
            }
            let mut e = entry_c;
            smooth_on_class(&mut e, class);
            entry[c] = e;
        }
        let model = CrossingStateModel {
            m,
            n,
            grid,
            duration_edges,
            crossing_time_cdfs,
            transition_no_self: flips,
            transition_compact: compact,
            error_bin_edges,
            error_dists: cont,
            entry_dists: entry,
            max_crossing_time,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, k) = (self.m, self.n, self.grid.len());
        if m == 0 || n == 0 || m > MAX_BINS || n > MAX_BINS {
            return Err(Error::InvalidInput(format!("m and n must lie in 1..={MAX_BINS}")));
        }
        OutcomeGrid::new(self.grid.points.clone())?;
        let nc = 2 * m;
        let sizes_ok = self.duration_edges.len() == 2
            && self.duration_edges.iter().all(|e| e.len() == m - 1)
            && self.crossing_time_cdfs.len() == nc
            && self.transition_no_self.len() == nc
            && self.transition_compact.len() == nc
            && self.error_bin_edges.len() == nc
            && self.error_bin_edges.iter().all(|e| e.len() == n - 1)
            && self.error_dists.len() == nc
            && self.error_dists.iter().all(|d| d.len() == n)
            && self.entry_dists.len() == nc
            && self.max_crossing_time.len() == nc;
        if !sizes_ok {
            return Err(Error::InvalidInput("model arrays do not match m and n".into()));
        }
        for c in 0..nc {
            let f = &self.crossing_time_cdfs[c];
            if f.is_empty() || f.len() != self.max_crossing_time[c] {
                return Err(Error::InvalidInput(format!("CDF of state {c} does not end at tau_max")));
            }
            if f.windows(2).any(|w| !(w[1] >= w[0])) || !(f[0] >= 0.0) || *f.last().unwrap() != 1.0 {
                return Err(Error::InvalidInput(format!("CDF of state {c} is not a distribution function")));
            }
            check_distribution(&format!("transition_no_self[{c}]"), &self.transition_no_self[c], nc)?;
            if self.transition_no_self[c][c] != 0.0 {
                return Err(Error::InvalidInput(format!("transition_no_self[{c}] has a self transition")));
            }
            check_distribution(&format!("transition_compact[{c}]"), &self.transition_compact[c], nc)?;
            for b in 0..n {
                check_distribution(&format!("error_dists[{c}][{b}]"), &self.error_dists[c][b], k)?;
            }
            check_distribution(&format!("entry_dists[{c}]"), &self.entry_dists[c], k)?;
        }
        for e in self.duration_edges.iter().chain(&self.error_bin_edges) {
            if e.iter().any(|x| !x.is_finite()) || e.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidInput("bin edges must be finite and nondecreasing".into()));
            }
        }
        Ok(())
    }
}

impl IidErrorModel {
    /// Marginal histogram of the snapped errors, smoothed over the grid.
    pub fn fit(series: &[ForecastErrorSeries], grid: OutcomeGrid) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidInput("no training series".into()));
        }
        let mut dist = vec![0.0; grid.len()];
        for s in series {
            s.validate()?;
            for &e in &s.errors {
                dist[grid.snap(e)] += 1.0;
            }
        }
        let all: Vec<usize> = (0..grid.len()).collect();
        smooth_on_class(&mut dist, &all);
        Ok(IidErrorModel { grid, dist })
    }

    pub fn validate(&self) -> Result<()> {
        OutcomeGrid::new(self.grid.points.clone())?;
        check_distribution("dist", &self.dist, self.grid.len())
    }
}

impl ErrorModel {
    pub fn grid(&self) -> &OutcomeGrid {
        match self {
            ErrorModel::Crossing(c) => &c.grid,
            ErrorModel::Iid(i) => &i.grid,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ErrorModel::Crossing(_) => "crossing",
            ErrorModel::Iid(_) => "iid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorModel::Crossing(c) => c.validate(),
            ErrorModel::Iid(i) => i.validate(),
        }
    }

    pub fn num_info_states(&self) -> usize {
        match self {
            ErrorModel::Crossing(c) => c.num_info_states(),
            ErrorModel::Iid(_) => 1,
        }
    }

    pub fn compact_error_dist(&self, i: usize) -> Vec<f64> {
        match self {
            ErrorModel::Crossing(c) => c.compact_error_dist(i),
            ErrorModel::Iid(m) => m.dist.clone(),
        }
    }

    pub fn posterior_info_probs(&self, w_index: usize) -> Result<Vec<f64>> {
        match self {
            ErrorModel::Crossing(c) => c.posterior_info_probs(w_index),
            ErrorModel::Iid(_) => Ok(vec![1.0]),
        }
    }

    pub fn init_knowledge(&self, w_index: usize) -> KnowledgeState {
        match self {
            ErrorModel::Crossing(c) => c.init_knowledge(w_index),
            ErrorModel::Iid(m) => KnowledgeState {
                beliefs: vec![1.0],
                elapsed: 1,
                last_error: m.grid.points[w_index],
                last_index: w_index,
            },
        }
    }

    pub fn predict_next_error(&self, k: &KnowledgeState) -> Vec<f64> {
        match self {
            ErrorModel::Crossing(c) => c.predict_next_error(k),
            ErrorModel::Iid(m) => m.dist.clone(),
        }
    }

    pub fn knowledge_update(&self, k: &KnowledgeState, w_index: usize) -> Result<KnowledgeState> {
        match self {
            ErrorModel::Crossing(c) => c.knowledge_update(k, w_index),
            ErrorModel::Iid(m) => {
                let w = m.grid.points[w_index];
                let elapsed = if Sign::of(w) == Sign::of(k.last_error) { k.elapsed + 1 } else { 1 };
                Ok(KnowledgeState {
                    beliefs: vec![1.0],
                    elapsed,
                    last_error: w,
                    last_index: w_index,
                })
            }
        }
    }

    pub fn info_weights(&self, k: &KnowledgeState) -> Vec<f64> {
        match self {
            ErrorModel::Crossing(c) => c.info_weights(k),
            ErrorModel::Iid(_) => vec![1.0],
        }
    }

    /// Grid indices of W_0..=W_T starting from `w0_index`.
    pub fn sample_errors<R: Rng + ?Sized>(&self, w0_index: usize, horizon: usize, rng: &mut R) -> Vec<usize> {
        match self {
            ErrorModel::Crossing(c) => c.sample_hidden_path(w0_index, horizon, rng).0,
            ErrorModel::Iid(m) => {
                let mut out = vec![w0_index];
                out.extend((0..horizon).map(|_| sample_index(&m.dist, rng)));
                out
            }
        }
    }

    /// Simulated (W_t, E_t) for t = 0..=T with wind clamped to [0, capacity].
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        forecasts: &[f64],
        capacity: f64,
        w0_index: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Vec<PathStep> {
        let grid = self.grid();
        self.sample_errors(w0_index, horizon, rng)
            .into_iter()
            .enumerate()
            .map(|(t, idx)| {
                let error = grid.points[idx];
                let f = forecasts.get(t).copied().unwrap_or(0.0);
                PathStep {
                    error,
                    index: idx,
                    wind: (f + error).clamp(0.0, capacity),
                }
            })
            .collect()
    }
}

pub const MODEL_FORMAT: &str = "hmsddp-error-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ErrorModel,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a ErrorModel,
}

impl ErrorModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFileRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        })
        .expect("model serializes")
    }

    /// Parses and validates a model file.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse("model", e))?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format {} v{}",
                f.format, f.version
            )));
        }
        f.model.validate()?;
        Ok(f.model)
    }
}
