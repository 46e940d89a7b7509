//! The dispatch stage problem: DC network, generators, storage, wind and the
//! cumulative shortage state with its end-of-horizon threshold penalty.
//!
//! Energy quantities are per time step: a device running at x MW for one step
//! moves x units of storage or shortage.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use hmsddp_lp::{ConvexSubproblem, Sense};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vfa::Cut;

pub const DEFAULT_ANGLE_BOUND: f64 = 0.6;

fn default_step() -> u32 {
    5
}

fn default_angle() -> f64 {
    DEFAULT_ANGLE_BOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub capacity_mw: f64,
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    pub node: String,
    pub min_mw: f64,
    pub max_mw: f64,
    /// $/MWh.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub id: String,
    pub node: String,
    pub min_mwh: f64,
    pub max_mwh: f64,
    pub initial_mwh: f64,
    /// Multiplier on charging (η⁻).
    pub eta_charge: f64,
    /// Multiplier on discharging (η⁺).
    pub eta_discharge: f64,
    /// $/MWh moved in either direction.
    pub cost: f64,
    /// Defaults to a twelfth of `max_mwh` per step.
    #[serde(default)]
    pub max_rate_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSpec {
    pub node: String,
    pub forecast_file: String,
    pub capacity_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// θ^S, $/MWh of unserved demand per stage.
    pub shortage: f64,
    /// θ^E, $/MWh of excess injection.
    pub excess: f64,
    /// θ^L, $/MWh of line overflow.
    pub overflow: f64,
    /// θ^P, $/MWh of cumulative shortage above the threshold at the horizon.
    pub threshold_penalty: f64,
    /// θ^C, MWh.
    pub threshold: f64,
}

/// The instance file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub name: String,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
    pub horizon: usize,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default = "default_angle")]
    pub phase_angle_bound: f64,
    pub generators: Vec<GeneratorSpec>,
    pub storage: Vec<StorageSpec>,
    pub demand_profile: String,
    pub wind: WindSpec,
    pub penalties: PenaltyParams,
    /// Per generator id, on/off for t = 0..=T. Missing generators are always on.
    #[serde(default)]
    pub commitment_schedule: BTreeMap<String, Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub node: usize,
    pub min: f64,
    pub max: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Storage {
    pub node: usize,
    pub min: f64,
    pub max: f64,
    pub initial: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub cost: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridInstance {
    pub name: String,
    pub horizon: usize,
    pub node_ids: Vec<String>,
    pub reference: usize,
    pub edges: Vec<Edge>,
    pub angle_bound: f64,
    pub generators: Vec<Generator>,
    /// `commitment[t][g]`.
    pub commitment: Vec<Vec<bool>>,
    pub storage: Vec<Storage>,
    /// `demand[t][node]`, MW.
    pub demand: Vec<Vec<f64>>,
    /// Wind forecast f_t for t = 0..=T, MW.
    pub forecast: Vec<f64>,
    pub wind_node: usize,
    pub wind_capacity: f64,
    pub penalties: PenaltyParams,
}

/// Pre- or post-decision resource vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    pub battery: Vec<f64>,
    pub shortage: f64,
}

impl ResourceState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.battery.clone();
        v.push(self.shortage);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let (s, b) = v.split_last().expect("resource vector has a shortage entry");
        ResourceState {
            battery: b.to_vec(),
            shortage: *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub gen: Vec<f64>,
    pub discharge: Vec<f64>,
    pub charge: Vec<f64>,
    /// Net inflow y_i per node.
    pub inflow: Vec<f64>,
    /// Flow from `edge.from` to `edge.to`.
    pub flows: Vec<f64>,
    pub angles: Vec<f64>,
    pub shortage: Vec<f64>,
    pub excess: Vec<f64>,
    pub overflow: Vec<f64>,
}

impl Decision {
    pub fn zero(inst: &GridInstance) -> Self {
        let (n, e) = (inst.node_ids.len(), inst.edges.len());
        Decision {
            gen: vec![0.0; inst.generators.len()],
            discharge: vec![0.0; inst.storage.len()],
            charge: vec![0.0; inst.storage.len()],
            inflow: vec![0.0; n],
            flows: vec![0.0; e],
            angles: vec![0.0; n],
            shortage: vec![0.0; n],
            excess: vec![0.0; n],
            overflow: vec![0.0; e],
        }
    }

    /// Y_ij with the sign convention Y_ij = −Y_ji; zero for unconnected pairs.
    pub fn flow(&self, inst: &GridInstance, i: usize, j: usize) -> f64 {
        inst.edges
            .iter()
            .zip(&self.flows)
            .map(|(e, &f)| {
                if e.from == i && e.to == j {
                    f
                } else if e.from == j && e.to == i {
                    -f
                } else {
                    0.0
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageCost {
    pub generation: f64,
    pub storage: f64,
    pub shortage: f64,
    pub excess: f64,
    pub overflow: f64,
    pub threshold: f64,
    pub total: f64,
}

/// Where a stage block reads its incoming resource levels from.
#[derive(Debug, Clone, Copy)]
pub enum StageInput<'a> {
    /// Fixed values through coupling rows (their duals are cut slopes).
    Fixed(&'a [f64]),
    /// Post-decision variables of a parent block in the same program.
    Linked(&'a [usize]),
}

/// Variable and row indices of one stage block.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLayout {
    pub gen: Vec<usize>,
    pub discharge: Vec<usize>,
    pub charge: Vec<usize>,
    pub angle: Vec<usize>,
    pub flow: Vec<usize>,
    pub over_pos: Vec<usize>,
    pub over_neg: Vec<usize>,
    pub shortage: Vec<usize>,
    pub excess: Vec<usize>,
    /// Incoming resource variables (battery..., shortage).
    pub r_in: Vec<usize>,
    /// Post-decision resource variables (battery..., shortage).
    pub r_out: Vec<usize>,
    pub penalty: Option<usize>,
    pub balance_rows: Vec<usize>,
    /// Coupling indices into `ConvexSubproblem::coupling`, one per resource.
    pub coupling: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    pub rho: f64,
    pub incumbent: Vec<f64>,
    /// Diagonal of Q_t over the resource vector; the shortage entry is 0.
    pub weights: Vec<f64>,
}

/// Expected value-function term: cuts per information state and the
/// probability of each state.
#[derive(Debug, Clone, Copy)]
pub struct VfaTerm<'a> {
    pub cuts: &'a [Vec<Cut>],
    pub weights: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct StageProblem {
    pub problem: ConvexSubproblem,
    pub layout: StageLayout,
    /// ν variable per information state that entered the objective.
    pub nu: Vec<Option<usize>>,
}

impl InstanceFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: InstanceFile = serde_json::from_str(text).map_err(|e| Error::parse("instance", e))?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.step_minutes == 0 {
            return bad("step_minutes must be positive".into());
        }
        if self.nodes.is_empty() {
            return bad("instance has no nodes".into());
        }
        let mut ids = HashMap::new();
        for (k, n) in self.nodes.iter().enumerate() {
            if ids.insert(n.id.as_str(), k).is_some() {
                return bad(format!("duplicate node id {}", n.id));
            }
        }
        if self.nodes.iter().filter(|n| n.reference).count() > 1 {
            return bad("more than one reference node".into());
        }
        let known = |id: &str, what: &str| -> Result<()> {
            if ids.contains_key(id) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{what} refers to unknown node {id}")))
            }
        };
        if !(self.phase_angle_bound > 0.0) || !self.phase_angle_bound.is_finite() {
            return bad("phase_angle_bound must be positive".into());
        }
        for e in &self.edges {
            known(&e.from, "edge")?;
            known(&e.to, "edge")?;
            if e.from == e.to {
                return bad(format!("self-loop at {}", e.from));
            }
            if !(e.capacity_mw > 0.0) || !(e.susceptance > 0.0) || !e.capacity_mw.is_finite() || !e.susceptance.is_finite()
            {
                return bad(format!("edge {}-{} needs positive capacity and susceptance", e.from, e.to));
            }
        }
        let mut gen_ids = HashMap::new();
        for g in &self.generators {
            known(&g.node, "generator")?;
            if gen_ids.insert(g.id.as_str(), ()).is_some() {
                return bad(format!("duplicate generator id {}", g.id));
            }
            if !(0.0 <= g.min_mw && g.min_mw <= g.max_mw) || !g.max_mw.is_finite() || !g.cost.is_finite() {
                return bad(format!("generator {} needs 0 <= min <= max", g.id));
            }
        }
        for b in &self.storage {
            known(&b.node, "storage")?;
            if !(0.0 <= b.min_mwh && b.min_mwh < b.max_mwh) || !b.max_mwh.is_finite() {
                return bad(format!("storage {} needs 0 <= min < max", b.id));
            }
            if !(b.min_mwh <= b.initial_mwh && b.initial_mwh <= b.max_mwh) {
                return bad(format!("storage {} starts outside its bounds", b.id));
            }
            for eta in [b.eta_charge, b.eta_discharge] {
                if !(eta > 0.0 && eta <= 1.0) {
                    return bad(format!("storage {} efficiencies must lie in (0, 1]", b.id));
                }
            }
            if !b.cost.is_finite() {
                return bad(format!("storage {} cost is not finite", b.id));
            }
            if let Some(r) = b.max_rate_mw {
                if !(r >= 0.0) || !r.is_finite() {
                    return bad(format!("storage {} rate must be nonnegative", b.id));
                }
            }
        }
        known(&self.wind.node, "wind")?;
        if !(self.wind.capacity_mw >= 0.0) || !self.wind.capacity_mw.is_finite() {
            return bad("wind capacity must be nonnegative".into());
        }
        let p = &self.penalties;
        for (name, v) in [
            ("shortage", p.shortage),
            ("excess", p.excess),
            ("overflow", p.overflow),
            ("threshold_penalty", p.threshold_penalty),
            ("threshold", p.threshold),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("penalty {name} must be nonnegative"));
            }
        }
        for (id, sched) in &self.commitment_schedule {
            if !gen_ids.contains_key(id.as_str()) {
                return bad(format!("commitment schedule for unknown generator {id}"));
            }
            if sched.len() != self.horizon + 1 {
                return bad(format!("commitment schedule of {id} needs {} entries", self.horizon + 1));
            }
        }
        Ok(())
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

fn check_headers<R: Read>(rdr: &mut csv::Reader<R>, origin: &str, want: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| Error::parse(origin, e))?;
    let got: Vec<&str> = h.iter().collect();
    if got != want {
        return Err(Error::parse(origin, format!("expected columns {}, found {}", want.join(","), got.join(","))));
    }
    Ok(())
}

/// Reads `t,forecast_mw` rows; t must run 0, 1, 2, ... without gaps.
pub fn parse_forecast_csv<R: Read>(reader: R, origin: &str) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(reader);
    check_headers(&mut rdr, origin, &["t", "forecast_mw"])?;
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
        let (t, f) = rec.map_err(|e| Error::parse(origin, e))?;
        if t != k {
            return Err(Error::parse(origin, format!("row {k} has t = {t}")));
        }
        if !f.is_finite() || f < 0.0 {
            return Err(Error::parse(origin, format!("forecast at t = {t} is not a nonnegative number")));
        }
        out.push(f);
    }
    if out.is_empty() {
        return Err(Error::parse(origin, "no forecast rows"));
    }
    Ok(out)
}

/// Reads `t,node_id,demand_mw` rows into `demand[t][node]` for t = 0..=horizon.
/// Pairs that are not listed have zero demand.
pub fn parse_demand_csv<R: Read>(reader: R, origin: &str, node_ids: &[String], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv_reader(reader);
    check_headers(&mut rdr, origin, &["t", "node_id", "demand_mw"])?;
    let index: HashMap<&str, usize> = node_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut demand = vec![vec![0.0; node_ids.len()]; horizon + 1];
    let mut seen = vec![vec![false; node_ids.len()]; horizon + 1];
    for rec in rdr.deserialize::<(usize, String, f64)>() {
        let (t, node, d) = rec.map_err(|e| Error::parse(origin, e))?;
        let k = *index
            .get(node.as_str())
            .ok_or_else(|| Error::parse(origin, format!("unknown node {node}")))?;
        if t > horizon {
            return Err(Error::parse(origin, format!("t = {t} beyond horizon {horizon}")));
        }
        if !d.is_finite() || d < 0.0 {
            return Err(Error::parse(origin, format!("demand at t = {t}, {node} is not a nonnegative number")));
        }
        if std::mem::replace(&mut seen[t][k], true) {
            return Err(Error::parse(origin, format!("duplicate demand row for t = {t}, {node}")));
        }
        demand[t][k] = d;
    }
    Ok(demand)
}

impl GridInstance {
    /// Loads an instance file and the demand and forecast files it names,
    /// resolved relative to the instance file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let file = InstanceFile::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let node_ids: Vec<String> = file.nodes.iter().map(|n| n.id.clone()).collect();
        let demand_path = base.join(&file.demand_profile);
        let demand = parse_demand_csv(
            std::fs::File::open(&demand_path).map_err(|e| Error::parse(demand_path.display().to_string(), e))?,
            &demand_path.display().to_string(),
            &node_ids,
            file.horizon,
        )?;
        let forecast_path = base.join(&file.wind.forecast_file);
        let forecast = parse_forecast_csv(
            std::fs::File::open(&forecast_path).map_err(|e| Error::parse(forecast_path.display().to_string(), e))?,
            &forecast_path.display().to_string(),
        )?;
        Self::from_parts(&file, demand, forecast)
    }

    pub fn from_parts(file: &InstanceFile, demand: Vec<Vec<f64>>, forecast: Vec<f64>) -> Result<Self> {
        file.validate()?;
        let t_len = file.horizon + 1;
        if forecast.len() < t_len {
            return Err(Error::InvalidInput(format!(
                "forecast covers {} steps, horizon needs {t_len}",
                forecast.len()
            )));
        }
        if demand.len() != t_len || demand.iter().any(|d| d.len() != file.nodes.len()) {
            return Err(Error::InvalidInput("demand profile does not match nodes and horizon".into()));
        }
        let index: HashMap<&str, usize> = file.nodes.iter().enumerate().map(|(k, n)| (n.id.as_str(), k)).collect();
        let commitment = (0..t_len)
            .map(|t| {
                file.generators
                    .iter()
                    .map(|g| file.commitment_schedule.get(&g.id).map_or(true, |s| s[t]))
                    .collect()
            })
            .collect();
        Ok(GridInstance {
            name: file.name.clone(),
            horizon: file.horizon,
            node_ids: file.nodes.iter().map(|n| n.id.clone()).collect(),
            reference: file.nodes.iter().position(|n| n.reference).unwrap_or(0),
            edges: file
                .edges
                .iter()
                .map(|e| Edge {
                    from: index[e.from.as_str()],
                    to: index[e.to.as_str()],
                    capacity: e.capacity_mw,
                    susceptance: e.susceptance,
                })
                .collect(),
            angle_bound: file.phase_angle_bound,
            generators: file
                .generators
                .iter()
                .map(|g| Generator {
                    node: index[g.node.as_str()],
                    min: g.min_mw,
                    max: g.max_mw,
                    cost: g.cost,
                })
                .collect(),
            commitment,
            storage: file
                .storage
                .iter()
                .map(|b| Storage {
                    node: index[b.node.as_str()],
                    min: b.min_mwh,
                    max: b.max_mwh,
                    initial: b.initial_mwh,
                    eta_charge: b.eta_charge,
                    eta_discharge: b.eta_discharge,
                    cost: b.cost,
                    rate: b.max_rate_mw.unwrap_or(b.max_mwh / 12.0),
                })
                .collect(),
            demand,
            forecast: forecast[..t_len].to_vec(),
            wind_node: index[file.wind.node.as_str()],
            wind_capacity: file.wind.capacity_mw,
            penalties: file.penalties,
        })
    }

    /// Copy truncated to a shorter horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon > self.horizon {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon} outside 1..={}",
                self.horizon
            )));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        out.demand.truncate(horizon + 1);
        out.forecast.truncate(horizon + 1);
        out.commitment.truncate(horizon + 1);
        Ok(out)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Length of a resource vector: one entry per battery plus shortage.
    pub fn resource_dims(&self) -> usize {
        self.storage.len() + 1
    }

    pub fn initial_state(&self) -> ResourceState {
        ResourceState {
            battery: self.storage.iter().map(|b| b.initial).collect(),
            shortage: 0.0,
        }
    }

    /// E_t = clamp(f_t + w, 0, capacity).
    pub fn wind(&self, t: usize, error: f64) -> f64 {
        (self.forecast[t] + error).clamp(0.0, self.wind_capacity)
    }

    /// Diagonal Q_t: 1/(κu − κl)² per battery and exactly 0 for shortage.
    pub fn regularization_weights(&self) -> Vec<f64> {
        let mut q: Vec<f64> = self.storage.iter().map(|b| 1.0 / (b.max - b.min).powi(2)).collect();
        q.push(0.0);
        q
    }

    /// Generator bounds at t: off, pinned at minimum when starting, or free
    /// within [min, max].
    pub fn generator_bounds(&self, t: usize, g: usize) -> (f64, f64) {
        let gen = &self.generators[g];
        if !self.commitment[t][g] {
            (0.0, 0.0)
        } else if t == 0 || !self.commitment[t - 1][g] {
            (gen.min, gen.min)
        } else {
            (gen.min, gen.max)
        }
    }

    /// p_t per node: generation plus net storage output plus wind.
    pub fn nodal_injection(&self, decision: &Decision, wind: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.num_nodes()];
        for (g, x) in self.generators.iter().zip(&decision.gen) {
            p[g.node] += x;
        }
        for (k, b) in self.storage.iter().enumerate() {
            p[b.node] += decision.discharge[k] - decision.charge[k];
        }
        p[self.wind_node] += wind;
        p
    }

    /// Post-decision resources after applying `decision` at t.
    pub fn transition_post(&self, t: usize, state: &ResourceState, decision: &Decision, wind: f64) -> Result<ResourceState> {
        let mut battery = Vec::with_capacity(self.storage.len());
        for (k, b) in self.storage.iter().enumerate() {
            let r = state.battery[k] + b.eta_charge * decision.charge[k] - b.eta_discharge * decision.discharge[k];
            let tol = 1e-9 * b.max.max(1.0);
            if r < b.min - tol || r > b.max + tol {
                return Err(Error::ContractViolation(format!(
                    "storage {k} at t = {t} would hold {r} outside [{}, {}]",
                    b.min, b.max
                )));
            }
            battery.push(r);
        }
        let p = self.nodal_injection(decision, wind);
        let unmet: f64 = (0..self.num_nodes())
            .map(|i| (self.demand[t][i] - (p[i] + decision.inflow[i])).max(0.0))
            .sum();
        Ok(ResourceState {
            battery,
            shortage: state.shortage + unmet,
        })
    }

    /// Cost components of a decision at t; the threshold term needs the
    /// post-decision shortage and applies only at the horizon.
    pub fn stage_cost(&self, t: usize, post: &ResourceState, decision: &Decision) -> StageCost {
        let p = &self.penalties;
        let generation: f64 = self.generators.iter().zip(&decision.gen).map(|(g, x)| g.cost * x).sum();
        let storage: f64 = self
            .storage
            .iter()
            .enumerate()
            .map(|(k, b)| b.cost * (decision.discharge[k] + decision.charge[k]))
            .sum();
        let shortage = p.shortage * decision.shortage.iter().sum::<f64>();
        let excess = p.excess * decision.excess.iter().sum::<f64>();
        let overflow = p.overflow * decision.overflow.iter().sum::<f64>();
        let threshold = if t == self.horizon {
            p.threshold_penalty * (post.shortage - p.threshold).max(0.0)
        } else {
            0.0
        };
        StageCost {
            generation,
            storage,
            shortage,
            excess,
            overflow,
            threshold,
            total: generation + storage + shortage + excess + overflow + threshold,
        }
    }

    /// Appends the variables and rows of stage t to `p`, scaling every cost
    /// by `weight`.
    pub fn add_stage_block(
        &self,
        p: &mut ConvexSubproblem,
        t: usize,
        input: StageInput<'_>,
        wind: f64,
        weight: f64,
    ) -> StageLayout {
        let pen = &self.penalties;
        let nb = self.storage.len();
        let gen: Vec<usize> = (0..self.generators.len())
            .map(|g| {
                let (lo, hi) = self.generator_bounds(t, g);
                p.add_var(format!("g{g}_t{t}"), lo, hi, weight * self.generators[g].cost)
            })
            .collect();
        let discharge: Vec<usize> = self
            .storage
            .iter()
            .enumerate()
            .map(|(k, b)| p.add_var(format!("dis{k}_t{t}"), 0.0, b.rate, weight * b.cost))
            .collect();
        let charge: Vec<usize> = self
            .storage
            .iter()
            .enumerate()
            .map(|(k, b)| p.add_var(format!("ch{k}_t{t}"), 0.0, b.rate, weight * b.cost))
            .collect();
        let angle: Vec<usize> = (0..self.num_nodes())
            .map(|i| {
                let a = if i == self.reference { 0.0 } else { self.angle_bound };
                p.add_var(format!("phi{i}_t{t}"), -a, a, 0.0)
            })
            .collect();
        let mut flow = Vec::new();
        let mut over_pos = Vec::new();
        let mut over_neg = Vec::new();
        for (e, edge) in self.edges.iter().enumerate() {
            let f = p.add_var(format!("f{e}_t{t}"), -edge.capacity, edge.capacity, 0.0);
            let op = p.add_var(format!("op{e}_t{t}"), 0.0, f64::INFINITY, weight * pen.overflow);
            let om = p.add_var(format!("om{e}_t{t}"), 0.0, f64::INFINITY, weight * pen.overflow);
            p.add_row(
                format!("dc{e}_t{t}"),
                vec![
                    (f, 1.0),
                    (op, 1.0),
                    (om, -1.0),
                    (angle[edge.from], -edge.susceptance),
                    (angle[edge.to], edge.susceptance),
                ],
                Sense::Eq,
                0.0,
            );
            flow.push(f);
            over_pos.push(op);
            over_neg.push(om);
        }
        let shortage: Vec<usize> = (0..self.num_nodes())
            .map(|i| p.add_var(format!("sh{i}_t{t}"), 0.0, f64::INFINITY, weight * pen.shortage))
            .collect();
        let excess: Vec<usize> = (0..self.num_nodes())
            .map(|i| p.add_var(format!("ex{i}_t{t}"), 0.0, f64::INFINITY, weight * pen.excess))
            .collect();
        let mut balance_rows = Vec::new();
        for i in 0..self.num_nodes() {
            let mut coeffs = Vec::new();
            for (g, gen_spec) in self.generators.iter().enumerate() {
                if gen_spec.node == i {
                    coeffs.push((gen[g], 1.0));
                }
            }
            for (k, b) in self.storage.iter().enumerate() {
                if b.node == i {
                    coeffs.push((discharge[k], 1.0));
                    coeffs.push((charge[k], -1.0));
                }
            }
            for (e, edge) in self.edges.iter().enumerate() {
                let s = if edge.to == i {
                    1.0
                } else if edge.from == i {
                    -1.0
                } else {
                    continue;
                };
                coeffs.push((flow[e], s));
                coeffs.push((over_pos[e], s));
                coeffs.push((over_neg[e], -s));
            }
            coeffs.push((shortage[i], 1.0));
            coeffs.push((excess[i], -1.0));
            let w = if i == self.wind_node { wind } else { 0.0 };
            balance_rows.push(p.add_row(format!("bal{i}_t{t}"), coeffs, Sense::Eq, self.demand[t][i] - w));
        }
        let mut coupling = Vec::new();
        let r_in: Vec<usize> = match input {
            StageInput::Fixed(values) => (0..=nb)
                .map(|k| {
                    let (lo, hi) = if k < nb {
                        (f64::NEG_INFINITY, f64::INFINITY)
                    } else {
                        (0.0, f64::INFINITY)
                    };
                    let v = p.add_var(format!("rin{k}_t{t}"), lo, hi, 0.0);
                    coupling.push(p.add_coupling(format!("couple{k}_t{t}"), v, values[k]));
                    v
                })
                .collect(),
            StageInput::Linked(vars) => vars.to_vec(),
        };
        let mut r_out = Vec::new();
        for (k, b) in self.storage.iter().enumerate() {
            let rx = p.add_var(format!("rx{k}_t{t}"), b.min, b.max, 0.0);
            p.add_row(
                format!("store{k}_t{t}"),
                vec![
                    (rx, 1.0),
                    (r_in[k], -1.0),
                    (charge[k], -b.eta_charge),
                    (discharge[k], b.eta_discharge),
                ],
                Sense::Eq,
                0.0,
            );
            r_out.push(rx);
        }
        let rs = p.add_var(format!("rxS_t{t}"), 0.0, f64::INFINITY, 0.0);
        let mut coeffs = vec![(rs, 1.0), (r_in[nb], -1.0)];
        coeffs.extend(shortage.iter().map(|&v| (v, -1.0)));
        p.add_row(format!("short_t{t}"), coeffs, Sense::Eq, 0.0);
        r_out.push(rs);
        let penalty = (t == self.horizon).then(|| {
            let v = p.add_var(format!("pen_t{t}"), 0.0, f64::INFINITY, weight * pen.threshold_penalty);
            p.add_row(format!("thresh_t{t}"), vec![(v, 1.0), (rs, -1.0)], Sense::Ge, -pen.threshold);
            v
        });
        StageLayout {
            gen,
            discharge,
            charge,
            angle,
            flow,
            over_pos,
            over_neg,
            shortage,
            excess,
            r_in,
            r_out,
            penalty,
            balance_rows,
            coupling,
        }
    }

    /// Stage t problem for incoming resources `input` and wind `wind`, with
    /// an optional expected value-function term and proximal term.
    pub fn build_stage_subproblem(
        &self,
        t: usize,
        input: &ResourceState,
        wind: f64,
        vfa: Option<VfaTerm<'_>>,
        reg: Option<&Regularization>,
    ) -> StageProblem {
        let mut p = ConvexSubproblem::new();
        let r = input.to_vec();
        let layout = self.add_stage_block(&mut p, t, StageInput::Fixed(&r), wind, 1.0);
        let mut nu = Vec::new();
        if let (Some(v), true) = (vfa, t < self.horizon) {
            for (i, cuts) in v.cuts.iter().enumerate() {
                if cuts.is_empty() {
                    nu.push(None);
                    continue;
                }
                let var = p.add_var(format!("nu{i}_t{t}"), f64::NEG_INFINITY, f64::INFINITY, v.weights[i]);
                for (c, cut) in cuts.iter().enumerate() {
                    add_cut_row(&mut p, format!("cut{i}_{c}_t{t}"), var, &layout.r_out, cut);
                }
                nu.push(Some(var));
            }
        }
        if let (Some(reg), true) = (reg, t < self.horizon) {
            for (k, &var) in layout.r_out.iter().enumerate() {
                let w = reg.rho * reg.weights[k];
                if w > 0.0 {
                    p.add_quadratic(var, w, reg.incumbent[k]);
                }
            }
        }
        StageProblem { problem: p, layout, nu }
    }

    pub fn decision_from(&self, layout: &StageLayout, x: &[f64]) -> Decision {
        let get = |v: &[usize]| v.iter().map(|&k| x[k]).collect::<Vec<f64>>();
        let flows: Vec<f64> = (0..self.edges.len())
            .map(|e| x[layout.flow[e]] + x[layout.over_pos[e]] - x[layout.over_neg[e]])
            .collect();
        let mut inflow = vec![0.0; self.num_nodes()];
        for (e, edge) in self.edges.iter().enumerate() {
            inflow[edge.to] += flows[e];
            inflow[edge.from] -= flows[e];
        }
        Decision {
            gen: get(&layout.gen),
            discharge: get(&layout.discharge),
            charge: get(&layout.charge),
            inflow,
            flows,
            angles: get(&layout.angle),
            shortage: get(&layout.shortage),
            excess: get(&layout.excess),
            overflow: (0..self.edges.len())
                .map(|e| x[layout.over_pos[e]] + x[layout.over_neg[e]])
                .collect(),
        }
    }
}

/// Row ν − ⟨β, R⟩ ≥ α − ⟨β, anchor⟩, i.e. ν ≥ α + ⟨β, R − anchor⟩, as
/// (coefficients, right-hand side).
pub fn cut_row(nu: usize, r_out: &[usize], cut: &Cut) -> (Vec<(usize, f64)>, f64) {
    let mut coeffs = vec![(nu, 1.0)];
    coeffs.extend(r_out.iter().zip(&cut.beta).filter(|(_, b)| **b != 0.0).map(|(&v, &b)| (v, -b)));
    (coeffs, cut.intercept())
}

pub fn add_cut_row(p: &mut ConvexSubproblem, name: String, nu: usize, r_out: &[usize], cut: &Cut) -> usize {
    let (coeffs, rhs) = cut_row(nu, r_out, cut);
    p.add_row(name, coeffs, Sense::Ge, rhs)
}
