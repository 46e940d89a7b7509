use crate::problem::{ConvexSubproblem, QuadTerm, Sense};
use crate::tableau::Tableau;
use crate::SolverError;

const MAX_OUTER_ROUNDS: usize = 200;
/// Quadratic terms whose largest possible contribution is below this are
/// evaluated exactly but not modelled, leaving a pure LP.
const NEGLIGIBLE_QUADRATIC: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimal value to each row's right-hand side.
    pub row_duals: Vec<f64>,
    /// Row duals of the coupling rows, in registration order.
    pub coupling_duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct Epigraph {
    z: usize,
    points: Vec<f64>,
}

/// A subproblem bound to a simplex basis that survives modifications, so
/// that re-solving after small changes starts from the previous optimum.
#[derive(Debug, Clone)]
pub struct WarmLp {
    problem: ConvexSubproblem,
    tab: Tableau,
    var_col: Vec<usize>,
    row_tab: Vec<usize>,
    epigraph: Vec<Option<Epigraph>>,
}

fn slack_bounds(sense: Sense) -> (f64, f64) {
    match sense {
        Sense::Le => (0.0, f64::INFINITY),
        Sense::Ge => (f64::NEG_INFINITY, 0.0),
        Sense::Eq => (0.0, 0.0),
    }
}

fn significant(q: &QuadTerm, lower: f64, upper: f64) -> bool {
    if q.weight <= 0.0 {
        return false;
    }
    if !lower.is_finite() || !upper.is_finite() {
        return true;
    }
    q.value(lower).max(q.value(upper)) > NEGLIGIBLE_QUADRATIC
}

impl WarmLp {
    pub fn new(problem: ConvexSubproblem) -> Result<Self, SolverError> {
        problem.validate()?;
        let mut lp = WarmLp {
            problem: ConvexSubproblem::new(),
            tab: Tableau::default(),
            var_col: Vec::new(),
            row_tab: Vec::new(),
            epigraph: Vec::new(),
        };
        for j in 0..problem.num_vars() {
            lp.add_var(problem.var_names[j].clone(), problem.lower[j], problem.upper[j], problem.cost[j]);
        }
        for row in &problem.rows {
            lp.add_row(row.name.clone(), row.coeffs.clone(), row.sense, row.rhs);
        }
        for q in &problem.quadratic {
            lp.add_quadratic(q.var, q.weight, q.center);
        }
        lp.problem.coupling = problem.coupling.clone();
        lp.problem.constant = problem.constant;
        Ok(lp)
    }

    pub fn problem(&self) -> &ConvexSubproblem {
        &self.problem
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        let col = self.tab.add_column(lower, upper, cost, Vec::new());
        self.var_col.push(col);
        self.problem.add_var(name, lower, upper, cost)
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        let mapped: Vec<(usize, f64)> = coeffs.iter().map(|&(j, a)| (self.var_col[j], a)).collect();
        let (lo, hi) = slack_bounds(sense);
        let (r, _) = self.tab.add_row(&mapped, rhs, lo, hi);
        self.row_tab.push(r);
        self.problem.add_row(name, coeffs, sense, rhs)
    }

    pub fn add_coupling(&mut self, name: impl Into<String>, var: usize, value: f64) -> usize {
        let row = self.add_row(name, vec![(var, 1.0)], Sense::Eq, value);
        self.problem.coupling.push(row);
        self.problem.coupling.len() - 1
    }

    pub fn add_quadratic(&mut self, var: usize, weight: f64, center: f64) {
        self.problem.add_quadratic(var, weight, center);
        self.epigraph.push(None);
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) {
        self.problem.rows[row].rhs = rhs;
        self.tab.set_rhs(self.row_tab[row], rhs);
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.problem.cost[var] = cost;
        self.tab.set_cost(self.var_col[var], cost);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.problem.lower[var] = lower;
        self.problem.upper[var] = upper;
        self.tab.set_bounds(self.var_col[var], lower, upper);
    }

    /// Forgets the basis so the next solve starts cold.
    pub fn reset(&mut self) {
        self.tab.reset_basis();
    }

    fn add_tangent(&mut self, k: usize, p: f64) {
        let q = self.problem.quadratic[k];
        let epi = self.epigraph[k].as_mut().expect("epigraph registered");
        if epi.points.iter().any(|&e| (e - p).abs() <= 1e-12 * (1.0 + p.abs())) {
            return;
        }
        epi.points.push(p);
        let z = epi.z;
        let s = q.slope(p);
        let coeffs = [(z, 1.0), (self.var_col[q.var], -s)];
        self.tab.add_row(&coeffs, q.value(p) - s * p, f64::NEG_INFINITY, 0.0);
    }

    fn register_epigraphs(&mut self) {
        for k in 0..self.problem.quadratic.len() {
            if self.epigraph[k].is_some() {
                continue;
            }
            let q = self.problem.quadratic[k];
            let (lo, hi) = (self.problem.lower[q.var], self.problem.upper[q.var]);
            if !significant(&q, lo, hi) {
                continue;
            }
            let z = self.tab.add_column(0.0, f64::INFINITY, 1.0, Vec::new());
            self.epigraph[k] = Some(Epigraph { z, points: Vec::new() });
            let mut seeds = Vec::new();
            if lo.is_finite() {
                seeds.push(lo);
            } else {
                seeds.push(q.center - 1.0);
            }
            if hi.is_finite() {
                seeds.push(hi);
            } else {
                seeds.push(q.center + 1.0);
            }
            for p in seeds {
                self.add_tangent(k, p);
            }
        }
    }

    pub fn solve(&mut self) -> Result<SubproblemSolution, SolverError> {
        self.register_epigraphs();
        let budget = 100 * (self.tab.num_rows() + self.tab.num_cols()) + 10_000;
        let n_terms = self.epigraph.iter().filter(|e| e.is_some()).count();
        let mut iterations = 0;
        let mut rounds = 0;
        loop {
            if let Err(e) = self.tab.optimize(budget) {
                // A warm basis that drifted numerically gets one cold restart.
                if !matches!(e, SolverError::Numerical(_)) {
                    return Err(e);
                }
                self.tab.reset_basis();
                self.tab.optimize(budget)?;
            }
            iterations += self.tab.iterations;
            if n_terms == 0 {
                break;
            }
            let x = self.tab.values();
            let primal: Vec<f64> = self.var_col.iter().map(|&c| x[c]).collect();
            let total = self.problem.objective_value(&primal);
            let gap_tol = 1e-9 * (1.0 + total.abs()) / n_terms as f64;
            let mut cuts = Vec::new();
            for (k, epi) in self.epigraph.iter().enumerate() {
                if let Some(epi) = epi {
                    let q = &self.problem.quadratic[k];
                    let xv = primal[q.var];
                    if q.value(xv) - x[epi.z] > gap_tol {
                        cuts.push((k, xv));
                    }
                }
            }
            if cuts.is_empty() {
                break;
            }
            rounds += 1;
            if rounds > MAX_OUTER_ROUNDS {
                return Err(SolverError::IterationLimit(iterations));
            }
            for (k, p) in cuts {
                self.add_tangent(k, p);
            }
        }
        let x = self.tab.values();
        let primal: Vec<f64> = self.var_col.iter().map(|&c| x[c]).collect();
        let y = self.tab.row_duals();
        let row_duals: Vec<f64> = self.row_tab.iter().map(|&r| y[r]).collect();
        let coupling_duals = self.problem.coupling.iter().map(|&r| row_duals[r]).collect();
        Ok(SubproblemSolution {
            objective: self.problem.objective_value(&primal),
            primal,
            row_duals,
            coupling_duals,
            iterations,
        })
    }
}

/// Solves a subproblem from scratch. The result depends only on the problem.
pub fn solve(problem: &ConvexSubproblem) -> Result<SubproblemSolution, SolverError> {
    WarmLp::new(problem.clone())?.solve()
}
