use crate::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Separable convex term `½·weight·(x_var − center)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTerm {
    pub var: usize,
    pub weight: f64,
    pub center: f64,
}

impl QuadTerm {
    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.weight * (x - self.center).powi(2)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.weight * (x - self.center)
    }
}

/// Minimize `constant + cost·x + Σ quadratic` subject to rows and bounds.
///
/// Coupling rows are ordinary equality rows whose duals are reported
/// separately, in the order they were registered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexSubproblem {
    pub var_names: Vec<String>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    pub quadratic: Vec<QuadTerm>,
    pub coupling: Vec<usize>,
    pub constant: f64,
}

impl ConvexSubproblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.var_names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.push(cost);
        self.cost.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.rows.push(Row {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    /// Adds the row `x_var = value` and registers it as a coupling row.
    /// Returns the coupling index.
    pub fn add_coupling(&mut self, name: impl Into<String>, var: usize, value: f64) -> usize {
        let row = self.add_row(name, vec![(var, 1.0)], Sense::Eq, value);
        self.coupling.push(row);
        self.coupling.len() - 1
    }

    pub fn add_quadratic(&mut self, var: usize, weight: f64, center: f64) {
        self.quadratic.push(QuadTerm { var, weight, center });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.cost.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self.quadratic.iter().map(|q| q.value(x[q.var])).sum();
        self.constant + lin + quad
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for row in &self.rows {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.sense {
                Sense::Le => act - row.rhs,
                Sense::Ge => row.rhs - act,
                Sense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.var_names.len() != n {
            return Err(SolverError::Invalid("variable arrays differ in length".into()));
        }
        for j in 0..n {
            if !self.cost[j].is_finite() {
                return Err(SolverError::Invalid(format!("cost of {} is not finite", self.var_names[j])));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(SolverError::Invalid(format!(
                    "bounds of {} are inconsistent: [{}, {}]",
                    self.var_names[j], self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(SolverError::Invalid(format!("bounds of {} exclude every value", self.var_names[j])));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::Invalid(format!("rhs of row {i} ({}) is not finite", row.name)));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(SolverError::Invalid(format!("row {} references variable {j}", row.name)));
                }
                if !a.is_finite() {
                    return Err(SolverError::Invalid(format!("row {} has a non-finite coefficient", row.name)));
                }
            }
        }
        for q in &self.quadratic {
            if q.var >= n || !(q.weight >= 0.0) || !q.weight.is_finite() || !q.center.is_finite() {
                return Err(SolverError::Invalid(format!("bad quadratic term on variable {}", q.var)));
            }
        }
        let mut seen = vec![false; self.rows.len()];
        for &r in &self.coupling {
            if r >= self.rows.len() || self.rows[r].sense != Sense::Eq {
                return Err(SolverError::Invalid(format!("coupling row {r} is not an equality row")));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(SolverError::Invalid(format!("coupling row {r} registered twice")));
            }
        }
        if !self.constant.is_finite() {
            return Err(SolverError::Invalid("objective constant is not finite".into()));
        }
        Ok(())
    }
}
