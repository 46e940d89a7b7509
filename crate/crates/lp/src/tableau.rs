//! Dense bounded-variable simplex tableau.
//!
//! Every row `a·x (sense) b` carries a slack column `s` with `a·x + s = b`,
//! bounded `[0, ∞)` for `≤`, `(−∞, 0]` for `≥` and `[0, 0]` for `=`. The
//! all-slack basis is therefore always available, and both the cold and the
//! warm path start from "some basis": dual feasibility is obtained by flipping
//! boxed variables or temporarily shifting costs, the dual simplex restores
//! primal feasibility, and the primal simplex finishes with the true costs.

use crate::SolverError;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-7;
const DROP_TOL: f64 = 1e-13;
const REFACTOR_INTERVAL: usize = 150;
const DEGENERATE_SWITCH: usize = 40;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
    /// Nonbasic free variable held at zero.
    Zero,
}

#[derive(Debug, Clone)]
struct Column {
    lower: f64,
    upper: f64,
    cost: f64,
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tableau {
    cols: Vec<Column>,
    rhs: Vec<f64>,
    slack: Vec<usize>,
    t: Vec<Vec<f64>>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    d: Vec<f64>,
    work_cost: Vec<f64>,
    has_basis: bool,
    pivots: usize,
    pub iterations: usize,
}

fn default_status(lower: f64, upper: f64) -> Status {
    if lower.is_finite() {
        Status::Lower
    } else if upper.is_finite() {
        Status::Upper
    } else {
        Status::Zero
    }
}

fn tol(bound: f64) -> f64 {
    FEAS_TOL * (1.0 + bound.abs())
}

enum Ratio {
    Unbounded,
    Flip(f64),
    Row { row: usize, step: f64, to_upper: bool },
}

impl Tableau {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    /// Appends a column; entries refer to existing rows.
    pub fn add_column(&mut self, lower: f64, upper: f64, cost: f64, entries: Vec<(usize, f64)>) -> usize {
        let j = self.cols.len();
        if self.has_basis {
            let m = self.num_rows();
            let mut col = vec![0.0; m];
            for &(k, a) in &entries {
                let s = self.slack[k];
                for (i, c) in col.iter_mut().enumerate() {
                    let v = self.t[i][s];
                    if v != 0.0 {
                        *c += a * v;
                    }
                }
            }
            for (row, c) in self.t.iter_mut().zip(col) {
                row.push(if c.abs() < DROP_TOL { 0.0 } else { c });
            }
            self.d.push(0.0);
        }
        self.cols.push(Column { lower, upper, cost, entries });
        self.status.push(default_status(lower, upper));
        self.work_cost.push(cost);
        j
    }

    /// Appends a row `Σ a_j x_j + s = rhs` with a fresh slack column bounded
    /// by `[slack_lower, slack_upper]`. Returns (row index, slack column).
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], rhs: f64, slack_lower: f64, slack_upper: f64) -> (usize, usize) {
        let r = self.num_rows();
        for &(j, a) in coeffs {
            self.cols[j].entries.push((r, a));
        }
        self.rhs.push(rhs);
        let s = self.cols.len();
        self.cols.push(Column {
            lower: slack_lower,
            upper: slack_upper,
            cost: 0.0,
            entries: vec![(r, 1.0)],
        });
        self.work_cost.push(0.0);
        self.slack.push(s);
        if self.has_basis {
            for row in self.t.iter_mut() {
                row.push(0.0);
            }
            let mut new_row = vec![0.0; s + 1];
            for &(j, a) in coeffs {
                new_row[j] += a;
            }
            new_row[s] = 1.0;
            for &(j, a) in coeffs {
                if self.status[j] == Status::Basic {
                    let i = self.basis_row(j);
                    for (nr, &v) in new_row.iter_mut().zip(&self.t[i]) {
                        if v != 0.0 {
                            *nr -= a * v;
                        }
                    }
                }
            }
            for j in 0..=s {
                if self.status.get(j) == Some(&Status::Basic) || new_row[j].abs() < DROP_TOL {
                    new_row[j] = 0.0;
                }
            }
            new_row[s] = 1.0;
            self.t.push(new_row);
            self.basis.push(s);
            self.beta.push(0.0);
            self.d.push(0.0);
            self.status.push(Status::Basic);
        } else {
            self.status.push(Status::Basic);
        }
        (r, s)
    }

    fn basis_row(&self, j: usize) -> usize {
        self.basis.iter().position(|&b| b == j).expect("basic column must be in the basis")
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) {
        self.rhs[row] = rhs;
    }

    pub fn set_cost(&mut self, col: usize, cost: f64) {
        self.cols[col].cost = cost;
    }

    pub fn set_bounds(&mut self, col: usize, lower: f64, upper: f64) {
        self.cols[col].lower = lower;
        self.cols[col].upper = upper;
        let st = self.status[col];
        if st != Status::Basic {
            let ok = match st {
                Status::Lower => lower.is_finite(),
                Status::Upper => upper.is_finite(),
                Status::Zero => !lower.is_finite() && !upper.is_finite(),
                Status::Basic => true,
            };
            if !ok {
                self.status[col] = default_status(lower, upper);
            }
        }
    }

    pub fn reset_basis(&mut self) {
        self.has_basis = false;
    }

    fn nb_value(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::Lower => self.cols[j].lower,
            Status::Upper => self.cols[j].upper,
            _ => 0.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.num_cols()).map(|j| self.nb_value(j)).collect();
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.beta[i];
        }
        x
    }

    /// Row duals `y = c_B B⁻¹`, the sensitivity of the optimum to each rhs.
    pub fn row_duals(&self) -> Vec<f64> {
        let m = self.num_rows();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = self.cols[self.basis[i]].cost;
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i];
            for (k, yk) in y.iter_mut().enumerate() {
                let v = row[self.slack[k]];
                if v != 0.0 {
                    *yk += cb * v;
                }
            }
        }
        y
    }

    fn init_slack_basis(&mut self) {
        let m = self.num_rows();
        let n = self.num_cols();
        self.t = vec![vec![0.0; n]; m];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, a) in &col.entries {
                self.t[i][j] += a;
            }
        }
        for (j, col) in self.cols.iter().enumerate() {
            self.status[j] = default_status(col.lower, col.upper);
        }
        self.basis = self.slack.clone();
        for &s in &self.slack {
            self.status[s] = Status::Basic;
        }
        self.beta = vec![0.0; m];
        self.d = vec![0.0; n];
        self.has_basis = true;
        self.pivots = 0;
    }

    /// Rebuilds the tableau for the current basis from the original columns.
    fn refactor(&mut self) -> Result<(), SolverError> {
        let m = self.num_rows();
        let n = self.num_cols();
        let mut b = vec![vec![0.0; 2 * m]; m];
        for (r, &j) in self.basis.iter().enumerate() {
            for &(k, a) in &self.cols[j].entries {
                b[k][r] += a;
            }
        }
        for (k, row) in b.iter_mut().enumerate() {
            row[m + k] = 1.0;
        }
        for c in 0..m {
            let (p, best) = (c..m)
                .map(|r| (r, b[r][c].abs()))
                .fold((c, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best < 1e-11 {
                return Err(SolverError::Numerical("singular basis during refactorization".into()));
            }
            b.swap(c, p);
            let inv = 1.0 / b[c][c];
            for v in b[c].iter_mut() {
                *v *= inv;
            }
            let pr = b[c].clone();
            for (r, row) in b.iter_mut().enumerate() {
                if r == c {
                    continue;
                }
                let f = row[c];
                if f != 0.0 {
                    for (v, &p) in row.iter_mut().zip(&pr) {
                        *v -= f * p;
                    }
                }
            }
        }
        // b[r][m..] is now row r of B⁻¹, matching basis position r.
        let mut t = vec![vec![0.0; n]; m];
        for (j, col) in self.cols.iter().enumerate() {
            for &(k, a) in &col.entries {
                for r in 0..m {
                    let v = b[r][m + k];
                    if v != 0.0 {
                        t[r][j] += v * a;
                    }
                }
            }
        }
        for (r, &j) in self.basis.iter().enumerate() {
            for (i, row) in t.iter_mut().enumerate() {
                row[j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        for row in t.iter_mut() {
            for v in row.iter_mut() {
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                }
            }
        }
        self.t = t;
        self.pivots = 0;
        Ok(())
    }

    /// `x_B = B⁻¹ (b − N x_N)`, with `B⁻¹` read off the slack columns.
    fn recompute_beta(&mut self) {
        let m = self.num_rows();
        let mut r = self.rhs.clone();
        for j in 0..self.num_cols() {
            if self.status[j] == Status::Basic {
                continue;
            }
            let v = self.nb_value(j);
            if v != 0.0 {
                for &(k, a) in &self.cols[j].entries {
                    r[k] -= a * v;
                }
            }
        }
        for i in 0..m {
            let row = &self.t[i];
            let mut s = 0.0;
            for (k, &rk) in r.iter().enumerate() {
                if rk != 0.0 {
                    let v = row[self.slack[k]];
                    if v != 0.0 {
                        s += v * rk;
                    }
                }
            }
            self.beta[i] = s;
        }
        for _ in 0..2 {
            if !self.refine_beta() {
                break;
            }
        }
    }

    /// One step of iterative refinement, `x_B += B⁻¹ (b − A x)`. Returns
    /// false when the residual is already negligible.
    fn refine_beta(&mut self) -> bool {
        let m = self.num_rows();
        let x = self.values();
        let mut r = self.rhs.clone();
        let mut mag: Vec<f64> = self.rhs.iter().map(|b| b.abs()).collect();
        for (j, col) in self.cols.iter().enumerate() {
            if x[j] != 0.0 {
                for &(k, a) in &col.entries {
                    r[k] -= a * x[j];
                    mag[k] += (a * x[j]).abs();
                }
            }
        }
        if r.iter().zip(&mag).all(|(ri, mi)| ri.abs() <= 1e-15 * (1.0 + mi)) {
            return false;
        }
        for i in 0..m {
            let row = &self.t[i];
            let mut s = 0.0;
            for (k, &rk) in r.iter().enumerate() {
                if rk != 0.0 {
                    s += row[self.slack[k]] * rk;
                }
            }
            self.beta[i] += s;
        }
        true
    }

    fn recompute_duals(&mut self) {
        let m = self.num_rows();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = self.work_cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i];
            for (k, yk) in y.iter_mut().enumerate() {
                let v = row[self.slack[k]];
                if v != 0.0 {
                    *yk += cb * v;
                }
            }
        }
        for j in 0..self.num_cols() {
            self.d[j] = if self.status[j] == Status::Basic {
                0.0
            } else {
                let mut dj = self.work_cost[j];
                for &(k, a) in &self.cols[j].entries {
                    dj -= y[k] * a;
                }
                dj
            };
        }
    }

    fn cost_tol(&self) -> f64 {
        let scale = self.work_cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        OPT_TOL * scale
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.cols[j].lower == self.cols[j].upper
    }

    fn primal_infeasibility(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, &j) in self.basis.iter().enumerate() {
            let c = &self.cols[j];
            let b = self.beta[i];
            if b < c.lower - tol(c.lower) {
                worst = worst.max(c.lower - b);
            } else if b > c.upper + tol(c.upper) {
                worst = worst.max(b - c.upper);
            }
        }
        worst
    }

    fn dual_infeasible(&self, j: usize, dtol: f64) -> bool {
        if self.is_fixed(j) {
            return false;
        }
        let dj = self.d[j];
        match self.status[j] {
            Status::Basic => false,
            Status::Lower => dj < -dtol,
            Status::Upper => dj > dtol,
            Status::Zero => dj.abs() > dtol,
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let mut pr = std::mem::take(&mut self.t[r]);
        let inv = 1.0 / pr[q];
        let mut nz = Vec::with_capacity(pr.len());
        for (j, v) in pr.iter_mut().enumerate() {
            if *v != 0.0 {
                *v *= inv;
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                } else {
                    nz.push(j);
                }
            }
        }
        pr[q] = 1.0;
        for row in self.t.iter_mut() {
            if row.is_empty() {
                continue;
            }
            let f = row[q];
            if f == 0.0 {
                continue;
            }
            for &j in &nz {
                let v = row[j] - f * pr[j];
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in &nz {
                self.d[j] -= f * pr[j];
            }
        }
        self.d[q] = 0.0;
        self.t[r] = pr;
        self.basis[r] = q;
        self.status[q] = Status::Basic;
        self.pivots += 1;
    }

    fn price(&self, bland: bool, dtol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.num_cols() {
            let st = self.status[j];
            if st == Status::Basic || self.is_fixed(j) {
                continue;
            }
            let dj = self.d[j];
            let dir = if dj < -dtol && matches!(st, Status::Lower | Status::Zero) {
                1.0
            } else if dj > dtol && matches!(st, Status::Upper | Status::Zero) {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn primal_ratio(&self, q: usize, dir: f64, bland: bool) -> Ratio {
        let range = self.cols[q].upper - self.cols[q].lower;
        let m = self.num_rows();
        // Pass 1: largest step keeping every basic variable within tolerance.
        let mut theta_max = f64::INFINITY;
        for i in 0..m {
            let a = -dir * self.t[i][q];
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let c = &self.cols[self.basis[i]];
            let b = self.beta[i];
            let lim = if a < 0.0 {
                if !c.lower.is_finite() {
                    continue;
                }
                let relax = if bland { 0.0 } else { tol(c.lower) };
                (b - c.lower + relax) / -a
            } else {
                if !c.upper.is_finite() {
                    continue;
                }
                let relax = if bland { 0.0 } else { tol(c.upper) };
                (c.upper - b + relax) / a
            };
            theta_max = theta_max.min(lim.max(0.0));
        }
        if range <= theta_max {
            return if range.is_finite() { Ratio::Flip(range) } else { Ratio::Unbounded };
        }
        // Pass 2: among rows that block within theta_max, the largest pivot.
        let mut choice: Option<(usize, f64, bool)> = None;
        let mut best_mag = 0.0;
        let mut best_col = usize::MAX;
        for i in 0..m {
            let a = -dir * self.t[i][q];
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let c = &self.cols[self.basis[i]];
            let b = self.beta[i];
            let (ratio, to_upper) = if a < 0.0 {
                if !c.lower.is_finite() {
                    continue;
                }
                (((b - c.lower) / -a).max(0.0), false)
            } else {
                if !c.upper.is_finite() {
                    continue;
                }
                (((c.upper - b) / a).max(0.0), true)
            };
            if ratio > theta_max {
                continue;
            }
            let better = if bland {
                self.basis[i] < best_col
            } else {
                a.abs() > best_mag
            };
            if better {
                best_mag = a.abs();
                best_col = self.basis[i];
                choice = Some((i, ratio, to_upper));
            }
        }
        match choice {
            Some((row, step, to_upper)) => Ratio::Row { row, step, to_upper },
            None => Ratio::Unbounded,
        }
    }

    fn primal(&mut self, max_iter: usize) -> Result<(), SolverError> {
        let mut degenerate = 0usize;
        let m = self.num_rows();
        loop {
            let bland = degenerate > DEGENERATE_SWITCH;
            let dtol = self.cost_tol();
            let Some((q, dir)) = self.price(bland, dtol) else {
                return Ok(());
            };
            if self.iterations >= max_iter {
                return Err(SolverError::IterationLimit(self.iterations));
            }
            self.iterations += 1;
            match self.primal_ratio(q, dir, bland) {
                Ratio::Unbounded => return Err(SolverError::Unbounded),
                Ratio::Flip(step) => {
                    for i in 0..m {
                        let a = self.t[i][q];
                        if a != 0.0 {
                            self.beta[i] -= dir * step * a;
                        }
                    }
                    self.status[q] = if dir > 0.0 { Status::Upper } else { Status::Lower };
                    degenerate = 0;
                }
                Ratio::Row { row, step, to_upper } => {
                    let entering_value = self.nb_value(q) + dir * step;
                    for i in 0..m {
                        let a = self.t[i][q];
                        if a != 0.0 {
                            self.beta[i] -= dir * step * a;
                        }
                    }
                    let leaving = self.basis[row];
                    self.pivot(row, q);
                    self.status[leaving] = if to_upper { Status::Upper } else { Status::Lower };
                    self.beta[row] = entering_value;
                    if step <= 1e-12 {
                        degenerate += 1;
                    } else {
                        degenerate = 0;
                    }
                }
            }
        }
    }

    fn dual(&mut self, max_iter: usize) -> Result<(), SolverError> {
        let mut degenerate = 0usize;
        let m = self.num_rows();
        loop {
            let bland = degenerate > DEGENERATE_SWITCH;
            // Leaving row: largest infeasibility, or the smallest basic index under Bland.
            let mut leave: Option<(usize, bool)> = None;
            let mut worst = 0.0;
            let mut worst_col = usize::MAX;
            for (i, &j) in self.basis.iter().enumerate() {
                let c = &self.cols[j];
                let b = self.beta[i];
                let (inf, below) = if b < c.lower - tol(c.lower) {
                    (c.lower - b, true)
                } else if b > c.upper + tol(c.upper) {
                    (b - c.upper, false)
                } else {
                    continue;
                };
                let better = if bland { j < worst_col } else { inf > worst };
                if better {
                    worst = inf;
                    worst_col = j;
                    leave = Some((i, below));
                }
            }
            let Some((r, below)) = leave else {
                return Ok(());
            };
            if self.iterations >= max_iter {
                return Err(SolverError::IterationLimit(self.iterations));
            }
            self.iterations += 1;
            let dtol = self.cost_tol();
            let row = &self.t[r];
            // x_Br moves by −a·Δx_j; below needs it to rise, above to fall.
            let eligible = |a: f64, st: Status| -> bool {
                match st {
                    Status::Lower => (a < 0.0) == below,
                    Status::Upper => (a > 0.0) == below,
                    Status::Zero => true,
                    Status::Basic => false,
                }
            };
            let mut theta_max = f64::INFINITY;
            for j in 0..self.num_cols() {
                let st = self.status[j];
                if st == Status::Basic || self.is_fixed(j) {
                    continue;
                }
                let a = row[j];
                if a.abs() < PIVOT_TOL || !eligible(a, st) {
                    continue;
                }
                let dj = self.d[j].abs();
                let relax = if bland { 0.0 } else { dtol };
                theta_max = theta_max.min((dj + relax) / a.abs());
            }
            if !theta_max.is_finite() {
                return Err(SolverError::Infeasible);
            }
            let mut q = usize::MAX;
            let mut best = 0.0;
            let mut best_ratio = f64::INFINITY;
            for j in 0..self.num_cols() {
                let st = self.status[j];
                if st == Status::Basic || self.is_fixed(j) {
                    continue;
                }
                let a = row[j];
                if a.abs() < PIVOT_TOL || !eligible(a, st) {
                    continue;
                }
                let ratio = self.d[j].abs() / a.abs();
                if ratio > theta_max {
                    continue;
                }
                if bland {
                    if ratio < best_ratio {
                        best_ratio = ratio;
                        q = j;
                    }
                } else if a.abs() > best {
                    best = a.abs();
                    best_ratio = ratio;
                    q = j;
                }
            }
            if q == usize::MAX {
                return Err(SolverError::Infeasible);
            }
            let c = &self.cols[self.basis[r]];
            let target = if below { c.lower } else { c.upper };
            let a_rq = self.t[r][q];
            let dx = (self.beta[r] - target) / a_rq;
            let entering_value = self.nb_value(q) + dx;
            for i in 0..m {
                let a = self.t[i][q];
                if a != 0.0 {
                    self.beta[i] -= a * dx;
                }
            }
            let leaving = self.basis[r];
            self.pivot(r, q);
            self.status[leaving] = if below { Status::Lower } else { Status::Upper };
            self.beta[r] = entering_value;
            if best_ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
        }
    }

    /// Flips boxed variables and shifts costs of the rest until the current
    /// basis is dual feasible. Returns whether any cost was shifted.
    fn make_dual_feasible(&mut self) -> bool {
        let dtol = self.cost_tol();
        let mut shifted = false;
        let mut flipped = false;
        for j in 0..self.num_cols() {
            if !self.dual_infeasible(j, dtol) {
                continue;
            }
            let c = &self.cols[j];
            let boxed = c.lower.is_finite() && c.upper.is_finite();
            if boxed {
                self.status[j] = if self.d[j] < 0.0 { Status::Upper } else { Status::Lower };
                flipped = true;
            } else {
                self.work_cost[j] -= self.d[j];
                self.d[j] = 0.0;
                shifted = true;
            }
        }
        if flipped {
            self.recompute_beta();
        }
        shifted
    }

    fn restore_costs(&mut self) {
        for (w, c) in self.work_cost.iter_mut().zip(&self.cols) {
            *w = c.cost;
        }
    }

    fn row_residual(&self) -> f64 {
        let x = self.values();
        let mut act = vec![0.0; self.num_rows()];
        let mut mag = vec![0.0; self.num_rows()];
        for (j, col) in self.cols.iter().enumerate() {
            if x[j] != 0.0 {
                for &(k, a) in &col.entries {
                    act[k] += a * x[j];
                    mag[k] += (a * x[j]).abs();
                }
            }
        }
        // Relative to the largest term so cancelling rows are not held to
        // an unattainable absolute accuracy.
        act.iter()
            .zip(&self.rhs)
            .zip(&mag)
            .map(|((a, b), m)| (a - b).abs() / (1.0 + b.abs().max(*m)))
            .fold(0.0, f64::max)
    }

    fn reoptimize(&mut self, max_iter: usize) -> Result<(), SolverError> {
        self.restore_costs();
        self.recompute_beta();
        self.recompute_duals();
        if self.primal_infeasibility() > 0.0 {
            let shifted = self.make_dual_feasible();
            self.dual(max_iter)?;
            if shifted {
                self.restore_costs();
                self.recompute_duals();
            }
        }
        self.primal(max_iter)
    }

    fn optimize_once(&mut self, max_iter: usize) -> Result<(), SolverError> {
        if !self.has_basis {
            self.init_slack_basis();
        } else if self.pivots > REFACTOR_INTERVAL.max(self.num_rows() / 2) {
            self.refactor()?;
        }
        self.reoptimize(max_iter)?;
        for _ in 0..3 {
            self.recompute_beta();
            self.recompute_duals();
            if self.row_residual() > RESIDUAL_TOL {
                self.refactor()?;
                self.reoptimize(max_iter)?;
                continue;
            }
            let dtol = self.cost_tol();
            let dual_ok = (0..self.num_cols()).all(|j| !self.dual_infeasible(j, dtol));
            if self.primal_infeasibility() == 0.0 && dual_ok {
                return Ok(());
            }
            self.reoptimize(max_iter)?;
        }
        Err(SolverError::Numerical("could not reach a clean optimal basis".into()))
    }

    /// Optimizes from the current basis, falling back to a cold start from
    /// the slack basis when the warm attempt fails.
    pub fn optimize(&mut self, max_iter: usize) -> Result<(), SolverError> {
        self.iterations = 0;
        let warm = self.has_basis;
        match self.optimize_once(max_iter) {
            Ok(()) => Ok(()),
            Err(_) if warm => {
                self.has_basis = false;
                self.iterations = 0;
                self.optimize_once(max_iter)
            }
            Err(e) => Err(e),
        }
    }
}
