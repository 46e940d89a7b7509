use std::fmt::Write;

use crate::problem::{ConvexSubproblem, Sense};

fn term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
    if *first {
        let _ = write!(out, " {coef} {name}");
    } else if coef < 0.0 {
        let _ = write!(out, " - {} {name}", -coef);
    } else {
        let _ = write!(out, " + {coef} {name}");
    }
    *first = false;
}

/// Renders the problem in CPLEX LP text format for inspection with other solvers.
pub fn write_lp(p: &ConvexSubproblem) -> String {
    let mut out = String::from("Minimize\n obj:");
    let mut lin = p.cost.clone();
    let mut constant = p.constant;
    for q in &p.quadratic {
        lin[q.var] -= q.weight * q.center;
        constant += 0.5 * q.weight * q.center * q.center;
    }
    let mut first = true;
    for (j, &c) in lin.iter().enumerate() {
        if c != 0.0 {
            term(&mut out, &mut first, c, &p.var_names[j]);
        }
    }
    if !p.quadratic.is_empty() {
        out.push_str(if first { " [" } else { " + [" });
        for (k, q) in p.quadratic.iter().enumerate() {
            let sep = if k == 0 { " " } else { " + " };
            let _ = write!(out, "{sep}{} {} ^ 2", q.weight, p.var_names[q.var]);
        }
        out.push_str(" ] / 2");
        first = false;
    }
    if constant != 0.0 || first {
        term(&mut out, &mut first, constant, "");
    }
    out.push_str("\nSubject To\n");
    for (i, row) in p.rows.iter().enumerate() {
        let name = if row.name.is_empty() { format!("r{i}") } else { row.name.clone() };
        let _ = write!(out, " {name}:");
        let mut first = true;
        for &(j, a) in &row.coeffs {
            term(&mut out, &mut first, a, &p.var_names[j]);
        }
        if first {
            out.push_str(" 0");
        }
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", row.rhs);
    }
    out.push_str("Bounds\n");
    for j in 0..p.num_vars() {
        let (lo, hi, name) = (p.lower[j], p.upper[j], &p.var_names[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
            (true, true) if lo == hi => {
                let _ = writeln!(out, " {name} = {lo}");
            }
            (true, true) => {
                let _ = writeln!(out, " {lo} <= {name} <= {hi}");
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {lo}");
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {hi}");
            }
        }
    }
    out.push_str("End\n");
    out
}
