//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Sized for schedule programs of a few dozen variables. Every variable needs
//! a finite lower bound; upper bounds may be infinite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pivot and reduced-cost tolerance.
pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("infeasible; violated constraints: {}", violated.join(", "))]
    Infeasible { violated: Vec<String> },
    #[error("objective unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
    pub label: String,
}

/// Maximize `objective · x` subject to the constraint rows and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    /// `n` variables in `[0, ∞)` with a zero objective.
    pub fn new(n: usize) -> Self {
        Self { objective: vec![0.0; n], constraints: Vec::new(), lower: vec![0.0; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64, label: impl Into<String>) {
        self.constraints.push(Constraint { coeffs, relation, rhs, label: label.into() });
    }

    /// Sparse helper: `terms` are `(variable, coefficient)` pairs.
    pub fn add_terms(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64, label: impl Into<String>) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add(coeffs, relation, rhs, label);
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!("{n} variables but {} / {} bounds", self.lower.len(), self.upper.len())));
        }
        if let Some(c) = self.constraints.iter().find(|c| c.coeffs.len() != n) {
            return Err(LpError::Dimension(format!("constraint {:?} has {} coefficients, expected {n}", c.label, c.coeffs.len())));
        }
        if let Some(j) = self.lower.iter().position(|l| !l.is_finite()) {
            return Err(LpError::Dimension(format!("variable {j} needs a finite lower bound")));
        }
        Ok(())
    }

    /// Labels of constraints and bounds violated by `x` beyond `tol`.
    pub fn violations(&self, x: &[f64], tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let ok = match c.relation {
                Relation::Le => lhs <= c.rhs + tol,
                Relation::Ge => lhs >= c.rhs - tol,
                Relation::Eq => (lhs - c.rhs).abs() <= tol,
            };
            if !ok {
                out.push(c.label.clone());
            }
        }
        for (j, &v) in x.iter().enumerate() {
            if v < self.lower[j] - tol || v > self.upper[j] + tol {
                out.push(format!("bounds of x{j}"));
            }
        }
        out
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    labels: Vec<String>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|a| *a /= p);
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (a, b) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                self.rows[i][col] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        self.basis[r] = col;
    }

    /// Maximizes `cost · x` over columns `< allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<(), LpError> {
        loop {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j] - self.basis.iter().zip(&self.rows).map(|(&b, row)| cost[b] * row[j]).sum::<f64>();
                reduced > PIVOT_TOL
            });
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    let better = match leave {
                        None => true,
                        Some((k, best)) => ratio < best - PIVOT_TOL || (ratio <= best + PIVOT_TOL && self.basis[i] < self.basis[k]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else { return Err(LpError::Unbounded) };
            self.pivot(r, col);
        }
    }
}

/// Returns an optimal basic feasible solution.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.num_vars();
    let inverted: Vec<String> = (0..n).filter(|&j| lp.upper[j] < lp.lower[j]).map(|j| format!("bounds of x{j}")).collect();
    if !inverted.is_empty() {
        return Err(LpError::Infeasible { violated: inverted });
    }

    // shift x = lower + y so that y ≥ 0
    let mut raw: Vec<(Vec<f64>, Relation, f64, String)> = Vec::new();
    for c in &lp.constraints {
        let shift: f64 = c.coeffs.iter().zip(&lp.lower).map(|(a, l)| a * l).sum();
        raw.push((c.coeffs.clone(), c.relation, c.rhs - shift, c.label.clone()));
    }
    for j in (0..n).filter(|&j| lp.upper[j].is_finite()) {
        let mut coeffs = vec![0.0; n];
        coeffs[j] = 1.0;
        raw.push((coeffs, Relation::Le, lp.upper[j] - lp.lower[j], format!("upper bound of x{j}")));
    }
    for (coeffs, rel, b, _) in &mut raw {
        if *b < 0.0 {
            coeffs.iter_mut().for_each(|a| *a = -*a);
            *b = -*b;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = raw.len();
    let n_slack = raw.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = raw.iter().filter(|r| r.1 != Relation::Le).count();
    let art_start = n + n_slack;
    let width = art_start + n_art;
    let mut tab = Tableau { rows: Vec::with_capacity(m), rhs: Vec::with_capacity(m), basis: Vec::with_capacity(m), labels: Vec::new() };
    let (mut s, mut a) = (n, art_start);
    for (coeffs, rel, b, label) in raw {
        let mut row = vec![0.0; width];
        row[..n].copy_from_slice(&coeffs);
        let basic = match rel {
            Relation::Le => {
                row[s] = 1.0;
                s += 1;
                s - 1
            }
            Relation::Ge => {
                row[s] = -1.0;
                row[a] = 1.0;
                s += 1;
                a += 1;
                a - 1
            }
            Relation::Eq => {
                row[a] = 1.0;
                a += 1;
                a - 1
            }
        };
        tab.rows.push(row);
        tab.rhs.push(b);
        tab.basis.push(basic);
        tab.labels.push(label);
    }

    if n_art > 0 {
        let mut cost = vec![0.0; width];
        cost[art_start..].iter_mut().for_each(|c| *c = -1.0);
        tab.optimize(&cost, width)?;
        let scale = 1.0 + tab.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let residual: f64 = (0..m).filter(|&i| tab.basis[i] >= art_start).map(|i| tab.rhs[i]).sum();
        if residual > 1e-9 * scale {
            let violated = (0..m)
                .filter(|&i| tab.basis[i] >= art_start && tab.rhs[i] > 1e-9 * scale)
                .map(|i| tab.labels[i].clone())
                .collect();
            return Err(LpError::Infeasible { violated });
        }
        // drive remaining zero-level artificials out; drop redundant rows
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.rows.remove(i);
                        tab.rhs.remove(i);
                        tab.basis.remove(i);
                        tab.labels.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(&lp.objective);
    tab.optimize(&cost, art_start)?;

    let mut x = lp.lower.clone();
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] += tab.rhs[i];
        }
    }
    Ok(LpSolution { objective: lp.objective_at(&x), x })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_corner() {
        let mut lp = LinearProgram::new(1);
        lp.objective[0] = 1.0;
        lp.upper[0] = 1.0;
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.x, vec![1.0]);
    }

    #[test]
    fn classic_two_variable() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0, "a");
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0, "b");
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0, "c");
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_reports_labels() {
        let mut lp = LinearProgram::new(1);
        lp.upper[0] = 100.0;
        lp.add(vec![1.0], Relation::Ge, 9.0, "window lower");
        lp.add(vec![1.0], Relation::Le, 8.0, "window upper");
        match solve_lp(&lp) {
            Err(LpError::Infeasible { violated }) => assert!(!violated.is_empty()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add(vec![1.0, -1.0], Relation::Le, 1.0, "gap");
        assert_eq!(solve_lp(&lp), Err(LpError::Unbounded));
    }

    #[test]
    fn redundant_equalities_and_shifted_bounds() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, 1.0];
        lp.lower = vec![-5.0, -5.0];
        lp.upper = vec![5.0, 5.0];
        lp.add(vec![1.0, 1.0], Relation::Eq, 2.0, "sum");
        lp.add(vec![2.0, 2.0], Relation::Eq, 4.0, "sum twice");
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] + 3.0).abs() < 1e-9 && (s.x[1] - 5.0).abs() < 1e-9, "{:?}", s.x);
    }

    #[test]
    fn dimension_errors() {
        let mut lp = LinearProgram::new(2);
        lp.add(vec![1.0], Relation::Le, 1.0, "short");
        assert!(matches!(solve_lp(&lp), Err(LpError::Dimension(_))));
    }
}
