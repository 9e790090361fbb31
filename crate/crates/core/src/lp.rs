//! Dense two-phase primal simplex.
//!
//! Problems are converted to `min c'x, Ax = b, x >= 0` by shifting or
//! splitting variables and adding slack, surplus and artificial columns.
//! Pivoting follows Bland's rule in both phases: the entering column is the
//! lowest-index column with negative reduced cost and ratio-test ties go to
//! the lowest-index basic variable. Sizes here are tiny, so the whole
//! tableau is kept dense.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub n_vars: usize,
    pub direction: Direction,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// `(lower, upper)` per variable; infinities allowed.
    pub bounds: Vec<(f64, f64)>,
}

impl LpProblem {
    /// A problem with nonnegative variables and no constraints.
    pub fn new(direction: Direction, objective: Vec<f64>) -> Self {
        let n_vars = objective.len();
        LpProblem {
            n_vars,
            direction,
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n_vars],
        }
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.bounds[var] = (lower, upper);
        self
    }

    pub fn set_all_free(&mut self) -> &mut Self {
        self.bounds.iter_mut().for_each(|b| *b = (f64::NEG_INFINITY, f64::INFINITY));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.n_vars || self.bounds.len() != self.n_vars {
            return Err(Error::InvalidArgument(format!(
                "objective/bounds length must equal n_vars = {}",
                self.n_vars
            )));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != self.n_vars {
                return Err(Error::InvalidArgument(format!(
                    "constraint {i} has {} coefficients, expected {}",
                    c.coeffs.len(),
                    self.n_vars
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidArgument(format!("constraint {i} is not finite")));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "variable {j} has empty bounds [{lo}, {hi}]"
                )));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("objective is not finite".into()));
        }
        Ok(())
    }

    /// Default pivot budget: `100 * (n_vars + n_constraints)`.
    pub fn default_pivot_limit(&self) -> usize {
        100 * (self.n_vars + self.constraints.len())
    }

    /// Minimal CPLEX-LP style listing.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let term_list = |coeffs: &[f64]| -> String {
            let mut s = String::new();
            for (j, &a) in coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                if s.is_empty() {
                    let _ = write!(s, "{a} x{j}");
                } else if a < 0.0 {
                    let _ = write!(s, " - {} x{j}", -a);
                } else {
                    let _ = write!(s, " + {a} x{j}");
                }
            }
            if s.is_empty() {
                s.push('0');
            }
            s
        };
        out.push_str(match self.direction {
            Direction::Min => "Minimize\n",
            Direction::Max => "Maximize\n",
        });
        let _ = writeln!(out, " obj: {}", term_list(&self.objective));
        out.push_str("Subject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " c{i}: {} {op} {}", term_list(&c.coeffs), c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " x{j} free");
                }
                (true, false) => {
                    let _ = writeln!(out, " x{j} >= {lo}");
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= x{j} <= {hi}");
                }
                (true, true) => {
                    let _ = writeln!(out, " {lo} <= x{j} <= {hi}");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal value; `NaN` when infeasible, `-inf`/`+inf` when unbounded.
    pub objective_value: f64,
    /// Empty unless optimal.
    pub point: Vec<f64>,
    /// Sensitivity of the optimum to each constraint's right-hand side.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable maps onto standard-form columns.
enum VarMap {
    /// `x = offset + sign * col`
    Single { col: usize, sign: f64, offset: f64 },
    /// `x = plus - minus`
    Split { plus: usize, minus: usize },
}

struct Tableau {
    /// `m` rows of `B^-1 [A | b]`; the last entry of each row is the rhs.
    rows: Vec<Vec<f64>>,
    /// Reduced costs with `-z` in the last slot.
    reduced: Vec<f64>,
    basis: Vec<usize>,
    n_cols: usize,
    pivots: usize,
    limit: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.n_cols]
    }

    fn price(&mut self, cost: &[f64]) {
        let mut r: Vec<f64> = cost.to_vec();
        r.push(0.0);
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb != 0.0 {
                for (rj, tij) in r.iter_mut().zip(&self.rows[i]) {
                    *rj -= cb * tij;
                }
            }
        }
        self.reduced = r;
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let piv = self.rows[pr][pc];
        self.rows[pr].iter_mut().for_each(|v| *v /= piv);
        self.rows[pr][pc] = 1.0;
        let prow = self.rows[pr].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == pr {
                continue;
            }
            let f = row[pc];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.reduced[pc];
        if f != 0.0 {
            for (v, p) in self.reduced.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.reduced[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Bland's-rule simplex over columns `< enter_limit`.
    fn run(&mut self, enter_limit: usize) -> Result<Outcome> {
        loop {
            let Some(pc) = (0..enter_limit).find(|&j| self.reduced[j] < -OPTIMALITY_TOL) else {
                return Ok(Outcome::Optimal);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][pc];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((pr, _)) = best else {
                return Ok(Outcome::Unbounded);
            };
            if self.pivots >= self.limit {
                return Err(Error::IterationLimit(self.limit));
            }
            self.pivot(pr, pc);
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    solve_lp_with_limit(problem, problem.default_pivot_limit())
}

pub fn solve_lp_with_limit(problem: &LpProblem, pivot_limit: usize) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.n_vars;

    // variable substitution
    let mut maps = Vec::with_capacity(n);
    let mut n_struct = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &problem.bounds {
        let m = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((n_struct, hi - lo));
            }
            VarMap::Single { col: n_struct, sign: 1.0, offset: lo }
        } else if hi.is_finite() {
            VarMap::Single { col: n_struct, sign: -1.0, offset: hi }
        } else {
            n_struct += 1;
            VarMap::Split { plus: n_struct - 1, minus: n_struct }
        };
        n_struct += 1;
        maps.push(m);
    }

    // rows over structural columns, with senses
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
    for c in &problem.constraints {
        let mut row = vec![0.0; n_struct];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            match maps[j] {
                VarMap::Single { col, sign, offset } => {
                    row[col] += a * sign;
                    rhs -= a * offset;
                }
                VarMap::Split { plus, minus } => {
                    row[plus] += a;
                    row[minus] -= a;
                }
            }
        }
        rows.push((row, c.sense, rhs));
    }
    for &(col, width) in &bound_rows {
        let mut row = vec![0.0; n_struct];
        row[col] = 1.0;
        rows.push((row, Sense::Le, width));
    }
    let m = rows.len();

    let mut std_cost = vec![0.0; n_struct];
    let dir_sign = match problem.direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    for (j, &c) in problem.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Single { col, sign, .. } => std_cost[col] += dir_sign * c * sign,
            VarMap::Split { plus, minus } => {
                std_cost[plus] += dir_sign * c;
                std_cost[minus] -= dir_sign * c;
            }
        }
    }

    // columns: structural | slack/surplus | artificial
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let mut row_sign = vec![1.0; m];
    let mut slack_col: Vec<Option<usize>> = vec![None; m];
    let mut next_slack = n_struct;
    let mut needs_art = Vec::new();
    for (i, (_, sense, rhs)) in rows.iter().enumerate() {
        if *sense != Sense::Eq {
            slack_col[i] = Some(next_slack);
            next_slack += 1;
        }
        if *rhs < 0.0 {
            row_sign[i] = -1.0;
        }
        let slack_coeff = match sense {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
            Sense::Eq => 0.0,
        } * row_sign[i];
        if slack_coeff != 1.0 {
            needs_art.push(i);
        }
    }
    let first_art = n_struct + n_slack;
    let n_cols = first_art + needs_art.len();
    let mut tab_rows = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    // identity column of each row in the starting basis, used to read duals
    let mut unit_col = vec![0usize; m];
    let mut art_iter = first_art;
    for (i, (row, sense, rhs)) in rows.iter().enumerate() {
        let s = row_sign[i];
        let mut t = vec![0.0; n_cols + 1];
        for (tj, a) in t.iter_mut().zip(row) {
            *tj = s * a;
        }
        if let Some(sc) = slack_col[i] {
            t[sc] = s * if *sense == Sense::Le { 1.0 } else { -1.0 };
        }
        t[n_cols] = s * rhs;
        if needs_art.contains(&i) {
            t[art_iter] = 1.0;
            basis[i] = art_iter;
            art_iter += 1;
        } else {
            basis[i] = slack_col[i].expect("slack-started rows have a slack");
        }
        unit_col[i] = basis[i];
        tab_rows.push(t);
    }
    let mut tab = Tableau {
        rows: tab_rows,
        reduced: Vec::new(),
        basis,
        n_cols,
        pivots: 0,
        limit: pivot_limit,
    };

    // phase one
    if first_art < n_cols {
        let mut c1 = vec![0.0; n_cols];
        c1[first_art..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&c1);
        tab.run(n_cols)?;
        let infeas = -tab.reduced[n_cols];
        let scale = rows.iter().map(|r| r.2.abs()).fold(1.0, f64::max);
        if infeas > FEASIBILITY_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective_value: f64::NAN,
                point: Vec::new(),
                duals: Vec::new(),
                pivots: tab.pivots,
            });
        }
        // drive zero-level artificials out of the basis; drop redundant rows
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= first_art {
                match (0..first_art).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL) {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // phase two
    let mut c2 = std_cost.clone();
    c2.resize(n_cols, 0.0);
    tab.price(&c2);
    let outcome = tab.run(first_art)?;
    if let Outcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective_value: match problem.direction {
                Direction::Min => f64::NEG_INFINITY,
                Direction::Max => f64::INFINITY,
            },
            point: Vec::new(),
            duals: Vec::new(),
            pivots: tab.pivots,
        });
    }

    let mut std_x = vec![0.0; n_cols];
    for (i, &bv) in tab.basis.iter().enumerate() {
        std_x[bv] = tab.rhs(i);
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|mp| match *mp {
            VarMap::Single { col, sign, offset } => offset + sign * std_x[col],
            VarMap::Split { plus, minus } => std_x[plus] - std_x[minus],
        })
        .collect();
    let objective_value = problem
        .objective
        .iter()
        .zip(&point)
        .map(|(c, x)| c * x)
        .sum();
    // y_i = c_unit - r_unit with c_unit = 0 in phase two
    let duals = (0..problem.constraints.len())
        .map(|i| {
            let y = -tab.reduced[unit_col[i]];
            dir_sign * row_sign[i] * y + 0.0
        })
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value,
        point,
        duals,
        pivots: tab.pivots,
    })
}
