//! Dense two-phase tableau simplex.
//!
//! Sized for the small problems this crate generates (tens of variables,
//! at most a few hundred rows). Entering columns follow Dantzig's rule and
//! fall back to Bland's rule after a run of degenerate pivots; leaving rows
//! break ratio ties by lowest basic index, so results are deterministic.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_SWITCH: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Constraint { coeffs, relation, rhs }
    }
}

/// `max c.x` subject to the constraints and `x >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Optimal {
        x: Vec<f64>,
        value: f64,
        /// Sensitivity of the optimum to each constraint's right-hand side.
        duals: Vec<f64>,
    },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let piv = self.rows[pr][pc];
        for v in self.rows[pr].iter_mut() {
            *v /= piv;
        }
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
        let f = self.obj[pc];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let mut obj = vec![0.0; self.cols + 1];
        obj[..self.cols].copy_from_slice(costs);
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = costs[bv];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.rows[i]) {
                    *o -= cb * v;
                }
            }
        }
        self.obj = obj;
    }

    /// Runs primal simplex on the current objective. `allowed` masks the
    /// columns that may enter. Returns false if unbounded.
    fn optimize(&mut self, allowed: &[bool], max_iter: usize) -> Result<bool> {
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = COST_TOL;
            for j in 0..self.cols {
                if !allowed[j] || self.obj[j] <= COST_TOL {
                    continue;
                }
                if bland {
                    enter = Some(j);
                    break;
                }
                if self.obj[j] > best {
                    best = self.obj[j];
                    enter = Some(j);
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][pc];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - 1e-12 || (ratio <= r + 1e-12 && self.basis[i] < self.basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
            let Some((pr, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc);
        }
        Err(Error::SolverError(format!("simplex did not converge in {max_iter} pivots")))
    }
}

pub fn solve(lp: &LinearProgram) -> Result<Outcome> {
    let nv = lp.objective.len();
    let nr = lp.constraints.len();
    if lp.objective.iter().any(|c| !c.is_finite()) {
        return Err(Error::SolverError("non-finite objective".into()));
    }
    for c in &lp.constraints {
        if c.coeffs.len() != nv {
            return Err(Error::SolverError(format!(
                "constraint has {} coefficients, expected {nv}",
                c.coeffs.len()
            )));
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverError("non-finite constraint".into()));
        }
    }

    // Normalize to non-negative right-hand sides.
    let mut signs = Vec::with_capacity(nr);
    let mut rels = Vec::with_capacity(nr);
    for c in &lp.constraints {
        if c.rhs < 0.0 {
            signs.push(-1.0);
            rels.push(match c.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            });
        } else {
            signs.push(1.0);
            rels.push(c.relation);
        }
    }

    // Column layout: originals | slack/surplus | artificials.
    let n_slack = rels.iter().filter(|r| **r != Relation::Eq).count();
    let n_art = rels.iter().filter(|r| **r != Relation::Le).count();
    let cols = nv + n_slack + n_art;
    let mut rows = vec![vec![0.0; cols + 1]; nr];
    let mut basis = vec![0usize; nr];
    let mut init_col = vec![0usize; nr];
    let mut is_art = vec![false; cols];
    let (mut si, mut ai) = (nv, nv + n_slack);
    for (i, c) in lp.constraints.iter().enumerate() {
        let sg = signs[i];
        for (j, v) in c.coeffs.iter().enumerate() {
            rows[i][j] = sg * v;
        }
        rows[i][cols] = sg * c.rhs;
        match rels[i] {
            Relation::Le => {
                rows[i][si] = 1.0;
                basis[i] = si;
                init_col[i] = si;
                si += 1;
            }
            Relation::Ge => {
                rows[i][si] = -1.0;
                si += 1;
                rows[i][ai] = 1.0;
                basis[i] = ai;
                init_col[i] = ai;
                is_art[ai] = true;
                ai += 1;
            }
            Relation::Eq => {
                rows[i][ai] = 1.0;
                basis[i] = ai;
                init_col[i] = ai;
                is_art[ai] = true;
                ai += 1;
            }
        }
    }
    let mut t = Tableau { rows, obj: vec![0.0; cols + 1], basis, cols };
    let max_iter = 50 * (cols + nr) + 1000;

    if n_art > 0 {
        let costs: Vec<f64> = (0..cols).map(|j| if is_art[j] { -1.0 } else { 0.0 }).collect();
        t.set_objective(&costs);
        let all = vec![true; cols];
        t.optimize(&all, max_iter)?;
        let infeas: f64 = (0..nr).filter(|&i| is_art[t.basis[i]]).map(|i| t.rhs(i)).sum();
        let scale = 1.0 + lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return Ok(Outcome::Infeasible);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..nr {
            if !is_art[t.basis[i]] {
                continue;
            }
            if let Some(j) = (0..cols)
                .filter(|&j| !is_art[j])
                .max_by(|&a, &b| t.rows[i][a].abs().total_cmp(&t.rows[i][b].abs()).then(b.cmp(&a)))
                .filter(|&j| t.rows[i][j].abs() > 1e-9)
            {
                t.pivot(i, j);
            }
        }
    }

    let mut costs = vec![0.0; cols];
    costs[..nv].copy_from_slice(&lp.objective);
    t.set_objective(&costs);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art[j]).collect();
    if !t.optimize(&allowed, max_iter)? {
        return Ok(Outcome::Unbounded);
    }

    let mut x = vec![0.0; nv];
    for (i, &bv) in t.basis.iter().enumerate() {
        if bv < nv {
            x[bv] = t.rhs(i).max(0.0);
        }
    }
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    let duals = (0..nr)
        .map(|i| {
            let y: f64 = t
                .basis
                .iter()
                .enumerate()
                .map(|(k, &bv)| costs[bv] * t.rows[k][init_col[i]])
                .sum();
            signs[i] * y
        })
        .collect();
    Ok(Outcome::Optimal { x, value, duals })
}

/// Outcome of [`maximize_free`].
#[derive(Clone, Debug, PartialEq)]
pub enum FreeOutcome {
    Optimal { w: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// `max c.w` over free `w` subject to `A w <= b`.
///
/// Solved through its dual `min b.y, A^T y = c, y >= 0`, whose tableau has
/// one row per variable rather than one per constraint. That keeps the
/// many-rows, few-variables problems on the version space cheap.
pub fn maximize_free(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<FreeOutcome> {
    let d = c.len();
    let k = a.len();
    let dual = LinearProgram {
        objective: b.iter().map(|v| -v).collect(),
        constraints: (0..d)
            .map(|j| Constraint::new((0..k).map(|i| a[i][j]).collect(), Relation::Eq, c[j]))
            .collect(),
    };
    match solve(&dual)? {
        Outcome::Optimal { duals, .. } => {
            let w: Vec<f64> = duals.iter().map(|v| -v).collect();
            let value = w.iter().zip(c).map(|(x, y)| x * y).sum();
            Ok(FreeOutcome::Optimal { w, value })
        }
        Outcome::Unbounded => Ok(FreeOutcome::Infeasible),
        Outcome::Infeasible => Ok(FreeOutcome::Unbounded),
    }
}
