//! Optimization routines on top of [`crate::lp`]:
//!
//! * linear programs over a probability simplex (the per-state LPs of
//!   backward induction),
//! * sampling from the version space (unit vectors inside a polyhedral cone),
//! * a heuristic for the nonconvex optimistic program
//!   `max_{x, theta, b} q_b . x` subject to `theta` in the version space and
//!   `x^T (M_b - M_b') theta >= epsilon` for every `b' != b`.
//!
//! The optimistic heuristic is not globally optimal, but every solution it
//! returns is feasible. The mistake bound of the learner only relies on
//! feasibility.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{dot, norm2, MixedStrategy};
use crate::lp::{self, Constraint, FreeOutcome, LinearProgram, Outcome, Relation};
use crate::rng::unit_sphere;

/// Tolerance on LP constraints reported as satisfied.
pub const LP_FEAS_TOL: f64 = 1e-7;
/// Sampled parameters satisfy every version-space row to this tolerance.
pub const SAMPLE_TOL: f64 = 1e-12;
/// Version-space tolerance of the optimistic solver's hard contract.
pub const THETA_TOL: f64 = 1e-9;

pub const DEFAULT_CANDIDATES: usize = 128;
pub const DEFAULT_BUDGET_FACTOR: usize = 200;

/// `max c.x` over `x` in the simplex on `support`, subject to `g.x >= h`
/// for each row. Vectors are indexed by the full leader action set.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexLp {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, f64)>,
    pub support: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpSolution {
    Optimal { x: MixedStrategy, value: f64 },
    Infeasible,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpSolution::Optimal { .. })
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LpSolution::Optimal { value, .. } => Some(*value),
            LpSolution::Infeasible => None,
        }
    }
}

pub fn solve_simplex_lp(lp: &SimplexLp) -> Result<LpSolution> {
    let n = lp.objective.len();
    if lp.support.is_empty() {
        return Err(Error::SolverError("empty support".into()));
    }
    if lp.support.iter().any(|&a| a >= n) {
        return Err(Error::SolverError("support index out of range".into()));
    }
    let sub = |v: &[f64]| -> Vec<f64> { lp.support.iter().map(|&a| v[a]).collect() };
    let rows: Vec<(Vec<f64>, f64)> = lp.rows.iter().map(|(g, h)| (sub(g), *h)).collect();
    match solve_on_support(&sub(&lp.objective), &rows)? {
        None => Ok(LpSolution::Infeasible),
        Some(y) => {
            let x = MixedStrategy::embed(n, &lp.support, &y)?;
            for (g, h) in &lp.rows {
                let lhs = dot(g, x.probs());
                if lhs < h - LP_FEAS_TOL {
                    return Err(Error::SolverError(format!(
                        "solution violates a row by {}",
                        h - lhs
                    )));
                }
            }
            let value = dot(&lp.objective, x.probs());
            Ok(LpSolution::Optimal { x, value })
        }
    }
}

/// Core of [`solve_simplex_lp`] on the compressed support coordinates.
fn solve_on_support(objective: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<Option<Vec<f64>>> {
    let k = objective.len();
    let mut constraints = Vec::with_capacity(rows.len() + 1);
    constraints.push(Constraint::new(vec![1.0; k], Relation::Eq, 1.0));
    for (g, h) in rows {
        constraints.push(Constraint::new(g.clone(), Relation::Ge, *h));
    }
    let prog = LinearProgram { objective: objective.to_vec(), constraints };
    match lp::solve(&prog)? {
        Outcome::Optimal { x, .. } => Ok(Some(x)),
        Outcome::Infeasible => Ok(None),
        Outcome::Unbounded => Err(Error::SolverError("simplex-domain LP reported unbounded".into())),
    }
}

fn satisfies(rows: &[Vec<f64>], theta: &[f64], tol: f64) -> bool {
    rows.iter().all(|c| dot(c, theta) >= -tol)
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(v);
    (n > 1e-9 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Draws up to `k` unit vectors `theta` with `c . theta >= 0` for every
/// row `c`.
///
/// Uses rejection from the uniform sphere. When the pilot acceptance rate
/// is too low to reach `k` within `budget` proposals, switches to
/// hit-and-run inside the cone-ball intersection, started from the last
/// accepted point or, if nothing was accepted, from an LP-found point.
pub fn sample_version_space<R: Rng + ?Sized>(
    rows: &[Vec<f64>],
    p: usize,
    k: usize,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    assert!(p >= 1, "dimension must be positive");
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return Ok(out);
    }
    let pilot = budget.min((10 * k).max(500));
    let mut proposals = 0;
    while out.len() < k && proposals < budget {
        let theta = unit_sphere(p, rng);
        proposals += 1;
        if satisfies(rows, &theta, SAMPLE_TOL) {
            out.push(theta);
        }
        if proposals == pilot && out.len() < k {
            let accepted = out.len();
            let needed = (k - accepted) as f64;
            let rate = accepted as f64 / proposals as f64;
            if accepted == 0 || needed / rate > (budget - proposals) as f64 {
                break;
            }
        }
    }
    if out.len() >= k {
        return Ok(out);
    }
    let start = match out.last() {
        Some(t) => Some(t.clone()),
        None => interior_seed(rows, p, rng)?,
    };
    let Some(start) = start else {
        return Err(Error::SamplingExhausted { proposals });
    };
    let needed = k - out.len();
    out.extend(hit_and_run(rows, &start, needed, rng));
    if out.is_empty() {
        return Err(Error::SamplingExhausted { proposals });
    }
    Ok(out)
}

/// A feasible unit vector found by LP, preferring the most central one.
fn interior_seed<R: Rng + ?Sized>(rows: &[Vec<f64>], p: usize, rng: &mut R) -> Result<Option<Vec<f64>>> {
    let u = 1.0 / (p as f64).sqrt();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for c in rows {
        let cn = norm2(c);
        if cn == 0.0 {
            continue;
        }
        let mut row: Vec<f64> = c.iter().map(|v| -v).collect();
        row.push(cn);
        a.push(row);
        b.push(0.0);
    }
    for j in 0..p {
        let mut up = vec![0.0; p + 1];
        up[j] = 1.0;
        let mut down = vec![0.0; p + 1];
        down[j] = -1.0;
        a.push(up);
        b.push(u);
        a.push(down);
        b.push(u);
    }
    let mut cap = vec![0.0; p + 1];
    cap[p] = 1.0;
    a.push(cap);
    b.push(1.0);
    let mut obj = vec![0.0; p + 1];
    obj[p] = 1.0;
    if let FreeOutcome::Optimal { w, value } = lp::maximize_free(&obj, &a, &b)? {
        if value > 1e-12 {
            if let Some(t) = normalized(&w[..p]).filter(|t| satisfies(rows, t, SAMPLE_TOL)) {
                return Ok(Some(t));
            }
        }
    }

    // Lower-dimensional cone: look for any non-zero point along a few directions.
    let mut a: Vec<Vec<f64>> = rows.iter().map(|c| c.iter().map(|v| -v).collect()).collect();
    let mut b = vec![0.0; rows.len()];
    for j in 0..p {
        let mut up = vec![0.0; p];
        up[j] = 1.0;
        let mut down = vec![0.0; p];
        down[j] = -1.0;
        a.push(up);
        b.push(u);
        a.push(down);
        b.push(u);
    }
    let mut directions = Vec::new();
    for j in 0..p {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; p];
            d[j] = sign;
            directions.push(d);
        }
    }
    for _ in 0..4 {
        directions.push(unit_sphere(p, rng));
    }
    for d in directions {
        if let FreeOutcome::Optimal { w, value } = lp::maximize_free(&d, &a, &b)? {
            if value > 1e-9 {
                if let Some(t) = normalized(&w).filter(|t| satisfies(rows, t, SAMPLE_TOL)) {
                    return Ok(Some(t));
                }
            }
        }
    }
    Ok(None)
}

/// Hit-and-run in `{theta : ||theta|| <= 1, C theta >= 0}`; the radial
/// projection of its stationary law is uniform on the cone's sphere cap.
fn hit_and_run<R: Rng + ?Sized>(rows: &[Vec<f64>], start: &[f64], count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    const THIN: usize = 3;
    let p = start.len();
    let fallback = normalized(start).filter(|t| satisfies(rows, t, SAMPLE_TOL));
    let mut cur: Vec<f64> = start.iter().map(|v| v * 0.5 / norm2(start)).collect();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 20 * count + 100 {
        attempts += 1;
        for _ in 0..THIN {
            let d = unit_sphere(p, rng);
            let xd = dot(&cur, &d);
            let disc = xd * xd - dot(&cur, &cur) + 1.0;
            if disc <= 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (-xd - disc.sqrt(), -xd + disc.sqrt());
            for c in rows {
                let cd = dot(c, &d);
                let cx = dot(c, &cur).max(0.0);
                if cd > 1e-300 {
                    lo = lo.max(-cx / cd);
                } else if cd < -1e-300 {
                    hi = hi.min(-cx / cd);
                }
            }
            if hi <= lo {
                continue;
            }
            let lambda = lo + (hi - lo) * rng.random::<f64>();
            let next: Vec<f64> = cur.iter().zip(&d).map(|(x, dd)| x + lambda * dd).collect();
            if norm2(&next) > 1e-9 && satisfies(rows, &next, 0.0) {
                cur = next;
            }
        }
        match normalized(&cur).filter(|t| satisfies(rows, t, SAMPLE_TOL)) {
            Some(t) => out.push(t),
            None => {
                if let Some(f) = &fallback {
                    out.push(f.clone());
                }
            }
        }
    }
    out
}

/// One instance of the optimistic program at a state.
#[derive(Clone, Debug)]
pub struct OptimisticProblem<'a> {
    /// `q_b[a] = r(s, a, b) + sum_s' P(s, a, b, s') V(s')`, one vector per `b`.
    pub objectives: Vec<Vec<f64>>,
    /// Feature matrices `[b][a][j]`; margins use `D_{b,b'} = M_b - M_b'`.
    pub features: &'a [Vec<Vec<f64>>],
    /// Version-space rows `c` with `c . theta >= 0`.
    pub constraints: &'a [Vec<f64>],
    pub epsilon: f64,
    pub support: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimisticSolution {
    pub x: MixedStrategy,
    pub theta: Vec<f64>,
    pub b: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub candidates: usize,
    pub budget: usize,
    pub alternation_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            candidates: DEFAULT_CANDIDATES,
            budget: DEFAULT_BUDGET_FACTOR * DEFAULT_CANDIDATES,
            alternation_rounds: 1,
        }
    }
}

impl<'a> OptimisticProblem<'a> {
    fn n(&self) -> usize {
        self.features[0].len()
    }

    fn m(&self) -> usize {
        self.features.len()
    }

    fn p(&self) -> usize {
        self.features[0][0].len()
    }

    /// `[b][i] = M_b[support[i]] . theta`
    fn projected(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .map(|mat| self.support.iter().map(|&a| dot(&mat[a], theta)).collect())
            .collect()
    }

    /// Best `x` for response `b` with `theta` fixed; `None` if infeasible.
    fn x_step(&self, b: usize, theta: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
        let proj = self.projected(theta);
        let mut rows = Vec::with_capacity(self.m().saturating_sub(1));
        for other in 0..self.m() {
            if other == b {
                continue;
            }
            let g: Vec<f64> = proj[b].iter().zip(&proj[other]).map(|(u, v)| u - v).collect();
            if g.iter().copied().fold(f64::NEG_INFINITY, f64::max) < self.epsilon {
                return Ok(None);
            }
            rows.push((g, self.epsilon));
        }
        let q: Vec<f64> = self.support.iter().map(|&a| self.objectives[b][a]).collect();
        Ok(solve_on_support(&q, &rows)?.map(|y| {
            let v = dot(&q, &y);
            (y, v)
        }))
    }

    /// `theta` maximizing the smallest margin of `b` under fixed `x`, over
    /// the version space intersected with the box `|theta_j| <= p^{-1/2}`,
    /// scaled to unit length.
    fn theta_step(&self, b: usize, y: &[f64]) -> Result<Option<Vec<f64>>> {
        let p = self.p();
        let u = 1.0 / (p as f64).sqrt();
        let mut a = Vec::new();
        let mut rhs = Vec::new();
        for other in 0..self.m() {
            if other == b {
                continue;
            }
            let mut row = vec![0.0; p + 1];
            for (i, &act) in self.support.iter().enumerate() {
                if y[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    row[j] -= y[i] * (self.features[b][act][j] - self.features[other][act][j]);
                }
            }
            row[p] = 1.0;
            a.push(row);
            rhs.push(0.0);
        }
        for c in self.constraints {
            let mut row: Vec<f64> = c.iter().map(|v| -v).collect();
            row.push(0.0);
            a.push(row);
            rhs.push(0.0);
        }
        for j in 0..p {
            let mut up = vec![0.0; p + 1];
            up[j] = 1.0;
            let mut down = vec![0.0; p + 1];
            down[j] = -1.0;
            a.push(up);
            rhs.push(u);
            a.push(down);
            rhs.push(u);
        }
        let mut obj = vec![0.0; p + 1];
        obj[p] = 1.0;
        match lp::maximize_free(&obj, &a, &rhs)? {
            FreeOutcome::Optimal { w, value } if value > 0.0 => Ok(normalized(&w[..p])),
            _ => Ok(None),
        }
    }

    fn meets_contract(&self, b: usize, y: &[f64], theta: &[f64]) -> bool {
        if (norm2(theta) - 1.0).abs() > 1e-9 || !satisfies(self.constraints, theta, THETA_TOL) {
            return false;
        }
        let proj = self.projected(theta);
        (0..self.m()).filter(|&o| o != b).all(|o| {
            let margin: f64 = y.iter().zip(proj[b].iter().zip(&proj[o])).map(|(yi, (u, v))| yi * (u - v)).sum();
            margin >= self.epsilon - LP_FEAS_TOL
        })
    }
}

/// Samples `opts.candidates` parameters from the version space and runs
/// [`solve_optimistic_with`].
pub fn solve_optimistic_program<R: Rng + ?Sized>(
    prob: &OptimisticProblem<'_>,
    opts: &SolverOptions,
    rng: &mut R,
) -> Result<OptimisticSolution> {
    let candidates = sample_version_space(prob.constraints, prob.p(), opts.candidates, opts.budget, rng)?;
    solve_optimistic_with(prob, &candidates, opts.alternation_rounds)
}

/// Optimistic program over a given candidate set of parameters: for every
/// candidate and response the induced simplex LP is solved; then each
/// response's incumbent is improved by alternating a max-min-margin step in
/// `theta` with a re-solve in `x`.
pub fn solve_optimistic_with(
    prob: &OptimisticProblem<'_>,
    candidates: &[Vec<f64>],
    alternation_rounds: usize,
) -> Result<OptimisticSolution> {
    if prob.epsilon <= 0.0 {
        return Err(Error::SolverError("epsilon must be positive".into()));
    }
    if prob.support.is_empty() {
        return Err(Error::SolverError("empty support".into()));
    }
    let m = prob.m();
    // (value, y, theta) per response
    let mut incumbents: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = vec![None; m];
    for theta in candidates {
        for b in 0..m {
            if let Some((y, v)) = prob.x_step(b, theta)? {
                let better = incumbents[b].as_ref().is_none_or(|(cur, _, _)| v > *cur + 1e-12);
                if better && prob.meets_contract(b, &y, theta) {
                    incumbents[b] = Some((v, y, theta.clone()));
                }
            }
        }
    }
    if m > 1 {
        for (b, slot) in incumbents.iter_mut().enumerate() {
            for _ in 0..alternation_rounds {
                let Some((value, y, _)) = slot.as_ref() else { break };
                let Some(theta) = prob.theta_step(b, y)? else { break };
                if !satisfies(prob.constraints, &theta, THETA_TOL) {
                    break;
                }
                match prob.x_step(b, &theta)? {
                    Some((y2, v2)) if v2 > value + 1e-12 && prob.meets_contract(b, &y2, &theta) => {
                        *slot = Some((v2, y2, theta));
                    }
                    _ => break,
                }
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (b, slot) in incumbents.iter().enumerate() {
        if let Some((v, _, _)) = slot {
            if best.is_none_or(|(_, cur)| *v > cur) {
                best = Some((b, *v));
            }
        }
    }
    let Some((b, _)) = best else {
        return Err(Error::AllInfeasible { epsilon: prob.epsilon });
    };
    let (_, y, theta) = incumbents[b].take().unwrap();
    let x = MixedStrategy::embed(prob.n(), prob.support, &y)?;
    let value = dot(&prob.objectives[b], x.probs());
    Ok(OptimisticSolution { x, theta, b, value })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn eye_swap() -> Vec<Vec<Vec<f64>>> {
        vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ]
    }

    #[test]
    fn unconstrained_simplex_vertex() {
        let lp = SimplexLp { objective: vec![1.0, 0.0], rows: vec![], support: vec![0, 1] };
        match solve_simplex_lp(&lp).unwrap() {
            LpSolution::Optimal { x, value } => {
                assert_eq!(x.probs(), &[1.0, 0.0]);
                assert_eq!(value, 1.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn single_row_halves_the_simplex() {
        // maximize t over x = (t, 1 - t) with 1 - t >= t -> t = 1/2
        let lp = SimplexLp { objective: vec![1.0, 0.0], rows: vec![(vec![-1.0, 1.0], 0.0)], support: vec![0, 1] };
        let sol = solve_simplex_lp(&lp).unwrap();
        assert!((sol.value().unwrap() - 0.5).abs() < 1e-12);
        let lp = SimplexLp { objective: vec![1.0, 0.0], rows: vec![(vec![1.0, 1.0], 2.0)], support: vec![0, 1] };
        assert_eq!(solve_simplex_lp(&lp).unwrap(), LpSolution::Infeasible);
    }

    #[test]
    fn support_masks_actions() {
        let lp = SimplexLp { objective: vec![5.0, 1.0, 2.0], rows: vec![], support: vec![1, 2] };
        match solve_simplex_lp(&lp).unwrap() {
            LpSolution::Optimal { x, value } => {
                assert_eq!(x.probs(), &[0.0, 0.0, 1.0]);
                assert_eq!(value, 2.0);
            }
            _ => panic!(),
        }
    }

    /// Enumerates basic solutions of `{sum x = 1, G x >= h, x >= 0}`.
    fn vertex_oracle(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<f64> {
        let k = c.len();
        // candidate active sets: choose k-1 of (rows as equalities) + (x_i = 0)
        let mut cons: Vec<(Vec<f64>, f64)> = rows.to_vec();
        for i in 0..k {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            cons.push((e, 0.0));
        }
        let total = cons.len();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..k - 1).collect();
        loop {
            let mut a: Vec<Vec<f64>> = vec![vec![1.0; k]];
            let mut rhs = vec![1.0];
            for &i in &idx {
                a.push(cons[i].0.clone());
                rhs.push(cons[i].1);
            }
            if let Some(x) = gauss(a, rhs) {
                let ok = x.iter().all(|&v| v >= -1e-9)
                    && rows.iter().all(|(g, h)| dot(g, &x) >= h - 1e-9);
                if ok {
                    let v = dot(c, &x);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            // next combination
            let mut i = k as isize - 2;
            while i >= 0 && idx[i as usize] == total - (k - 1) + i as usize {
                i -= 1;
            }
            if i < 0 {
                break;
            }
            idx[i as usize] += 1;
            for j in i as usize + 1..k - 1 {
                idx[j] = idx[j - 1] + 1;
            }
        }
        best
    }

    fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for cc in col..n {
                        a[r][cc] -= f * a[col][cc];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    proptest! {
        #[test]
        fn lp_matches_vertex_enumeration(
            c in proptest::collection::vec(-1.0f64..1.0, 3),
            g in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 0..3),
            h in proptest::collection::vec(-0.3f64..0.3, 3),
        ) {
            let rows: Vec<(Vec<f64>, f64)> = g.iter().cloned().zip(h.iter().copied()).collect();
            let lp = SimplexLp { objective: c.clone(), rows: rows.clone(), support: vec![0, 1, 2] };
            let got = solve_simplex_lp(&lp).unwrap();
            let want = vertex_oracle(&c, &rows);
            match (got, want) {
                (LpSolution::Optimal { x, value }, Some(w)) => {
                    prop_assert!((value - w).abs() < 1e-6, "lp {} oracle {}", value, w);
                    prop_assert!((value - dot(&c, x.probs())).abs() < 1e-12);
                    for (gg, hh) in &rows {
                        prop_assert!(dot(gg, x.probs()) >= hh - LP_FEAS_TOL);
                    }
                }
                (LpSolution::Infeasible, None) => {}
                (got, want) => prop_assert!(false, "lp {:?} oracle {:?}", got, want),
            }
        }

        #[test]
        fn extra_row_never_increases_optimum(
            c in proptest::collection::vec(-1.0f64..1.0, 4),
            g in proptest::collection::vec(-1.0f64..1.0, 4),
            h in -0.5f64..0.5,
        ) {
            let base = SimplexLp { objective: c.clone(), rows: vec![], support: vec![0, 1, 2, 3] };
            let v0 = solve_simplex_lp(&base).unwrap().value().unwrap();
            let tight = SimplexLp { rows: vec![(g, h)], ..base };
            if let Some(v1) = solve_simplex_lp(&tight).unwrap().value() {
                prop_assert!(v1 <= v0 + 1e-12);
            }
        }
    }

    #[test]
    fn sampling_without_constraints() {
        let mut rng = stream(1, 0);
        let s = sample_version_space(&[], 3, 5, 1000, &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        for t in &s {
            assert!((norm2(t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_a_single_ray() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]];
        let mut rng = stream(2, 0);
        let s = sample_version_space(&rows, 2, 8, 2000, &mut rng).unwrap();
        assert!(!s.is_empty());
        for t in &s {
            assert!(t[0].abs() < 1e-9 && (t[1] - 1.0).abs() < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn sampling_an_empty_region_is_exhausted() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let mut rng = stream(3, 0);
        assert!(matches!(
            sample_version_space(&rows, 2, 4, 2000, &mut rng),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn sampling_a_thin_cone_uses_hit_and_run() {
        // cone of half-angle ~0.01 rad around (1, 0, 0)
        let a = 0.01f64;
        let rows = vec![
            vec![a.sin(), a.cos(), 0.0],
            vec![a.sin(), -a.cos(), 0.0],
            vec![a.sin(), 0.0, a.cos()],
            vec![a.sin(), 0.0, -a.cos()],
        ];
        let mut rng = stream(4, 0);
        let s = sample_version_space(&rows, 3, 64, 64 * 200, &mut rng).unwrap();
        assert_eq!(s.len(), 64);
        for t in &s {
            assert!(satisfies(&rows, t, SAMPLE_TOL));
            assert!((norm2(t) - 1.0).abs() < 1e-12);
        }
        // not all identical
        assert!(s.iter().any(|t| (t[1] - s[0][1]).abs() > 1e-6));
    }

    fn toy_problem<'a>(feats: &'a [Vec<Vec<f64>>], eps: f64, support: &'a [usize]) -> OptimisticProblem<'a> {
        OptimisticProblem {
            objectives: vec![vec![0.2, 0.8], vec![0.0, 0.0]],
            features: feats,
            constraints: &[],
            epsilon: eps,
            support,
        }
    }

    /// Sweeps theta = (cos a, sin a) and solves the x-LP for every response.
    pub(crate) fn angle_grid_oracle(prob: &OptimisticProblem<'_>, steps: usize) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..steps {
            let ang = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
            let theta = [ang.cos(), ang.sin()];
            if !satisfies(prob.constraints, &theta, 0.0) {
                continue;
            }
            for b in 0..prob.features.len() {
                let rows = (0..prob.features.len())
                    .filter(|&o| o != b)
                    .map(|o| {
                        let g: Vec<f64> = (0..prob.n())
                            .map(|a| {
                                (0..2)
                                    .map(|j| (prob.features[b][a][j] - prob.features[o][a][j]) * theta[j])
                                    .sum()
                            })
                            .collect();
                        (g, prob.epsilon)
                    })
                    .collect();
                let lp = SimplexLp { objective: prob.objectives[b].clone(), rows, support: prob.support.to_vec() };
                if let Some(v) = solve_simplex_lp(&lp).unwrap().value() {
                    best = Some(best.map_or(v, |c: f64| c.max(v)));
                }
            }
        }
        best
    }

    #[test]
    fn single_response_reduces_to_plain_lp() {
        let feats = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let support = [0usize, 1];
        let prob = OptimisticProblem {
            objectives: vec![vec![0.3, 0.7]],
            features: &feats,
            constraints: &[],
            epsilon: 0.1,
            support: &support,
        };
        let mut rng = stream(5, 0);
        let sol = solve_optimistic_program(&prob, &SolverOptions::default(), &mut rng).unwrap();
        assert_eq!(sol.b, 0);
        assert!((sol.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn toy_program_matches_angle_grid() {
        let feats = eye_swap();
        let support = [0usize, 1];
        let prob = toy_problem(&feats, 0.1, &support);
        let oracle = angle_grid_oracle(&prob, 10_000).unwrap();
        let mut rng = stream(6, 0);
        let sol = solve_optimistic_program(&prob, &SolverOptions::default(), &mut rng).unwrap();
        assert!(sol.value >= oracle - 1e-3, "heuristic {} oracle {}", sol.value, oracle);
        assert!(sol.value <= oracle + 1e-3);
        assert!(prob.meets_contract(sol.b, sol.x.probs(), &sol.theta));
    }

    #[test]
    fn huge_margin_is_infeasible() {
        let feats: Vec<Vec<Vec<f64>>> = eye_swap()
            .into_iter()
            .map(|m| m.into_iter().map(|r| r.into_iter().map(|v| v / 2f64.sqrt() / 2f64.sqrt()).collect()).collect())
            .collect();
        let support = [0usize, 1];
        let prob = toy_problem(&feats, 10.0, &support);
        let mut rng = stream(7, 0);
        assert!(matches!(
            solve_optimistic_program(&prob, &SolverOptions::default(), &mut rng),
            Err(Error::AllInfeasible { .. })
        ));
    }

    #[test]
    fn hard_contract_holds_with_constraints() {
        let feats = eye_swap();
        let support = [0usize, 1];
        let cons = vec![vec![1.0, -0.2], vec![0.3, 1.0]];
        let prob = OptimisticProblem { constraints: &cons, ..toy_problem(&feats, 0.05, &support) };
        for seed in 0..10 {
            let mut rng = stream(seed, 0);
            let sol = solve_optimistic_program(&prob, &SolverOptions::default(), &mut rng).unwrap();
            assert!(prob.meets_contract(sol.b, sol.x.probs(), &sol.theta));
            assert!(satisfies(&cons, &sol.theta, THETA_TOL));
            let oracle = angle_grid_oracle(&prob, 10_000).unwrap();
            assert!(sol.value >= oracle - 1e-3, "seed {seed}: {} vs {}", sol.value, oracle);
        }
    }
}
