//! Dense bounded-variable primal simplex.
//!
//! Problems are `max c.x` subject to `A x <= b` and `l <= x <= u`, with
//! infinite bounds allowed. A slack `s = b - A x >= 0` is attached to every
//! row. The solver keeps a condensed dictionary `x_B = beta + D x_N`, so a
//! pivot costs `O(rows * cols)`: cheap for the tall problems with many cut
//! rows and a handful of variables that the transition steps produce.
//!
//! Phase 1 maximizes minus the sum of bound violations of the basic
//! variables, phase 2 the objective. Entering variables are priced with
//! Dantzig's rule; after a run of degenerate pivots the solver switches to
//! Bland's rule, which cannot cycle.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::price_models::ForwardModel;
use crate::storage::StorageSpec;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// `max objective.x` with every variable in `[0, inf)` and no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds `coeffs . x <= rhs`.
    pub fn add_row(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.rows.push(coeffs);
        self.rhs.push(rhs);
        self
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n || self.rhs.len() != self.rows.len() {
            return Err(invalid("inconsistent LP dimensions"));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite objective coefficient"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != n {
                return Err(invalid(format!("row {i} has {} coefficients, expected {n}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) || !self.rhs[i].is_finite() {
                return Err(invalid(format!("row {i} has a non-finite entry")));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(invalid(format!("variable {j} has invalid bounds [{l}, {u}]")));
            }
        }
        Ok(())
    }

    /// Plain-text listing for debugging.
    pub fn listing(&self) -> String {
        let term = |c: f64, j: usize| format!("{c:+} x{j}");
        let mut s = String::from("maximize\n ");
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(s, " {}", term(c, j));
            }
        }
        s.push_str("\nsubject to\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{i}:");
            for (j, &c) in r.iter().enumerate() {
                if c != 0.0 {
                    let _ = write!(s, " {}", term(c, j));
                }
            }
            let _ = writeln!(s, " <= {}", self.rhs[i]);
        }
        s.push_str("bounds\n");
        for j in 0..self.n_vars() {
            let _ = writeln!(s, " {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

/// Final basis, reusable as a warm start for a problem of the same shape.
/// Variables `0..n` are structural, `n..n+m` the row slacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row prices; zero for rows whose slack is basic.
    pub duals: Vec<f64>,
    /// `c - A^T y` for structural variables.
    pub reduced_costs: Vec<f64>,
    /// Rows satisfied with equality (nonbasic slack).
    pub active_rows: Vec<usize>,
    pub iterations: usize,
    pub basis: Basis,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pos {
    Basic(usize),
    Nonbasic(usize),
}

struct Simplex {
    m: usize,
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    val: Vec<f64>,
    basic: Vec<usize>,
    nonbasic: Vec<usize>,
    pos: Vec<Pos>,
    /// `m x n` row-major dictionary over the nonbasic columns.
    d: Vec<f64>,
    beta: Vec<f64>,
    iterations: usize,
    bland: bool,
    degenerate: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Simplex {
    fn new(p: &LpProblem) -> Self {
        let (m, n) = (p.n_rows(), p.n_vars());
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        lo.extend(std::iter::repeat(0.0).take(m));
        hi.extend(std::iter::repeat(f64::INFINITY).take(m));
        let mut cost = p.objective.clone();
        cost.extend(std::iter::repeat(0.0).take(m));
        let mut d = Vec::with_capacity(m * n);
        for r in &p.rows {
            d.extend(r.iter().map(|v| -v));
        }
        let mut val = vec![0.0; n + m];
        for j in 0..n {
            val[j] = resting_value(lo[j], hi[j], false);
        }
        let mut s = Self {
            m,
            n,
            lo,
            hi,
            cost,
            val,
            basic: (n..n + m).collect(),
            nonbasic: (0..n).collect(),
            pos: (0..n).map(Pos::Nonbasic).chain((0..m).map(Pos::Basic)).collect(),
            d,
            beta: p.rhs.clone(),
            iterations: 0,
            bland: false,
            degenerate: 0,
        };
        s.recompute_basics();
        s
    }

    fn recompute_basics(&mut self) {
        for i in 0..self.m {
            let row = &self.d[i * self.n..(i + 1) * self.n];
            let v: f64 = self.beta[i] + row.iter().zip(&self.nonbasic).map(|(a, &j)| a * self.val[j]).sum::<f64>();
            self.val[self.basic[i]] = v;
        }
    }

    /// Pivots the requested basis in, ignoring entries that cannot be
    /// reached by a stable pivot.
    fn warm_start(&mut self, basis: &Basis) {
        if basis.at_upper.len() != self.n + self.m || basis.basic.len() != self.m {
            return;
        }
        for &j in &basis.basic {
            let Pos::Nonbasic(k) = self.pos[j] else { continue };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let leaving = self.basic[i];
                if basis.basic.contains(&leaving) {
                    continue;
                }
                let a = self.d[i * self.n + k].abs();
                if a > 1e-9 && best.map_or(true, |(_, b)| a > b) {
                    best = Some((i, a));
                }
            }
            if let Some((r, _)) = best {
                self.pivot(r, k);
            }
        }
        for &j in &self.nonbasic {
            self.val[j] = resting_value(self.lo[j], self.hi[j], basis.at_upper[j]);
        }
        self.recompute_basics();
    }

    fn pivot(&mut self, r: usize, k: usize) {
        let n = self.n;
        let p = self.d[r * n + k];
        let row_r: Vec<f64> = (0..n).map(|c| if c == k { 1.0 / p } else { -self.d[r * n + c] / p }).collect();
        let beta_r = -self.beta[r] / p;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.d[i * n + k];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.d[i * n..(i + 1) * n];
            for c in 0..n {
                if c == k {
                    row[c] = f / p;
                } else {
                    row[c] += f * row_r[c];
                }
            }
            self.beta[i] += f * beta_r;
        }
        self.d[r * n..(r + 1) * n].copy_from_slice(&row_r);
        self.beta[r] = beta_r;
        let entering = self.nonbasic[k];
        let leaving = self.basic[r];
        self.basic[r] = entering;
        self.nonbasic[k] = leaving;
        self.pos[entering] = Pos::Basic(r);
        self.pos[leaving] = Pos::Nonbasic(k);
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.val[j];
        if v < self.lo[j] - FEAS_TOL {
            1.0
        } else if v > self.hi[j] + FEAS_TOL {
            -1.0
        } else {
            0.0
        }
    }

    fn reduced_costs(&self, cb: &[f64], phase1: bool) -> Vec<f64> {
        let n = self.n;
        let mut dk: Vec<f64> = if phase1 {
            vec![0.0; n]
        } else {
            self.nonbasic.iter().map(|&j| self.cost[j]).collect()
        };
        for (i, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                for (acc, &a) in dk.iter_mut().zip(&self.d[i * n..(i + 1) * n]) {
                    *acc += c * a;
                }
            }
        }
        dk
    }

    fn run(&mut self, phase1: bool, limit: usize) -> Result<Outcome> {
        loop {
            if self.iterations >= limit {
                return Err(Error::Diverged {
                    iteration: self.iterations,
                    detail: "simplex iteration limit reached".into(),
                });
            }
            let cb: Vec<f64> = if phase1 {
                let cb: Vec<f64> = self.basic.iter().map(|&j| self.infeasibility(j)).collect();
                if cb.iter().all(|&c| c == 0.0) {
                    return Ok(Outcome::Optimal);
                }
                cb
            } else {
                self.basic.iter().map(|&j| self.cost[j]).collect()
            };
            let dk = self.reduced_costs(&cb, phase1);
            let mut choice: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for (k, &dv) in dk.iter().enumerate() {
                let j = self.nonbasic[k];
                let dir = if dv > OPT_TOL && self.val[j] < self.hi[j] - FEAS_TOL {
                    1.0
                } else if dv < -OPT_TOL && self.val[j] > self.lo[j] + FEAS_TOL {
                    -1.0
                } else {
                    continue;
                };
                if self.bland {
                    if choice.map_or(true, |(kk, _)| j < self.nonbasic[kk]) {
                        choice = Some((k, dir));
                    }
                } else if dv.abs() > best {
                    best = dv.abs();
                    choice = Some((k, dir));
                }
            }
            let Some((k, dir)) = choice else {
                return Ok(Outcome::Optimal);
            };
            let j = self.nonbasic[k];
            let mut t = if dir > 0.0 {
                self.hi[j] - self.val[j]
            } else {
                self.val[j] - self.lo[j]
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = self.d[i * self.n + k] * dir;
                if alpha.abs() < PIVOT_TOL {
                    continue;
                }
                let b = self.basic[i];
                let v = self.val[b];
                let feasible = !phase1 || cb[i] == 0.0;
                let (limit_t, target) = if feasible {
                    if alpha > 0.0 {
                        ((self.hi[b] - v) / alpha, self.hi[b])
                    } else {
                        ((v - self.lo[b]) / -alpha, self.lo[b])
                    }
                } else if cb[i] > 0.0 && alpha > 0.0 {
                    ((self.lo[b] - v) / alpha, self.lo[b])
                } else if cb[i] < 0.0 && alpha < 0.0 {
                    ((v - self.hi[b]) / -alpha, self.hi[b])
                } else {
                    continue;
                };
                if !limit_t.is_finite() {
                    continue;
                }
                let limit_t = limit_t.max(0.0);
                let better = match leave {
                    None => limit_t < t || (limit_t == t && t.is_finite()),
                    Some((r, _)) => {
                        limit_t < t
                            || (limit_t == t
                                && if self.bland {
                                    b < self.basic[r]
                                } else {
                                    alpha.abs() > (self.d[r * self.n + k]).abs()
                                })
                    }
                };
                if better {
                    t = limit_t;
                    leave = Some((i, target));
                }
            }
            if !t.is_finite() {
                return Ok(Outcome::Unbounded);
            }
            self.iterations += 1;
            if t <= 1e-12 {
                self.degenerate += 1;
                if self.degenerate > DEGENERATE_RUN {
                    self.bland = true;
                }
            } else {
                self.degenerate = 0;
            }
            self.val[j] += dir * t;
            for i in 0..self.m {
                let a = self.d[i * self.n + k];
                if a != 0.0 {
                    self.val[self.basic[i]] += a * dir * t;
                }
            }
            match leave {
                Some((r, target)) => {
                    let b = self.basic[r];
                    self.pivot(r, k);
                    self.val[b] = target;
                }
                None => {
                    self.val[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
            }
        }
    }
}

fn resting_value(lo: f64, hi: f64, prefer_upper: bool) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            if prefer_upper {
                hi
            } else {
                lo
            }
        }
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

pub fn solve(problem: &LpProblem) -> Result<LpSolution> {
    solve_from(problem, None)
}

/// Starts from `basis` (typically the final basis of a similar problem).
pub fn solve_warm(problem: &LpProblem, basis: &Basis) -> Result<LpSolution> {
    solve_from(problem, Some(basis))
}

fn solve_from(problem: &LpProblem, warm: Option<&Basis>) -> Result<LpSolution> {
    problem.validate()?;
    let (m, n) = (problem.n_rows(), problem.n_vars());
    for j in 0..n {
        if problem.lower[j] > problem.upper[j] + FEAS_TOL {
            return Ok(finish(&Simplex::new(problem), problem, LpStatus::Infeasible));
        }
    }
    let mut s = Simplex::new(problem);
    if let Some(b) = warm {
        s.warm_start(b);
    }
    let limit = 200 * (m + n) + 1000;
    s.run(true, limit)?;
    if s.basic.iter().any(|&j| s.infeasibility(j) != 0.0) {
        return Ok(finish(&s, problem, LpStatus::Infeasible));
    }
    s.bland = false;
    s.degenerate = 0;
    let status = match s.run(false, limit)? {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
    };
    s.recompute_basics();
    Ok(finish(&s, problem, status))
}

fn finish(s: &Simplex, p: &LpProblem, status: LpStatus) -> LpSolution {
    let (m, n) = (s.m, s.n);
    let x = s.val[..n].to_vec();
    let objective = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let cb: Vec<f64> = s.basic.iter().map(|&j| s.cost[j]).collect();
    let dk = s.reduced_costs(&cb, false);
    let mut duals = vec![0.0; m];
    let mut reduced = vec![0.0; n];
    let mut active = Vec::new();
    for (k, &j) in s.nonbasic.iter().enumerate() {
        if j >= n {
            duals[j - n] = -dk[k];
            active.push(j - n);
        } else {
            reduced[j] = dk[k];
        }
    }
    active.sort_unstable();
    let at_upper = (0..n + m)
        .map(|j| matches!(s.pos[j], Pos::Nonbasic(_)) && s.hi[j].is_finite() && s.val[j] >= s.hi[j] - FEAS_TOL && s.val[j] > s.lo[j])
        .collect();
    LpSolution {
        status,
        x,
        objective,
        duals,
        reduced_costs: reduced,
        active_rows: active,
        iterations: s.iterations,
        basis: Basis {
            basic: s.basic.clone(),
            at_upper,
        },
    }
}

/// Exact optimum of the storage problem with known prices: variables
/// `u_0..u_{N-1}` in `[-C_W, C_I]`, stock kept in `[0, Q_max]`.
pub fn storage_lp(prices: &[f64], spec: &StorageSpec) -> Result<LpSolution> {
    spec.validate()?;
    let n = prices.len();
    let mut p = LpProblem::new(prices.iter().map(|s| -s).collect());
    for j in 0..n {
        p.set_bounds(j, -spec.c_withdraw, spec.c_inject);
    }
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| if j <= i { 1.0 } else { 0.0 }).collect();
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        p.add_row(row, spec.q_max - spec.q_init);
        p.add_row(neg, spec.q_init);
    }
    let sol = solve(&p)?;
    if sol.status != LpStatus::Optimal {
        return Err(invalid(format!("storage LP is {}", sol.status)));
    }
    Ok(sol)
}

/// [`storage_lp`] on the forward curve of a volatility-free model.
pub fn deterministic_storage_lp(model: &ForwardModel, spec: &StorageSpec, n: usize) -> Result<f64> {
    model.validate(n)?;
    if model.factors.iter().any(|f| f.sigma != 0.0) {
        return Err(invalid("deterministic LP needs sigma = 0 on every factor"));
    }
    let zeros = vec![0.0; model.n_factors()];
    let prices: Vec<f64> = (0..n).map(|i| model.spot_from(&zeros, model.time_of(i))).collect();
    Ok(storage_lp(&prices, spec)?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::price_models::{OneFactorParams, SeasonalCurve};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn check_kkt(p: &LpProblem, s: &LpSolution) {
        assert_eq!(s.status, LpStatus::Optimal);
        for (i, r) in p.rows.iter().enumerate() {
            let lhs: f64 = r.iter().zip(&s.x).map(|(a, x)| a * x).sum();
            assert!(lhs <= p.rhs[i] + 1e-8, "row {i}: {lhs} > {}", p.rhs[i]);
            assert!(s.duals[i] >= -1e-9);
            assert!((s.duals[i] * (p.rhs[i] - lhs)).abs() <= 1e-7);
        }
        for j in 0..p.n_vars() {
            assert!(s.x[j] >= p.lower[j] - 1e-8 && s.x[j] <= p.upper[j] + 1e-8);
            let r = s.reduced_costs[j];
            if r > 1e-9 {
                assert!((s.x[j] - p.upper[j]).abs() <= 1e-8);
            }
            if r < -1e-9 {
                assert!((s.x[j] - p.lower[j]).abs() <= 1e-8);
            }
        }
        let dual_bound: f64 = p.rhs.iter().zip(&s.duals).map(|(b, y)| b * y).sum::<f64>()
            + s.reduced_costs.iter().zip(&s.x).map(|(r, x)| r * x).sum::<f64>();
        assert!((dual_bound - s.objective).abs() <= 1e-7 * (1.0 + s.objective.abs()));
    }

    #[test]
    fn single_bounded_variable() {
        let mut p = LpProblem::new(vec![1.0]);
        p.set_bounds(0, 0.0, 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.x, vec![1.0]);
    }

    #[test]
    fn classic_two_variable_problem() {
        let mut p = LpProblem::new(vec![3.0, 5.0]);
        p.add_row(vec![1.0, 0.0], 4.0).add_row(vec![0.0, 2.0], 12.0).add_row(vec![3.0, 2.0], 18.0);
        let s = solve(&p).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
        check_kkt(&p, &s);
    }

    #[test]
    fn infeasible_and_unbounded_are_statuses() {
        let mut p = LpProblem::new(vec![1.0]);
        p.add_row(vec![1.0], -1.0);
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
        let mut q = LpProblem::new(vec![1.0, 1.0]);
        q.add_row(vec![1.0, -1.0], 1.0);
        assert_eq!(solve(&q).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn degenerate_duplicates_terminate() {
        let mut p = LpProblem::new(vec![1.0, 1.0, 1.0]);
        for _ in 0..6 {
            p.add_row(vec![1.0, 1.0, 0.0], 0.0);
            p.add_row(vec![0.0, 1.0, 1.0], 0.0);
            p.add_row(vec![1.0, 0.0, 1.0], 0.0);
        }
        p.add_row(vec![1.0, 1.0, 1.0], 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
    }

    /// max -S u + xi, xi <= alpha_k + beta_k (q + u), u in [lo, hi].
    fn cut_problem(spot: f64, q: f64, cuts: &[(f64, f64)], lo: f64, hi: f64) -> LpProblem {
        let mut p = LpProblem::new(vec![-spot, 1.0]);
        p.set_bounds(0, lo, hi).set_bounds(1, f64::NEG_INFINITY, f64::INFINITY);
        for &(a, b) in cuts {
            p.add_row(vec![-b, 1.0], a + b * q);
        }
        p
    }

    #[test]
    fn cut_problem_matches_grid_search() {
        let cuts = [(100.0, 40.0), (3100.0, 10.0)];
        for spot in [5.0, 25.0, 45.0] {
            let (q, lo, hi) = (60.0, -20.0, 10.0);
            let p = cut_problem(spot, q, &cuts, lo, hi);
            let s = solve(&p).unwrap();
            check_kkt(&p, &s);
            let grid = (0..=300_000)
                .map(|k| lo + (hi - lo) * k as f64 / 300_000.0)
                .map(|u| -spot * u + cuts.iter().map(|&(a, b)| a + b * (q + u)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((s.objective - grid).abs() < 1e-6, "{} vs {grid}", s.objective);
        }
    }

    #[test]
    fn warm_start_reaches_the_same_optimum() {
        let cuts: Vec<(f64, f64)> = (0..40).map(|k| (10.0 * k as f64, 40.0 - k as f64)).collect();
        let a = cut_problem(20.0, 30.0, &cuts, -10.0, 10.0);
        let cold = solve(&a).unwrap();
        let b = cut_problem(21.0, 32.0, &cuts, -10.0, 10.0);
        let warm = solve_warm(&b, &cold.basis).unwrap();
        let fresh = solve(&b).unwrap();
        assert!((warm.objective - fresh.objective).abs() < 1e-9);
        assert!(warm.iterations <= fresh.iterations);
    }

    #[test]
    fn listing_mentions_every_row() {
        let p = cut_problem(20.0, 30.0, &[(1.0, 2.0), (3.0, 4.0)], -1.0, 1.0);
        let l = p.listing();
        assert!(l.contains("r0:") && l.contains("r1:") && l.contains("maximize"));
    }

    fn random_problem(seed: u64, m: usize, n: usize) -> LpProblem {
        let mut r = StreamRng::new(seed, 0);
        let mut p = LpProblem::new((0..n).map(|_| r.uniform_in(-1.0, 2.0)).collect());
        for j in 0..n {
            p.set_bounds(j, r.uniform_in(-2.0, 0.0), r.uniform_in(0.5, 3.0));
        }
        for _ in 0..m {
            let row: Vec<f64> = (0..n).map(|_| r.uniform_in(-1.0, 1.0)).collect();
            p.add_row(row, r.uniform_in(-0.5, 2.0));
        }
        p
    }

    proptest! {
        #[test]
        fn random_problems_satisfy_kkt(seed in 0u64..10_000) {
            let p = random_problem(seed, 12, 5);
            let s = solve(&p).unwrap();
            if s.status == LpStatus::Optimal {
                check_kkt(&p, &s);
                let vertex = (0..p.n_vars()).filter(|&j| s.x[j] > p.lower[j] + 1e-8 && s.x[j] < p.upper[j] - 1e-8).count();
                prop_assert!(vertex <= p.n_rows());
            }
        }

        #[test]
        fn row_scaling_leaves_the_optimum(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let p = random_problem(seed, 8, 4);
            let s = solve(&p).unwrap();
            prop_assume!(s.status == LpStatus::Optimal);
            let mut q = p.clone();
            q.rows[3].iter_mut().for_each(|v| *v *= c);
            q.rhs[3] *= c;
            let t = solve(&q).unwrap();
            prop_assert!((s.objective - t.objective).abs() <= 1e-9 * (1.0 + s.objective.abs()));
        }
    }

    fn deterministic(curve: SeasonalCurve) -> ForwardModel {
        ForwardModel::one_factor(OneFactorParams { sigma: 0.0, a: 0.01 }, curve)
    }

    fn spec() -> StorageSpec {
        StorageSpec {
            c_inject: 5.0,
            c_withdraw: 10.0,
            q_max: 100.0,
            q_init: 50.0,
        }
    }

    #[test]
    fn one_date_sells_the_maximum() {
        let v = deterministic_storage_lp(&deterministic(SeasonalCurve::flat(30.0)), &spec(), 1).unwrap();
        assert!((v - 300.0).abs() < 1e-9);
    }

    #[test]
    fn flat_curve_from_empty_is_worth_nothing() {
        let empty = StorageSpec { q_init: 0.0, ..spec() };
        let v = deterministic_storage_lp(&deterministic(SeasonalCurve::flat(30.0)), &empty, 14).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn flat_curve_only_sells_the_initial_stock() {
        // nothing is gained by trading against a flat curve beyond selling
        // what is already stored
        let v = deterministic_storage_lp(&deterministic(SeasonalCurve::flat(30.0)), &spec(), 14).unwrap();
        assert!((v - 1500.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn stochastic_model_is_rejected() {
        let m = ForwardModel::one_factor(OneFactorParams { sigma: 0.1, a: 0.01 }, SeasonalCurve::flat(30.0));
        assert!(deterministic_storage_lp(&m, &spec(), 3).is_err());
    }

    #[test]
    fn storage_lp_satisfies_kkt() {
        let prices: Vec<f64> = (0..30).map(|k| 30.0 + 5.0 * (k as f64 * 0.4).sin()).collect();
        let sol = storage_lp(&prices, &spec()).unwrap();
        let mut p = LpProblem::new(prices.iter().map(|s| -s).collect());
        let n = prices.len();
        for j in 0..n {
            p.set_bounds(j, -10.0, 5.0);
        }
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| if j <= i { 1.0 } else { 0.0 }).collect();
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            p.add_row(row, 50.0);
            p.add_row(neg, 50.0);
        }
        check_kkt(&p, &sol);
    }
}
