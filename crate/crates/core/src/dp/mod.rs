//! Dynamic-programming reference values on a stock grid.
//!
//! Backward induction over the decision dates. Continuation values are
//! known on the grid and interpolated linearly in stock. Two expectation
//! engines are available: local affine regression on simulated paths, or
//! the exact average over children on a scenario tree.

mod regression;
mod tree;

pub use regression::Regressor;
pub use tree::{brute_force_tiny, ControlSet, ScenarioTree, TreeNode};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::price_models::{ForwardModel, PathBatch};
use crate::rng::{derive_seed, domain};
use crate::storage::{bounds_1d, Impact, StorageSpec};
use tree::cashflow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StockGrid {
    pub levels: Vec<f64>,
}

impl StockGrid {
    /// `points` equally spaced levels from 0 to `q_max`.
    pub fn uniform(q_max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(q_max > 0.0) {
            return Err(invalid("a stock grid needs at least two points and a positive capacity"));
        }
        Ok(Self {
            levels: (0..points).map(|k| q_max * k as f64 / (points - 1) as f64).collect(),
        })
    }

    pub fn new(levels: Vec<f64>, q_max: f64) -> Result<Self> {
        if levels.len() < 2 || levels[0] != 0.0 || *levels.last().unwrap() != q_max {
            return Err(invalid("grid must start at 0 and end at the capacity"));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("grid must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Linear interpolation of `values` (one per level) at `q`.
    pub fn interpolate(&self, values: &[f64], q: f64) -> f64 {
        let g = &self.levels;
        let q = q.clamp(g[0], g[g.len() - 1]);
        let k = g.partition_point(|&v| v <= q).clamp(1, g.len() - 1);
        let (a, b) = (g[k - 1], g[k]);
        let w = (q - a) / (b - a);
        if w <= 0.0 {
            values[k - 1]
        } else if w >= 1.0 {
            values[k]
        } else {
            values[k - 1] + w * (values[k] - values[k - 1])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlRule {
    /// Full withdrawal, nothing, full injection.
    BangBang,
    /// Bang-bang plus every move landing on a grid level.
    GridAware,
    /// `steps + 1` equally spaced volumes plus the grid-aware set.
    Discretized { steps: usize },
}

impl ControlRule {
    pub fn candidates(&self, q: f64, spec: &StorageSpec, grid: &StockGrid) -> Vec<f64> {
        let (cw, ci) = bounds_1d(q, spec);
        let mut c = vec![-cw, 0.0, ci];
        if !matches!(self, ControlRule::BangBang) {
            c.extend(grid.levels.iter().map(|&l| l - q).filter(|&u| u > -cw && u < ci));
        }
        if let ControlRule::Discretized { steps } = *self {
            let s = steps.max(1);
            c.extend((0..=s).map(|k| -cw + (cw + ci) * k as f64 / s as f64));
        }
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Propagate realized cash flows along each path.
    CashFlow,
    /// Propagate regressed values (Tsitsiklis and Van Roy).
    Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub grid_points: usize,
    pub control: ControlRule,
    /// Regression cells per factor coordinate; two basis functions each.
    pub bins_per_dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub flavor: Flavor,
    pub impact: Option<Impact>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            grid_points: 20,
            control: ControlRule::BangBang,
            bins_per_dim: 50,
            n_paths: 20_000,
            seed: 0,
            flavor: Flavor::CashFlow,
            impact: None,
        }
    }
}

/// Per-date, per-level mean value, plus what is needed to act on new paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellmanTable {
    pub grid: StockGrid,
    /// `values[date][level]`.
    pub values: Vec<Vec<f64>>,
}

impl BellmanTable {
    /// CSV with header `date,level,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "date,level,value")?;
        for (i, row) in self.values.iter().enumerate() {
            for (q, v) in self.grid.levels.iter().zip(row) {
                writeln!(out, "{i},{q},{v}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DpSolution {
    /// Expected profit from `q_init` estimated during the backward pass.
    pub value: f64,
    pub table: BellmanTable,
    /// Continuation regressions per date (`None` after the last date).
    pub regressors: Vec<Option<Regressor>>,
    pub spec: StorageSpec,
    pub control: ControlRule,
    pub impact: Option<Impact>,
}

struct Step<'a> {
    spec: &'a StorageSpec,
    grid: &'a StockGrid,
    candidates: &'a [Vec<f64>],
    impact: Option<Impact>,
}

impl Step<'_> {
    /// Best control at every level for one node: writes the optimized value
    /// and, when `realized` is given, the matching realized cash flow.
    fn decide(&self, spot: f64, cont: &[f64], realized: Option<&[f64]>, value: &mut [f64], out_realized: &mut [f64]) {
        for (g, &q) in self.grid.levels.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_u = 0.0;
            for &u in &self.candidates[g] {
                let q2 = (q + u).clamp(0.0, self.spec.q_max);
                let v = cashflow(spot, u, self.impact) + self.grid.interpolate(cont, q2);
                if v > best {
                    best = v;
                    best_u = u;
                }
            }
            value[g] = best;
            out_realized[g] = match realized {
                Some(r) => {
                    let q2 = (q + best_u).clamp(0.0, self.spec.q_max);
                    cashflow(spot, best_u, self.impact) + self.grid.interpolate(r, q2)
                }
                None => best,
            };
        }
    }
}

fn check_grid(spec: &StorageSpec, grid: &StockGrid) -> Result<()> {
    spec.validate()?;
    if (grid.levels[grid.len() - 1] - spec.q_max).abs() > 1e-12 {
        return Err(invalid("grid does not end at the storage capacity"));
    }
    Ok(())
}

/// Regression DP on `n_paths` simulated paths over `n_dates` dates.
pub fn solve_dp(model: &ForwardModel, spec: &StorageSpec, n_dates: usize, cfg: &DpConfig) -> Result<DpSolution> {
    model.validate(n_dates)?;
    if n_dates == 0 || cfg.n_paths == 0 {
        return Err(invalid("DP needs at least one date and one path"));
    }
    let grid = StockGrid::uniform(spec.q_max, cfg.grid_points)?;
    let paths = model.simulate(cfg.n_paths, 0, n_dates, derive_seed(cfg.seed, domain::DP), 0);
    solve_dp_paths(&paths, spec, &grid, cfg)
}

pub fn solve_dp_paths(paths: &PathBatch, spec: &StorageSpec, grid: &StockGrid, cfg: &DpConfig) -> Result<DpSolution> {
    check_grid(spec, grid)?;
    let (n, nd, gl, nf) = (paths.n_paths, paths.n_steps, grid.len(), paths.n_factors);
    let candidates: Vec<Vec<f64>> = grid.levels.iter().map(|&q| cfg.control.candidates(q, spec, grid)).collect();
    let step = Step {
        spec,
        grid,
        candidates: &candidates,
        impact: cfg.impact,
    };
    let mut realized = vec![0.0; n * gl];
    let mut next_realized = vec![0.0; n * gl];
    let mut values = vec![0.0; n * gl];
    let mut cont = vec![0.0; n * gl];
    let mut regressors: Vec<Option<Regressor>> = vec![None; nd];
    let mut table = vec![vec![0.0; gl]; nd];
    let mut x = vec![0.0; n * nf];
    for i in (0..nd).rev() {
        for p in 0..n {
            x[p * nf..(p + 1) * nf].copy_from_slice(paths.factors(p, i));
        }
        if i + 1 < nd {
            let reg = Regressor::fit(&x, nf, &realized, gl, cfg.bins_per_dim);
            for p in 0..n {
                reg.predict_into(&x[p * nf..(p + 1) * nf], &mut cont[p * gl..(p + 1) * gl]);
            }
            regressors[i] = Some(reg);
        } else {
            cont.iter_mut().for_each(|v| *v = 0.0);
        }
        for p in 0..n {
            let r = p * gl..(p + 1) * gl;
            let past = match cfg.flavor {
                Flavor::CashFlow => Some(&realized[r.clone()]),
                Flavor::Value => None,
            };
            step.decide(paths.spot(p, i), &cont[r.clone()], past, &mut values[r.clone()], &mut next_realized[r]);
        }
        std::mem::swap(&mut realized, &mut next_realized);
        for g in 0..gl {
            table[i][g] = (0..n).map(|p| values[p * gl + g]).sum::<f64>() / n as f64;
        }
    }
    let value = (0..n)
        .map(|p| grid.interpolate(&realized[p * gl..(p + 1) * gl], spec.q_init))
        .sum::<f64>()
        / n as f64;
    Ok(DpSolution {
        value,
        table: BellmanTable {
            grid: grid.clone(),
            values: table,
        },
        regressors,
        spec: *spec,
        control: cfg.control.clone(),
        impact: cfg.impact,
    })
}

/// Exact backward induction on a tree: the continuation is the
/// probability-weighted mean over children.
pub fn solve_dp_tree(
    tree: &ScenarioTree,
    spec: &StorageSpec,
    grid: &StockGrid,
    control: &ControlRule,
    impact: Option<Impact>,
) -> Result<DpSolution> {
    check_grid(spec, grid)?;
    let gl = grid.len();
    let candidates: Vec<Vec<f64>> = grid.levels.iter().map(|&q| control.candidates(q, spec, grid)).collect();
    let step = Step {
        spec,
        grid,
        candidates: &candidates,
        impact,
    };
    let nd = tree.n_dates();
    let mut next: Vec<f64> = Vec::new();
    let mut table = vec![vec![0.0; gl]; nd];
    let mut scratch = vec![0.0; gl];
    let mut cont = vec![0.0; gl];
    for i in (0..nd).rev() {
        let level = &tree.levels[i];
        let mut cur = vec![0.0; level.len() * gl];
        for (k, node) in level.iter().enumerate() {
            cont.iter_mut().for_each(|v| *v = 0.0);
            for c in node.first_child..node.first_child + node.n_children {
                let w = tree.levels[i + 1][c].prob / node.prob;
                for g in 0..gl {
                    cont[g] += w * next[c * gl + g];
                }
            }
            step.decide(node.spot, &cont, None, &mut cur[k * gl..(k + 1) * gl], &mut scratch);
            for g in 0..gl {
                table[i][g] += node.prob * cur[k * gl + g];
            }
        }
        next = cur;
    }
    Ok(DpSolution {
        value: grid.interpolate(&next[..gl], spec.q_init),
        table: BellmanTable {
            grid: grid.clone(),
            values: table,
        },
        regressors: vec![None; nd],
        spec: *spec,
        control: control.clone(),
        impact,
    })
}

/// Forward rollout on fresh paths, deciding with the regressed
/// continuation values. Returns the mean profit and its standard error.
pub fn simulate_dp_policy(sol: &DpSolution, model: &ForwardModel, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let nd = sol.table.values.len();
    if sol.regressors.iter().take(nd.saturating_sub(1)).any(Option::is_none) {
        return Err(invalid("solution carries no regressions (tree solutions cannot be simulated)"));
    }
    let paths = model.simulate(n_paths, 0, nd, derive_seed(seed, domain::EVAL), 0);
    let (spec, grid) = (&sol.spec, &sol.table.grid);
    let mut cont = vec![0.0; grid.len()];
    let mut totals = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut q = spec.q_init;
        let mut total = 0.0;
        for i in 0..nd {
            match &sol.regressors[i] {
                Some(r) => r.predict_into(paths.factors(p, i), &mut cont),
                None => cont.iter_mut().for_each(|v| *v = 0.0),
            }
            let spot = paths.spot(p, i);
            let mut best = (f64::NEG_INFINITY, 0.0);
            for u in sol.control.candidates(q, spec, grid) {
                let q2 = (q + u).clamp(0.0, spec.q_max);
                let v = cashflow(spot, u, sol.impact) + grid.interpolate(&cont, q2);
                if v > best.0 {
                    best = (v, u);
                }
            }
            total += cashflow(spot, best.1, sol.impact);
            q = (q + best.1).clamp(0.0, spec.q_max);
        }
        totals.push(total);
    }
    Ok(mean_and_se(&totals))
}

pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::deterministic_storage_lp;
    use crate::price_models::{OneFactorParams, SeasonalCurve};

    fn spec() -> StorageSpec {
        StorageSpec {
            c_inject: 5.0,
            c_withdraw: 10.0,
            q_max: 100.0,
            q_init: 50.0,
        }
    }

    fn model(sigma: f64, n: usize) -> ForwardModel {
        ForwardModel::one_factor(
            OneFactorParams { sigma, a: 0.01 },
            SeasonalCurve::flat(30.0).with_term(5.0, n as f64).with_term(1.0, 7.0),
        )
    }

    #[test]
    fn interpolation_is_exact_on_levels_and_linear_between() {
        let g = StockGrid::uniform(100.0, 21).unwrap();
        let v: Vec<f64> = g.levels.iter().map(|q| q * q).collect();
        assert_eq!(g.interpolate(&v, 35.0), 1225.0);
        assert!((g.interpolate(&v, 37.5) - 0.5 * (1225.0 + 1600.0)).abs() < 1e-12);
        assert_eq!(g.interpolate(&v, 100.0), 10_000.0);
    }

    #[test]
    fn tree_dp_matches_brute_force() {
        let g = StockGrid::uniform(100.0, 21).unwrap();
        for n in 1..=5 {
            let m = model(0.08, 8);
            let tree = ScenarioTree::binomial(&m, n, 10_000).unwrap();
            let dp = solve_dp_tree(&tree, &spec(), &g, &ControlRule::BangBang, None).unwrap();
            let bf = brute_force_tiny(&tree, &spec(), &ControlSet::BangBang, None, 1_000_000).unwrap();
            assert!((dp.value - bf).abs() < 1e-9, "n={n}: {} vs {bf}", dp.value);
        }
    }

    #[test]
    fn deterministic_dp_matches_lp() {
        let n = 30;
        let m = model(0.0, n);
        let lp = deterministic_storage_lp(&m, &spec(), n).unwrap();
        let cfg = DpConfig {
            grid_points: 21,
            control: ControlRule::GridAware,
            n_paths: 4,
            ..DpConfig::default()
        };
        let dp = solve_dp(&m, &spec(), n, &cfg).unwrap();
        assert!((dp.value - lp).abs() <= 1e-3 * lp, "{} vs {lp}", dp.value);
        let (sim, se) = simulate_dp_policy(&dp, &m, 3, 1).unwrap();
        assert_eq!(se, 0.0);
        assert!((sim - dp.value).abs() < 1e-9);
    }

    #[test]
    fn tree_table_is_monotone_and_concave() {
        let m = model(0.08, 8);
        let tree = ScenarioTree::binomial(&m, 6, 10_000).unwrap();
        let g = StockGrid::uniform(100.0, 21).unwrap();
        let dp = solve_dp_tree(&tree, &spec(), &g, &ControlRule::GridAware, None).unwrap();
        for row in &dp.table.values {
            for w in row.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
            for w in row.windows(3) {
                assert!(w[1] - w[0] >= w[2] - w[1] - 1e-9);
            }
        }
    }

    #[test]
    fn regression_dp_brackets_its_simulation() {
        let n = 20;
        let m = model(0.08, n);
        let cfg = DpConfig {
            grid_points: 21,
            n_paths: 4000,
            bins_per_dim: 20,
            ..DpConfig::default()
        };
        let dp = solve_dp(&m, &spec(), n, &cfg).unwrap();
        let (sim, se) = simulate_dp_policy(&dp, &m, 4000, 3).unwrap();
        assert!(sim <= dp.value + 3.0 * se, "{sim} > {}", dp.value);
        assert!(sim > 0.9 * dp.value);
    }

    #[test]
    fn table_csv_has_one_row_per_date_and_level() {
        let m = model(0.08, 8);
        let tree = ScenarioTree::binomial(&m, 3, 100).unwrap();
        let g = StockGrid::uniform(100.0, 5).unwrap();
        let dp = solve_dp_tree(&tree, &spec(), &g, &ControlRule::BangBang, None).unwrap();
        let mut buf = Vec::new();
        dp.table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 5);
    }

    #[test]
    fn tree_solutions_refuse_simulation() {
        let m = model(0.08, 8);
        let tree = ScenarioTree::binomial(&m, 3, 100).unwrap();
        let g = StockGrid::uniform(100.0, 5).unwrap();
        let dp = solve_dp_tree(&tree, &spec(), &g, &ControlRule::BangBang, None).unwrap();
        assert!(simulate_dp_policy(&dp, &m, 10, 0).is_err());
    }
}
