//! Recombination-free scenario trees and the exhaustive oracle on them.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::price_models::ForwardModel;
use crate::storage::{bounds_1d, Impact, StorageSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub y: Vec<f64>,
    pub spot: f64,
    /// Probability of reaching this node from the root.
    pub prob: f64,
    /// Index of the first child in the next level.
    pub first_child: usize,
    pub n_children: usize,
}

/// Levels indexed by decision date; level 0 holds the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    pub levels: Vec<Vec<TreeNode>>,
}

impl ScenarioTree {
    /// Exact OU transitions with the Gaussian noise replaced by `+-1` per
    /// factor, each sign pattern equally likely.
    pub fn binomial(model: &ForwardModel, n_dates: usize, max_nodes: usize) -> Result<Self> {
        model.validate(n_dates)?;
        let nf = model.n_factors();
        let branch = 1usize << nf;
        let mut total = 1usize;
        let mut width = 1usize;
        for _ in 1..n_dates {
            width = width.saturating_mul(branch);
            total = total.saturating_add(width);
        }
        if total > max_nodes {
            return Err(Error::Explosion { limit: max_nodes });
        }
        let coeffs: Vec<(f64, f64)> = model
            .factors
            .iter()
            .map(|f| ((-f.a * model.dt).exp(), f.variance(model.dt).sqrt()))
            .collect();
        let root = TreeNode {
            y: vec![0.0; nf],
            spot: model.spot_from(&vec![0.0; nf], model.time_of(0)),
            prob: 1.0,
            first_child: 0,
            n_children: 0,
        };
        let mut levels = vec![vec![root]];
        for k in 1..n_dates {
            let t = model.time_of(k);
            let mut next = Vec::new();
            for node in levels[k - 1].iter_mut() {
                node.first_child = next.len();
                node.n_children = branch;
                for pattern in 0..branch {
                    let y: Vec<f64> = node
                        .y
                        .iter()
                        .zip(&coeffs)
                        .enumerate()
                        .map(|(f, (&v, &(decay, vol)))| {
                            let eps = if pattern >> f & 1 == 1 { 1.0 } else { -1.0 };
                            v * decay + vol * eps
                        })
                        .collect();
                    next.push(TreeNode {
                        spot: model.spot_from(&y, t),
                        y,
                        prob: node.prob / branch as f64,
                        first_child: 0,
                        n_children: 0,
                    });
                }
            }
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn n_dates(&self) -> usize {
        self.levels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControlSet {
    /// `{-cw_hat, 0, ci_hat}`.
    BangBang,
    /// Fixed volumes, kept when admissible at the current stock.
    Finite(Vec<f64>),
}

impl ControlSet {
    pub fn candidates(&self, q: f64, spec: &StorageSpec) -> Vec<f64> {
        let (cw, ci) = bounds_1d(q, spec);
        let mut c = match self {
            ControlSet::BangBang => vec![-cw, 0.0, ci],
            ControlSet::Finite(v) => v.iter().copied().filter(|&u| u >= -cw && u <= ci).collect(),
        };
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

/// Cash received at price `spot` for the volume `u` of a single storage.
pub(crate) fn cashflow(spot: f64, u: f64, impact: Option<Impact>) -> f64 {
    let price = match impact {
        Some(i) => spot + i.coefficient / i.storages as f64 * u,
        None => spot,
    };
    -price * u
}

/// Exact expected optimal profit on the tree, enumerating every reachable
/// stock level. Fails once more than `max_states` (node, stock) pairs
/// would be stored.
pub fn brute_force_tiny(
    tree: &ScenarioTree,
    spec: &StorageSpec,
    controls: &ControlSet,
    impact: Option<Impact>,
    max_states: usize,
) -> Result<f64> {
    spec.validate()?;
    let mut memo: HashMap<(usize, usize, u64), f64> = HashMap::new();
    solve_node(tree, spec, controls, impact, 0, 0, spec.q_init, &mut memo, max_states)
}

#[allow(clippy::too_many_arguments)]
fn solve_node(
    tree: &ScenarioTree,
    spec: &StorageSpec,
    controls: &ControlSet,
    impact: Option<Impact>,
    date: usize,
    node: usize,
    q: f64,
    memo: &mut HashMap<(usize, usize, u64), f64>,
    max_states: usize,
) -> Result<f64> {
    let key = (date, node, q.to_bits());
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    if memo.len() >= max_states {
        return Err(Error::Explosion { limit: max_states });
    }
    let n = &tree.levels[date][node];
    let mut best = f64::NEG_INFINITY;
    for u in controls.candidates(q, spec) {
        let mut v = cashflow(n.spot, u, impact);
        if date + 1 < tree.n_dates() {
            let q2 = (q + u).clamp(0.0, spec.q_max);
            let mut cont = 0.0;
            for c in n.first_child..n.first_child + n.n_children {
                let p = tree.levels[date + 1][c].prob / n.prob;
                cont += p * solve_node(tree, spec, controls, impact, date + 1, c, q2, memo, max_states)?;
            }
            v += cont;
        }
        best = best.max(v);
    }
    memo.insert(key, best);
    Ok(best)
}
