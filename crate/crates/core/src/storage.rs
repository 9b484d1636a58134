//! Storage dynamics. Admissibility is enforced only through the clipped
//! flow bounds: a unit control in `[0, 1]` is mapped affinely onto
//! `[-cw_hat, ci_hat]`, so every stock trajectory stays in `[0, q_max]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{invalid, Error, Result};
use crate::price_models::impacted_price;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    /// Maximum injection per step.
    pub c_inject: f64,
    /// Maximum withdrawal per step.
    pub c_withdraw: f64,
    pub q_max: f64,
    pub q_init: f64,
}

impl StorageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_inject >= 0.0 && self.c_withdraw >= 0.0) {
            return Err(invalid("injection and withdrawal rates must be non-negative"));
        }
        if !(self.q_max > 0.0) {
            return Err(invalid("capacity must be positive"));
        }
        if !(0.0..=self.q_max).contains(&self.q_init) {
            return Err(invalid(format!("initial level {} outside [0, {}]", self.q_init, self.q_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StockVector {
    q: Vec<f64>,
}

impl StockVector {
    pub fn new(q: Vec<f64>, specs: &[StorageSpec]) -> Result<Self> {
        if q.len() != specs.len() {
            return Err(invalid(format!("{} levels for {} storages", q.len(), specs.len())));
        }
        for (index, (&level, s)) in q.iter().zip(specs).enumerate() {
            if !(0.0..=s.q_max).contains(&level) {
                return Err(Error::StockOutOfBounds {
                    index,
                    level,
                    capacity: s.q_max,
                });
            }
        }
        Ok(Self { q })
    }

    pub fn initial(specs: &[StorageSpec]) -> Self {
        Self {
            q: specs.iter().map(|s| s.q_init).collect(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.q
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowBounds {
    pub cw_hat: Vec<f64>,
    pub ci_hat: Vec<f64>,
}

/// Withdrawal and injection room left after clipping by the capacity.
pub fn effective_bounds(q: &StockVector, specs: &[StorageSpec]) -> FlowBounds {
    let (cw_hat, ci_hat) = q
        .q
        .iter()
        .zip(specs)
        .map(|(&q, s)| bounds_1d(q, s))
        .unzip();
    FlowBounds { cw_hat, ci_hat }
}

/// `(cw_hat, ci_hat)` for one storage.
#[inline]
pub fn bounds_1d(q: f64, s: &StorageSpec) -> (f64, f64) {
    let ci = (q + s.c_inject).min(s.q_max) - q;
    let cw = q - (q - s.c_withdraw).max(0.0);
    (cw.max(0.0), ci.max(0.0))
}

pub fn control_from_unit(bounds: &FlowBounds, phi: &[f64]) -> Vec<f64> {
    bounds
        .cw_hat
        .iter()
        .zip(&bounds.ci_hat)
        .zip(phi)
        .map(|((&cw, &ci), &p)| -cw + (cw + ci) * p)
        .collect()
}

/// `q + u`, clamped to absorb the last-ulp rounding of `q + (q_max - q)`.
pub fn apply_control(q: &StockVector, u: &[f64], specs: &[StorageSpec]) -> StockVector {
    StockVector {
        q: q
            .q
            .iter()
            .zip(u)
            .zip(specs)
            .map(|((&q, &u), s)| (q + u).clamp(0.0, s.q_max))
            .collect(),
    }
}

/// Price impact `(P, M)`: the execution price moves by `P / M` per unit of
/// aggregated traded volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub coefficient: f64,
    pub storages: usize,
}

/// Money received at one date: `-price * sum_j u_j`, with `price` the spot
/// or the impacted price of the aggregated volume.
pub fn step_cashflow(spot: f64, u: &[f64], impact: Option<Impact>) -> f64 {
    let total: f64 = u.iter().sum();
    let price = match impact {
        Some(i) if i.coefficient != 0.0 => impacted_price(spot, total, i.coefficient, i.storages),
        _ => spot,
    };
    -price * total
}

/// Differentiable clipping device on a batch: `q` is `(B, M)` raw levels,
/// `phi` is `(B, M)` unit controls. Returns the `(B, M)` control.
pub fn clipped_control(tape: &mut Tape, q: NodeId, phi: NodeId, specs: &[StorageSpec]) -> NodeId {
    let q_max: Vec<f64> = specs.iter().map(|s| s.q_max).collect();
    let c_in: Vec<f64> = specs.iter().map(|s| s.c_inject).collect();
    let c_out: Vec<f64> = specs.iter().map(|s| -s.c_withdraw).collect();
    let zeros = vec![0.0; specs.len()];
    let up = add_row_const(tape, q, &c_in);
    let up = tape.min_const(up, q_max);
    let ci_hat = tape.sub(up, q);
    let down = add_row_const(tape, q, &c_out);
    let down = tape.max_const(down, zeros);
    let cw_hat = tape.sub(q, down);
    let span = tape.add(cw_hat, ci_hat);
    let scaled = tape.mul(span, phi);
    tape.sub(scaled, cw_hat)
}

/// Per-date cashflow on a batch, `(B, 1)`.
pub fn batch_cashflow(tape: &mut Tape, spot: NodeId, u: NodeId, impact: Option<Impact>) -> NodeId {
    let total = tape.row_sum(u);
    let price = match impact {
        Some(i) if i.coefficient != 0.0 => {
            let shift = tape.scale(total, i.coefficient / i.storages as f64);
            tape.add(spot, shift)
        }
        _ => spot,
    };
    let paid = tape.mul(price, total);
    tape.scale(paid, -1.0)
}

fn add_row_const(tape: &mut Tape, x: NodeId, c: &[f64]) -> NodeId {
    if c.iter().all(|&v| v == c[0]) {
        return tape.offset(x, c[0]);
    }
    let row = tape.input(crate::autodiff::Tensor::row_vector(c.to_vec()));
    tape.add(x, row)
}
