//! Policy and value approximators built on the tape.
//!
//! Networks only hold [`ParamId`]s into a [`ParamStore`] owned by the
//! caller, so several networks can share one optimizer.

mod cuts;
mod feedforward;
mod icnn;
mod lstm;
mod policy;

pub use cuts::{extract_cuts, Cut, CutSet, DEFAULT_CUT_CAP};
pub use feedforward::{Feedforward, FeedforwardSpec};
pub use icnn::{Icnn, IcnnKind, IcnnSpec};
pub use lstm::LstmCell;
pub use policy::{DeepSetPolicy, LstmFfPolicy, MergedPolicy, Policy, PolicyKind, PolicySet, PolicySpec, PolicyState};

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape, Unary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    /// `min(x, 0)`: concave and non-decreasing.
    MinZero,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.unary(x, Unary::Tanh),
            Activation::Relu => tape.unary(x, Unary::Relu),
            Activation::Sigmoid => tape.unary(x, Unary::Sigmoid),
            Activation::MinZero => tape.unary(x, Unary::MinZero),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::MinZero => x.min(0.0),
        }
    }
}

/// Parameter leaf: trainable when `train`, a constant otherwise.
pub(crate) fn leaf(tape: &mut Tape, store: &ParamStore, id: ParamId, train: bool) -> NodeId {
    if train {
        tape.param(store, id)
    } else {
        tape.frozen(store, id)
    }
}

/// Finite-difference check of tape gradients.
pub mod gradcheck {
    use crate::autodiff::{NodeId, ParamStore, Tape};

    /// Largest relative error between tape gradients and central finite
    /// differences over every parameter, skipping coordinates where the
    /// difference quotient straddles a kink (one-sided quotients disagree).
    pub fn max_relative_error(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> NodeId) -> f64 {
        let mut tape = Tape::new();
        let out = f(&mut tape, store);
        store.zero_grads();
        tape.backward(out, store).unwrap();
        let analytic = store.grads().to_vec();
        let eval = |s: &ParamStore| {
            let mut t = Tape::new();
            let o = f(&mut t, s);
            t.value(o).item()
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..store.len() {
            let x0 = store.values()[k];
            store.values_mut()[k] = x0 + h;
            let fp = eval(store);
            store.values_mut()[k] = x0 - h;
            let fm = eval(store);
            store.values_mut()[k] = x0;
            let f0 = eval(store);
            let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
            if (right - left).abs() > 1e-3 * (1.0 + right.abs().max(left.abs())) {
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / (fd.abs().max(analytic[k].abs()).max(1e-2));
            worst = worst.max(err);
        }
        worst
    }
}
