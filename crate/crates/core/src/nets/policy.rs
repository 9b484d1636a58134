use serde::{Deserialize, Serialize};

use super::{Activation, Feedforward, FeedforwardSpec, LstmCell};
use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    PerStep,
    Merged,
    DeepSet,
    LstmFf,
}

impl std::str::FromStr for PolicyKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-step" => Ok(Self::PerStep),
            "merged" => Ok(Self::Merged),
            "deep-set" | "deepset" => Ok(Self::DeepSet),
            "lstm-ff" | "lstm" => Ok(Self::LstmFf),
            _ => Err(invalid(format!("unknown policy kind {s:?}"))),
        }
    }
}

/// Architecture descriptor shared by every policy kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Number of decision dates covered.
    pub steps: usize,
    /// Width of the price feature row fed at each date.
    pub price_dim: usize,
    pub storages: usize,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub deepset_width: usize,
    pub lstm_units: usize,
    pub lstm_shared_head: bool,
}

impl PolicySpec {
    /// Two hidden layers of 11 neurons in dimension one, `10 + M` otherwise.
    pub fn new(kind: PolicyKind, steps: usize, price_dim: usize, storages: usize) -> Self {
        Self {
            kind,
            steps,
            price_dim,
            storages,
            hidden_layers: 2,
            neurons: if storages == 1 { 11 } else { 10 + storages },
            deepset_width: 32,
            lstm_units: 50,
            lstm_shared_head: false,
        }
    }
}

/// One feedforward network per decision date.
#[derive(Clone, Debug)]
pub struct PolicySet {
    pub nets: Vec<Feedforward>,
}

/// A single network with normalized time as an extra input.
#[derive(Clone, Debug)]
pub struct MergedPolicy {
    pub net: Feedforward,
    pub steps: usize,
}

/// Per-date encoder/decoder pair. Storage `j` sees the price, its own
/// stock and the sum of the encodings of all storages.
#[derive(Clone, Debug)]
pub struct DeepSetPolicy {
    pub encoders: Vec<Feedforward>,
    pub decoders: Vec<Feedforward>,
}

#[derive(Clone, Debug)]
pub struct LstmFfPolicy {
    pub cell: LstmCell,
    pub heads: Vec<Feedforward>,
}

#[derive(Clone, Debug)]
pub enum Policy {
    PerStep(PolicySet),
    Merged(MergedPolicy),
    DeepSet(DeepSetPolicy),
    LstmFf(LstmFfPolicy),
}

/// Recurrent state threaded through a rollout.
#[derive(Clone, Copy, Debug, Default)]
pub struct PolicyState {
    lstm: Option<(NodeId, NodeId)>,
}

impl Policy {
    pub fn build(store: &mut ParamStore, spec: &PolicySpec) -> Result<Self> {
        if spec.steps == 0 || spec.storages == 0 || spec.price_dim == 0 {
            return Err(invalid(format!("degenerate policy spec {spec:?}")));
        }
        let (p, m) = (spec.price_dim, spec.storages);
        let ff = |d_in: usize, d_out: usize| FeedforwardSpec::policy(d_in, d_out, spec.hidden_layers, spec.neurons);
        Ok(match spec.kind {
            PolicyKind::PerStep => Policy::PerStep(PolicySet {
                nets: (0..spec.steps)
                    .map(|i| Feedforward::build(store, &format!("step{i}"), ff(p + m, m)))
                    .collect::<Result<_>>()?,
            }),
            PolicyKind::Merged => Policy::Merged(MergedPolicy {
                net: Feedforward::build(store, "merged", ff(1 + p + m, m))?,
                steps: spec.steps,
            }),
            PolicyKind::DeepSet => {
                let w = spec.deepset_width;
                let enc = FeedforwardSpec {
                    d_in: p + 1,
                    d_out: w,
                    hidden_layers: 1,
                    neurons: w,
                    hidden: Activation::Tanh,
                    output: Activation::Tanh,
                };
                let dec = FeedforwardSpec::policy(p + 1 + w, 1, 2, w);
                let mut encoders = Vec::with_capacity(spec.steps);
                let mut decoders = Vec::with_capacity(spec.steps);
                for i in 0..spec.steps {
                    encoders.push(Feedforward::build(store, &format!("step{i}.enc"), enc.clone())?);
                    decoders.push(Feedforward::build(store, &format!("step{i}.dec"), dec.clone())?);
                }
                Policy::DeepSet(DeepSetPolicy { encoders, decoders })
            }
            PolicyKind::LstmFf => {
                let cell = LstmCell::build(store, "lstm", p, spec.lstm_units);
                let heads = if spec.lstm_shared_head { 1 } else { spec.steps };
                Policy::LstmFf(LstmFfPolicy {
                    cell,
                    heads: (0..heads)
                        .map(|i| Feedforward::build(store, &format!("head{i}"), ff(spec.lstm_units + m, m)))
                        .collect::<Result<_>>()?,
                })
            }
        })
    }

    pub fn start(&self, tape: &mut Tape, batch: usize) -> PolicyState {
        match self {
            Policy::LstmFf(p) => PolicyState {
                lstm: Some(p.cell.zero_state(tape, batch)),
            },
            _ => PolicyState::default(),
        }
    }

    /// Unit controls `(B, M)` in `(0, 1)` at date `step`. `price` is
    /// `(B, price_dim)` and `stock` the normalized `(B, M)` levels.
    pub fn act(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &mut PolicyState,
        step: usize,
        price: NodeId,
        stock: NodeId,
        train: bool,
    ) -> NodeId {
        match self {
            Policy::PerStep(p) => {
                let x = tape.concat(&[price, stock]);
                p.nets[step].forward(tape, store, x, train)
            }
            Policy::Merged(p) => {
                let b = tape.value(price).rows;
                let t = step as f64 / (p.steps.max(2) - 1) as f64;
                let tn = tape.input(Tensor::filled(b, 1, t));
                let x = tape.concat(&[tn, price, stock]);
                p.net.forward(tape, store, x, train)
            }
            Policy::DeepSet(p) => p.forward(tape, store, step, price, stock, train),
            Policy::LstmFf(p) => {
                let s = state.lstm.expect("rollout not started");
                let s2 = p.cell.step(tape, store, s, price, train);
                state.lstm = Some(s2);
                let head = &p.heads[step.min(p.heads.len() - 1)];
                let x = tape.concat(&[s2.0, stock]);
                head.forward(tape, store, x, train)
            }
        }
    }

    /// Tape-free unit controls for a batch at date `step`. Recurrent
    /// policies need [`Policy::act`] with a live state instead.
    pub fn eval_step(&self, store: &ParamStore, step: usize, price: &Tensor, stock: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let mut st = self.start(&mut tape, price.rows);
        let p = tape.input(price.clone());
        let q = tape.input(stock.clone());
        let out = self.act(&mut tape, store, &mut st, step, p, q, false);
        tape.value(out).clone()
    }
}

impl DeepSetPolicy {
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        step: usize,
        price: NodeId,
        stock: NodeId,
        train: bool,
    ) -> NodeId {
        let m = tape.value(stock).cols;
        let own: Vec<NodeId> = (0..m).map(|j| tape.slice_cols(stock, j, 1)).collect();
        let codes: Vec<NodeId> = own
            .iter()
            .map(|&q| {
                let x = tape.concat(&[price, q]);
                self.encoders[step].forward(tape, store, x, train)
            })
            .collect();
        let agg = if m == 1 { codes[0] } else { tape.set_sum(&codes) };
        let outs: Vec<NodeId> = own
            .iter()
            .map(|&q| {
                let x = tape.concat(&[price, q, agg]);
                self.decoders[step].forward(tape, store, x, train)
            })
            .collect();
        tape.concat(&outs)
    }
}
