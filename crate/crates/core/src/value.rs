//! Fitted Bellman values: a value network plus the affine maps between
//! model units and network units.

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, LrSchedule, NodeId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::gv::LogEntry;
use crate::rng::{derive_seed, domain, StreamRng};
use crate::nets::{extract_cuts, CutSet, Feedforward, FeedforwardSpec, Icnn, IcnnKind, IcnnSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Feedforward,
    Concave,
    Free,
    GroupMax,
}

impl std::str::FromStr for ValueKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedforward" | "ff" => Ok(Self::Feedforward),
            "concave" | "psi-a" => Ok(Self::Concave),
            "free" | "psi-ad" => Ok(Self::Free),
            "group-max" | "groupmax" | "psi-gm" => Ok(Self::GroupMax),
            _ => Err(crate::error::invalid(format!("unknown value network {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSpec {
    pub kind: ValueKind,
    pub layers: usize,
    /// Feedforward width, or `m_x` for the input-concave kinds.
    pub neurons: usize,
    pub m_y: usize,
    pub group: usize,
}

impl ValueSpec {
    pub fn feedforward(layers: usize, neurons: usize) -> Self {
        Self {
            kind: ValueKind::Feedforward,
            layers,
            neurons,
            m_y: 0,
            group: 1,
        }
    }

    pub fn icnn(kind: ValueKind, layers: usize, m_x: usize, m_y: usize, group: usize) -> Self {
        Self {
            kind,
            layers,
            neurons: m_x,
            m_y,
            group,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ValueNet {
    Feedforward(Feedforward),
    Icnn(Icnn),
}

impl ValueNet {
    pub fn build(store: &mut ParamStore, spec: &ValueSpec, dx: usize, dy: usize) -> Result<Self> {
        let icnn = |kind| {
            IcnnSpec {
                kind,
                dx,
                dy,
                m_x: spec.neurons,
                m_y: spec.m_y,
                layers: spec.layers,
            }
        };
        Ok(match spec.kind {
            ValueKind::Feedforward => {
                ValueNet::Feedforward(Feedforward::build(store, "vb", FeedforwardSpec::regression(dx + dy, spec.layers, spec.neurons))?)
            }
            ValueKind::Concave => ValueNet::Icnn(Icnn::build(store, "vb", icnn(IcnnKind::Concave))?),
            ValueKind::Free => ValueNet::Icnn(Icnn::build(store, "vb", icnn(IcnnKind::Free))?),
            ValueKind::GroupMax => ValueNet::Icnn(Icnn::build(store, "vb", icnn(IcnnKind::GroupMax { group: spec.group }))?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, y: NodeId, train: bool) -> NodeId {
        match self {
            ValueNet::Feedforward(f) => {
                let xy = tape.concat(&[x, y]);
                f.forward(tape, store, xy, train)
            }
            ValueNet::Icnn(n) => n.forward(tape, store, x, y, train),
        }
    }
}

/// `value(x, q) = mean + scale * net(x / x_scale, q / q_max)`.
#[derive(Clone, Debug)]
pub struct FittedValue {
    pub spec: ValueSpec,
    pub net: ValueNet,
    pub store: ParamStore,
    pub x_scale: Vec<f64>,
    pub q_max: Vec<f64>,
    pub mean: f64,
    pub scale: f64,
}

impl FittedValue {
    fn inputs(&self, tape: &mut Tape, x: &Tensor, q: NodeId) -> (NodeId, NodeId) {
        let xs = Tensor::from_vec(
            x.rows,
            x.cols,
            x.data.iter().enumerate().map(|(k, v)| v / self.x_scale[k % x.cols]).collect(),
        );
        let xn = tape.input(xs);
        let inv = tape.input(Tensor::row_vector(self.q_max.iter().map(|m| 1.0 / m).collect()));
        let yn = tape.mul(q, inv);
        (xn, yn)
    }

    /// Value in money units; differentiable in `q`, parameters frozen.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, q: NodeId) -> NodeId {
        let (xn, yn) = self.inputs(tape, x, q);
        let raw = self.net.forward(tape, &self.store, xn, yn, false);
        let scaled = tape.scale(raw, self.scale);
        tape.offset(scaled, self.mean)
    }

    pub fn eval(&self, x: &Tensor, q: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let qn = tape.input(q.clone());
        let out = self.forward(&mut tape, x, qn);
        tape.value(out).data.clone()
    }

    /// Cuts in raw stock units at the uncertainty state `x`.
    pub fn cuts(&self, x: &[f64], cap: usize) -> Result<CutSet> {
        let ValueNet::Icnn(net) = &self.net else {
            return Err(crate::error::invalid("cuts need a GroupMax value network"));
        };
        let xn: Vec<f64> = x.iter().zip(&self.x_scale).map(|(v, s)| v / s).collect();
        Ok(extract_cuts(net, &self.store, &xn, cap)?.rescaled(self.mean, self.scale, &self.q_max))
    }
}

/// Samples in row-major order: `x` is `n x dx`, `y` is `n x dy`.
pub struct RegressionData<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub targets: &'a [f64],
    pub x_scale: Vec<f64>,
    pub q_max: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct RegressionConfig {
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub log_every: usize,
}

/// Minibatch least squares of `targets` on `(x, y)` over a fixed sample
/// pool. The log holds the minibatch MSE in normalized target units.
pub fn fit_value(spec: &ValueSpec, data: &RegressionData, cfg: &RegressionConfig) -> Result<(FittedValue, Vec<LogEntry>)> {
    let n = data.targets.len();
    let (dx, dy) = (data.x_scale.len(), data.q_max.len());
    if n == 0 || data.x.len() != n * dx || data.y.len() != n * dy || cfg.batch == 0 {
        return Err(invalid("regression data has inconsistent sizes"));
    }
    let mean = data.targets.iter().sum::<f64>() / n as f64;
    let sd = (data.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 1e-9 * mean.abs().max(1.0) { sd } else { 1.0 };
    let xn: Vec<f64> = data.x.iter().enumerate().map(|(k, v)| v / data.x_scale[k % dx]).collect();
    let yn: Vec<f64> = data.y.iter().enumerate().map(|(k, v)| v / data.q_max[k % dy]).collect();
    let tn: Vec<f64> = data.targets.iter().map(|t| (t - mean) / scale).collect();

    let mut store = ParamStore::new(derive_seed(cfg.seed, domain::INIT));
    let net = ValueNet::build(&mut store, spec, dx, dy)?;
    let mut adam = AdamState::new(
        store.len(),
        AdamConfig {
            schedule: cfg.schedule,
            ..AdamConfig::constant(0.0)
        },
    );
    let mut rng = StreamRng::new(derive_seed(cfg.seed, domain::REGRESS), 0);
    let b = cfg.batch.min(n);
    let mut log = Vec::new();
    let mut tape = Tape::new();
    for it in 0..cfg.iterations {
        let idx: Vec<usize> = (0..b).map(|_| rng.below(n)).collect();
        let pick = |src: &[f64], w: usize| {
            Tensor::from_vec(b, w, idx.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect())
        };
        tape.clear();
        let x = tape.input(pick(&xn, dx));
        let y = tape.input(pick(&yn, dy));
        let t = tape.input(pick(&tn, 1));
        let out = net.forward(&mut tape, &store, x, y, true);
        let diff = tape.sub(out, t);
        let sq = tape.square(diff);
        let loss = tape.mean_rows(sq);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("regression loss is {lv}"),
            });
        }
        if it % cfg.log_every.max(1) == 0 || it + 1 == cfg.iterations {
            log.push(LogEntry { iteration: it, loss: lv });
            log::debug!("value regression iteration {it}: mse {lv:.5}");
        }
        store.zero_grads();
        tape.backward(loss, &mut store)?;
        adam_step(&mut store, &mut adam);
    }
    Ok((
        FittedValue {
            spec: spec.clone(),
            net,
            store,
            x_scale: data.x_scale.clone(),
            q_max: data.q_max.clone(),
            mean,
            scale,
        },
        log,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::DEFAULT_CUT_CAP;

    #[test]
    fn cuts_follow_the_unit_maps() {
        let spec = ValueSpec::icnn(ValueKind::GroupMax, 1, 4, 4, 2);
        let mut store = ParamStore::new(3);
        let net = ValueNet::build(&mut store, &spec, 1, 1).unwrap();
        let fv = FittedValue {
            spec,
            net,
            store,
            x_scale: vec![0.5],
            q_max: vec![100.0],
            mean: 1000.0,
            scale: 250.0,
        };
        let cs = fv.cuts(&[0.2], DEFAULT_CUT_CAP).unwrap();
        let qs: Vec<f64> = (0..=20).map(|k| 5.0 * k as f64).collect();
        let v = fv.eval(&Tensor::filled(21, 1, 0.2), &Tensor::column(qs.clone()));
        for (q, v) in qs.iter().zip(v) {
            assert!((cs.value(&[*q]) - v).abs() < 1e-9 * v.abs());
        }
    }
}
