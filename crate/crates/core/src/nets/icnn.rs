//! Input-concave value networks.
//!
//! ```text
//! u_{i+1} = relu(W~_i u_i + b~_i)
//! z_{i+1} = rho( gate(W^z_i, W^zu_i u_i + b^z_i) z_i
//!              + W^y_i (y o (W^yu_i u_i + b^y_i)) + W^u_i u_i + b_i )
//! ```
//! with `u_0 = x` and `z_0 = 0`. The gate multiplies column `j` of `W^z_i`
//! by entry `j` of the gate vector and, for the concave kinds, keeps only
//! the positive part. Hidden activations: `min(., 0)` for the concave net,
//! ReLU for the free net, group minimum for GroupMax. The last layer is
//! linear, except for GroupMax which takes the minimum of its outputs.
//!
//! GroupMax bookkeeping: a hidden min layer turns `m_y` pre-activations
//! into `m_y / G` values, so every `W^z` after the first acts on `m_y / G`
//! columns.

use serde::{Deserialize, Serialize};

use super::{leaf, Activation};
use crate::autodiff::{Init, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum IcnnKind {
    Concave,
    Free,
    GroupMax { group: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcnnSpec {
    pub kind: IcnnKind,
    /// Width of the unconstrained input `x`.
    pub dx: usize,
    /// Width of the stock input `y`.
    pub dy: usize,
    pub m_x: usize,
    pub m_y: usize,
    /// Number of hidden layers `K`.
    pub layers: usize,
}

impl IcnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dx == 0 || self.dy == 0 || self.m_x == 0 || self.m_y == 0 {
            return Err(invalid(format!("degenerate value network {self:?}")));
        }
        if let IcnnKind::GroupMax { group } = self.kind {
            if group == 0 || self.m_y % group != 0 {
                return Err(invalid(format!("m_y = {} is not a multiple of G = {group}", self.m_y)));
            }
        }
        Ok(())
    }

    fn z_width(&self) -> usize {
        match self.kind {
            IcnnKind::GroupMax { group } => self.m_y / group,
            _ => self.m_y,
        }
    }

    fn out_width(&self, i: usize) -> usize {
        match self.kind {
            IcnnKind::GroupMax { .. } => self.m_y,
            _ if i == self.layers => 1,
            _ => self.m_y,
        }
    }

    fn u_width(&self, i: usize) -> usize {
        if i == 0 {
            self.dx
        } else {
            self.m_x
        }
    }
}

#[derive(Clone, Debug)]
struct ZLayer {
    /// `(W^z, W^zu, b^z)`, absent on the first layer where `z_0 = 0`.
    z: Option<(ParamId, ParamId, ParamId)>,
    wy: ParamId,
    wyu: ParamId,
    by: ParamId,
    wu: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Icnn {
    pub spec: IcnnSpec,
    tilde: Vec<(ParamId, ParamId)>,
    zl: Vec<ZLayer>,
    pub(crate) positive: bool,
    pub(crate) hidden: Activation,
}

/// Layer `i` frozen at one value of `x`: pre-activation
/// `a z + wy y + c` with `a` already gated.
pub(crate) struct LayerAt {
    pub out: usize,
    pub zin: usize,
    pub a: Vec<f64>,
    pub wy: Vec<f64>,
    pub c: Vec<f64>,
}

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl Icnn {
    pub fn build(store: &mut ParamStore, prefix: &str, spec: IcnnSpec) -> Result<Self> {
        spec.validate()?;
        let mut tilde = Vec::new();
        let mut zl = Vec::new();
        for i in 0..=spec.layers {
            let ux = spec.u_width(i);
            let out = spec.out_width(i);
            let p = |n: &str| format!("{prefix}.z{i}.{n}");
            let z = if i > 0 {
                let zin = spec.z_width();
                Some((
                    store.add(p("wz"), out, zin, Init::Glorot),
                    store.add(p("wzu"), zin, ux, Init::Glorot),
                    store.add(p("bz"), 1, zin, Init::Constant(1.0)),
                ))
            } else {
                None
            };
            zl.push(ZLayer {
                z,
                wy: store.add(p("wy"), out, spec.dy, Init::Glorot),
                wyu: store.add(p("wyu"), spec.dy, ux, Init::Glorot),
                by: store.add(p("by"), 1, spec.dy, Init::Constant(1.0)),
                wu: store.add(p("wu"), out, ux, Init::Glorot),
                b: store.add(p("b"), 1, out, Init::Zeros),
            });
            if i < spec.layers {
                tilde.push((
                    store.add(format!("{prefix}.u{i}.w"), spec.m_x, ux, Init::Glorot),
                    store.add(format!("{prefix}.u{i}.b"), 1, spec.m_x, Init::Zeros),
                ));
            }
        }
        let (positive, hidden) = match spec.kind {
            IcnnKind::Concave => (true, Activation::MinZero),
            IcnnKind::Free => (false, Activation::Relu),
            IcnnKind::GroupMax { .. } => (true, Activation::Identity),
        };
        Ok(Self {
            spec,
            tilde,
            zl,
            positive,
            hidden,
        })
    }

    /// `(B, 1)` values for `x: (B, dx)` and `y: (B, dy)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, y: NodeId, train: bool) -> NodeId {
        let mut u = x;
        let mut z: Option<NodeId> = None;
        let k_last = self.spec.layers;
        for (i, l) in self.zl.iter().enumerate() {
            let wu = leaf(tape, store, l.wu, train);
            let b = leaf(tape, store, l.b, train);
            let mut pre = tape.affine(u, wu, b);
            let wyu = leaf(tape, store, l.wyu, train);
            let by = leaf(tape, store, l.by, train);
            let gy = tape.affine(u, wyu, by);
            let yg = tape.mul(y, gy);
            let wy = leaf(tape, store, l.wy, train);
            let yt = tape.linear(yg, wy);
            pre = tape.add(pre, yt);
            if let (Some((wz, wzu, bz)), Some(zv)) = (l.z, z) {
                let wzu = leaf(tape, store, wzu, train);
                let bz = leaf(tape, store, bz, train);
                let gz = tape.affine(u, wzu, bz);
                let wz = leaf(tape, store, wz, train);
                let zt = tape.gated(wz, gz, zv, self.positive);
                pre = tape.add(pre, zt);
            }
            let act = match (self.spec.kind, i == k_last) {
                (IcnnKind::GroupMax { .. }, true) => tape.group_min(pre, self.spec.m_y),
                (IcnnKind::GroupMax { group }, false) => tape.group_min(pre, group),
                (_, true) => pre,
                (_, false) => self.hidden.apply(tape, pre),
            };
            z = Some(act);
            if i < k_last {
                let (w, b) = self.tilde[i];
                let w = leaf(tape, store, w, train);
                let b = leaf(tape, store, b, train);
                let a = tape.affine(u, w, b);
                u = tape.relu(a);
            }
        }
        z.expect("at least one layer")
    }

    pub fn eval(&self, store: &ParamStore, x: &Tensor, y: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let yn = tape.input(y.clone());
        let out = self.forward(&mut tape, store, xn, yn, false);
        tape.value(out).data.clone()
    }

    /// Every layer with the `x` path evaluated at one point.
    pub(crate) fn freeze_at(&self, store: &ParamStore, x: &[f64]) -> Vec<LayerAt> {
        let s = &self.spec;
        let mut u = x.to_vec();
        let mut layers = Vec::with_capacity(self.zl.len());
        for (i, l) in self.zl.iter().enumerate() {
            let out = s.out_width(i);
            let mut c = matvec(store.get(l.wu), out, &u);
            for (v, b) in c.iter_mut().zip(store.get(l.b)) {
                *v += b;
            }
            let mut gy = matvec(store.get(l.wyu), s.dy, &u);
            for (v, b) in gy.iter_mut().zip(store.get(l.by)) {
                *v += b;
            }
            let wy_raw = store.get(l.wy);
            let wy: Vec<f64> = (0..out * s.dy).map(|k| wy_raw[k] * gy[k % s.dy]).collect();
            let (zin, a) = match l.z {
                Some((wz, wzu, bz)) => {
                    let zin = s.z_width();
                    let mut gz = matvec(store.get(wzu), zin, &u);
                    for (v, b) in gz.iter_mut().zip(store.get(bz)) {
                        *v += b;
                    }
                    let wz = store.get(wz);
                    let a = (0..out * zin)
                        .map(|k| {
                            let v = wz[k] * gz[k % zin];
                            if self.positive {
                                v.max(0.0)
                            } else {
                                v
                            }
                        })
                        .collect();
                    (zin, a)
                }
                None => (0, Vec::new()),
            };
            layers.push(LayerAt { out, zin, a, wy, c });
            if i < s.layers {
                let (w, b) = self.tilde[i];
                let mut next = matvec(store.get(w), s.m_x, &u);
                for (v, b) in next.iter_mut().zip(store.get(b)) {
                    *v = (*v + b).max(0.0);
                }
                u = next;
            }
        }
        layers
    }
}
