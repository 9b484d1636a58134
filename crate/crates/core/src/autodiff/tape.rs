//! Reverse-mode tape over batched dense values.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep. Every
//! value is a `rows x cols` matrix; batched quantities carry one row per
//! sample, parameters are leaves copied from a [`ParamStore`].
//!
//! Kinks: `relu`, `min`, `max` and the group minimum send the whole
//! gradient to one branch. On ties the first operand (the unclipped
//! argument for `min_const`/`max_const`, the lowest index for group
//! minima) receives it.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Elu,
    Sigmoid,
    Neg,
    Square,
    Exp,
    /// `min(x, 0)`
    MinZero,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Constant input.
    Leaf,
    Param {
        id: ParamId,
        tag: u64,
    },
    /// `x W^T` with `x: (B, in)` and `W: (out, in)`.
    Linear {
        x: NodeId,
        w: NodeId,
    },
    /// Elementwise, with broadcasting of unit dimensions.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Unary(NodeId, Unary),
    /// `min(x, c_j)` per column.
    MinConst(NodeId, Vec<f64>),
    /// `max(x, c_j)` per column.
    MaxConst(NodeId, Vec<f64>),
    Min(NodeId, NodeId),
    /// Minimum over consecutive column groups of the given size.
    GroupMin(NodeId, usize),
    RowSum(NodeId),
    MeanRows(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// `out[b, i] = sum_j h(w[i, j] * gate[b, j]) * z[b, j]` with `h` the
    /// positive part when `positive`, identity otherwise.
    Gated {
        w: NodeId,
        gate: NodeId,
        z: NodeId,
        positive: bool,
    },
    /// Sum of same-shaped operands accumulated in sorted order, which makes
    /// the result bitwise invariant under permutation of the operands.
    SetSum(Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

#[inline]
fn bidx(t: &Tensor, r: usize, c: usize) -> usize {
    let r = if t.rows == 1 { 0 } else { r };
    let c = if t.cols == 1 { 0 } else { c };
    r * t.cols + c
}

fn unary_fwd(k: Unary, x: f64) -> f64 {
    match k {
        Unary::Tanh => x.tanh(),
        Unary::Relu => x.max(0.0),
        Unary::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp_m1()
            }
        }
        Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Unary::Neg => -x,
        Unary::Square => x * x,
        Unary::Exp => x.exp(),
        Unary::MinZero => x.min(0.0),
    }
}

/// Derivative from the input `x` and the cached output `y`.
fn unary_bwd(k: Unary, x: f64, y: f64) -> f64 {
    match k {
        Unary::Tanh => 1.0 - y * y,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Neg => -1.0,
        Unary::Square => 2.0 * x,
        Unary::Exp => y,
        Unary::MinZero => {
            if x < 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| shape_err("input", format!("node {} does not precede the new node", id.0)))
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Trainable parameter leaf; its gradient flows back into `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let s = store.slice_info(id);
        let value = Tensor::from_vec(s.rows, s.cols, store.get(id).to_vec());
        self.push(Op::Param { id, tag: store.tag() }, value)
    }

    /// Parameter copied in as a constant: gradients stop here.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let s = store.slice_info(id);
        let value = Tensor::from_vec(s.rows, s.cols, store.get(id).to_vec());
        self.push(Op::Leaf, value)
    }

    /// Checked entry point: evaluates `op` on already recorded nodes.
    pub fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = self.forward(&op)?;
        Ok(self.push(op, value))
    }

    fn forward(&self, op: &Op) -> Result<Tensor> {
        Ok(match op {
            Op::Leaf | Op::Param { .. } => {
                return Err(shape_err("record", "leaves are created with input/param".into()))
            }
            Op::Linear { x, w } => {
                let (xv, wv) = (self.check(*x)?, self.check(*w)?);
                if xv.cols != wv.cols {
                    return Err(shape_err(
                        "linear",
                        format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
                    ));
                }
                let mut out = Tensor::zeros(xv.rows, wv.rows);
                for b in 0..xv.rows {
                    let xr = xv.row(b);
                    for o in 0..wv.rows {
                        let wr = wv.row(o);
                        let mut acc = 0.0;
                        for i in 0..xr.len() {
                            acc += xr[i] * wr[i];
                        }
                        out.data[b * wv.rows + o] = acc;
                    }
                }
                out
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (av, bv) = (self.check(*a)?, self.check(*b)?);
                let name = match op {
                    Op::Add(..) => "add",
                    Op::Sub(..) => "sub",
                    _ => "mul",
                };
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                if av.shape() == bv.shape() {
                    Tensor::from_vec(
                        av.rows,
                        av.cols,
                        av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
                    )
                } else {
                    let (r, c) = broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
                        shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape()))
                    })?;
                    let mut out = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            out.data[i * c + j] = f(av.data[bidx(av, i, j)], bv.data[bidx(bv, i, j)]);
                        }
                    }
                    out
                }
            }
            Op::Scale(a, s) => self.check(*a)?.map(|v| v * s),
            Op::Offset(a, s) => self.check(*a)?.map(|v| v + s),
            Op::Unary(a, k) => self.check(*a)?.map(|v| unary_fwd(*k, v)),
            Op::MinConst(a, c) | Op::MaxConst(a, c) => {
                let av = self.check(*a)?;
                if c.len() != av.cols {
                    return Err(shape_err("clamp", format!("{} constants for {} columns", c.len(), av.cols)));
                }
                let is_min = matches!(op, Op::MinConst(..));
                let mut out = av.clone();
                for (k, v) in out.data.iter_mut().enumerate() {
                    let cj = c[k % av.cols];
                    *v = if is_min { v.min(cj) } else { v.max(cj) };
                }
                out
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.check(*a)?, self.check(*b)?);
                if av.shape() != bv.shape() {
                    return Err(shape_err("min", format!("{:?} vs {:?}", av.shape(), bv.shape())));
                }
                Tensor::from_vec(
                    av.rows,
                    av.cols,
                    av.data.iter().zip(&bv.data).map(|(&x, &y)| if x <= y { x } else { y }).collect(),
                )
            }
            Op::GroupMin(a, g) => {
                let av = self.check(*a)?;
                if *g == 0 || av.cols % g != 0 {
                    return Err(shape_err("group_min", format!("width {} not divisible by {}", av.cols, g)));
                }
                let groups = av.cols / g;
                let mut out = Tensor::zeros(av.rows, groups);
                for b in 0..av.rows {
                    let r = av.row(b);
                    for k in 0..groups {
                        let mut m = r[k * g];
                        for &v in &r[k * g + 1..(k + 1) * g] {
                            if v < m {
                                m = v;
                            }
                        }
                        out.data[b * groups + k] = m;
                    }
                }
                out
            }
            Op::RowSum(a) => {
                let av = self.check(*a)?;
                Tensor::column((0..av.rows).map(|b| av.row(b).iter().sum()).collect())
            }
            Op::MeanRows(a) => {
                let av = self.check(*a)?;
                let mut out = Tensor::zeros(1, av.cols);
                for b in 0..av.rows {
                    for (o, v) in out.data.iter_mut().zip(av.row(b)) {
                        *o += v;
                    }
                }
                let n = av.rows.max(1) as f64;
                out.data.iter_mut().for_each(|v| *v /= n);
                out
            }
            Op::Sum(a) => Tensor::scalar(self.check(*a)?.data.iter().sum()),
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(shape_err("concat", "no operands".into()));
                }
                let rows = self.check(parts[0])?.rows;
                let mut cols = 0;
                for p in parts {
                    let v = self.check(*p)?;
                    if v.rows != rows {
                        return Err(shape_err("concat", format!("row counts {} vs {}", rows, v.rows)));
                    }
                    cols += v.cols;
                }
                let mut out = Tensor::zeros(rows, cols);
                for b in 0..rows {
                    let mut off = 0;
                    for p in parts {
                        let v = &self.nodes[p.0].value;
                        out.data[b * cols + off..b * cols + off + v.cols].copy_from_slice(v.row(b));
                        off += v.cols;
                    }
                }
                out
            }
            Op::SliceCols { x, start, len } => {
                let xv = self.check(*x)?;
                if start + len > xv.cols || *len == 0 {
                    return Err(shape_err("slice", format!("{}..{} of {} columns", start, start + len, xv.cols)));
                }
                let mut out = Tensor::zeros(xv.rows, *len);
                for b in 0..xv.rows {
                    out.data[b * len..(b + 1) * len].copy_from_slice(&xv.row(b)[*start..start + len]);
                }
                out
            }
            Op::Gated { w, gate, z, positive } => {
                let (wv, gv, zv) = (self.check(*w)?, self.check(*gate)?, self.check(*z)?);
                if gv.shape() != zv.shape() || wv.cols != zv.cols {
                    return Err(shape_err(
                        "gated",
                        format!("w {:?} gate {:?} z {:?}", wv.shape(), gv.shape(), zv.shape()),
                    ));
                }
                let mut out = Tensor::zeros(zv.rows, wv.rows);
                for b in 0..zv.rows {
                    let (gr, zr) = (gv.row(b), zv.row(b));
                    for i in 0..wv.rows {
                        let wr = wv.row(i);
                        let mut acc = 0.0;
                        for j in 0..wr.len() {
                            let a = wr[j] * gr[j];
                            let h = if *positive { a.max(0.0) } else { a };
                            acc += h * zr[j];
                        }
                        out.data[b * wv.rows + i] = acc;
                    }
                }
                out
            }
            Op::SetSum(parts) => {
                if parts.is_empty() {
                    return Err(shape_err("set_sum", "no operands".into()));
                }
                let shape = self.check(parts[0])?.shape();
                for p in parts {
                    if self.check(*p)?.shape() != shape {
                        return Err(shape_err("set_sum", "operands differ in shape".into()));
                    }
                }
                let mut out = Tensor::zeros(shape.0, shape.1);
                let mut buf = Vec::with_capacity(parts.len());
                for k in 0..out.data.len() {
                    buf.clear();
                    buf.extend(parts.iter().map(|p| self.nodes[p.0].value.data[k]));
                    buf.sort_by(f64::total_cmp);
                    out.data[k] = buf.iter().sum();
                }
                out
            }
        })
    }

    fn must(&mut self, op: Op) -> NodeId {
        match self.record(op) {
            Ok(id) => id,
            Err(e) => panic!("{e}"),
        }
    }

    // Convenience recorders; they panic on shape errors, `record` does not.

    pub fn linear(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.must(Op::Linear { x, w })
    }

    /// `x W^T + b` with the bias broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let y = self.linear(x, w);
        self.add(y, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.must(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.must(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.must(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.must(Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: NodeId, s: f64) -> NodeId {
        self.must(Op::Offset(a, s))
    }

    pub fn unary(&mut self, a: NodeId, k: Unary) -> NodeId {
        self.must(Op::Unary(a, k))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Square)
    }

    pub fn min_const(&mut self, a: NodeId, c: Vec<f64>) -> NodeId {
        self.must(Op::MinConst(a, c))
    }

    pub fn max_const(&mut self, a: NodeId, c: Vec<f64>) -> NodeId {
        self.must(Op::MaxConst(a, c))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.must(Op::Min(a, b))
    }

    pub fn group_min(&mut self, a: NodeId, group: usize) -> NodeId {
        self.must(Op::GroupMin(a, group))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        self.must(Op::RowSum(a))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        self.must(Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.must(Op::Sum(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        if parts.len() == 1 {
            return parts[0];
        }
        self.must(Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.must(Op::SliceCols { x, start, len })
    }

    pub fn gated(&mut self, w: NodeId, gate: NodeId, z: NodeId, positive: bool) -> NodeId {
        self.must(Op::Gated { w, gate, z, positive })
    }

    pub fn set_sum(&mut self, parts: &[NodeId]) -> NodeId {
        self.must(Op::SetSum(parts.to_vec()))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn gradients(&self, output: NodeId) -> Result<Vec<Option<Tensor>>> {
        let out = self.check(output)?;
        if out.len() != 1 {
            return Err(shape_err("backward", format!("output must be scalar, got {:?}", out.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.rows, out.cols, 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulates d(output)/d(theta) into the gradient buffer of `store`.
    pub fn backward(&self, output: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(output)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param { id, tag }, Some(g)) = (&node.op, g) {
                if *tag == store.tag() {
                    for (acc, v) in store.grad_mut(*id).iter_mut().zip(&g.data) {
                        *acc += v;
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut Tensor)| {
            let v = &self.nodes[id.0].value;
            let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(v.rows, v.cols));
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Linear { x, w } => {
                let (xv, wv) = (val(*x), val(*w));
                let (nb, nout, nin) = (xv.rows, wv.rows, wv.cols);
                acc(*x, &mut |gx| {
                    for b in 0..nb {
                        let gr = g.row(b);
                        let gxr = &mut gx.data[b * nin..(b + 1) * nin];
                        for o in 0..nout {
                            let go = gr[o];
                            if go == 0.0 {
                                continue;
                            }
                            for (dst, &wi) in gxr.iter_mut().zip(wv.row(o)) {
                                *dst += go * wi;
                            }
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for b in 0..nb {
                        let gr = g.row(b);
                        let xr = xv.row(b);
                        for o in 0..nout {
                            let go = gr[o];
                            if go == 0.0 {
                                continue;
                            }
                            for (dst, &xi) in gw.data[o * nin..(o + 1) * nin].iter_mut().zip(xr) {
                                *dst += go * xi;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let kind = match &node.op {
                    Op::Add(..) => 0,
                    Op::Sub(..) => 1,
                    _ => 2,
                };
                let (r, c) = (g.rows, g.cols);
                let same = av.shape() == bv.shape() && av.shape() == g.shape();
                acc(*a, &mut |ga| {
                    if same {
                        for k in 0..g.data.len() {
                            ga.data[k] += if kind == 2 { g.data[k] * bv.data[k] } else { g.data[k] };
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                let gk = g.data[i * c + j];
                                let d = if kind == 2 { gk * bv.data[bidx(bv, i, j)] } else { gk };
                                ga.data[bidx(av, i, j)] += d;
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    if same {
                        for k in 0..g.data.len() {
                            gb.data[k] += match kind {
                                0 => g.data[k],
                                1 => -g.data[k],
                                _ => g.data[k] * av.data[k],
                            };
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                let gk = g.data[i * c + j];
                                let d = match kind {
                                    0 => gk,
                                    1 => -gk,
                                    _ => gk * av.data[bidx(av, i, j)],
                                };
                                gb.data[bidx(bv, i, j)] += d;
                            }
                        }
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| {
                for (d, &gk) in ga.data.iter_mut().zip(&g.data) {
                    *d += gk * s;
                }
            }),
            Op::Offset(a, _) => acc(*a, &mut |ga| {
                for (d, &gk) in ga.data.iter_mut().zip(&g.data) {
                    *d += gk;
                }
            }),
            Op::Unary(a, k) => {
                let (xv, yv) = (val(*a), &node.value);
                acc(*a, &mut |ga| {
                    for idx in 0..g.data.len() {
                        ga.data[idx] += g.data[idx] * unary_bwd(*k, xv.data[idx], yv.data[idx]);
                    }
                });
            }
            Op::MinConst(a, c) | Op::MaxConst(a, c) => {
                let xv = val(*a);
                let is_min = matches!(node.op, Op::MinConst(..));
                acc(*a, &mut |ga| {
                    for idx in 0..g.data.len() {
                        let cj = c[idx % xv.cols];
                        let x = xv.data[idx];
                        let pass = if is_min { x <= cj } else { x >= cj };
                        if pass {
                            ga.data[idx] += g.data[idx];
                        }
                    }
                });
            }
            Op::Min(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for idx in 0..g.data.len() {
                        if av.data[idx] <= bv.data[idx] {
                            ga.data[idx] += g.data[idx];
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for idx in 0..g.data.len() {
                        if av.data[idx] > bv.data[idx] {
                            gb.data[idx] += g.data[idx];
                        }
                    }
                });
            }
            Op::GroupMin(a, gs) => {
                let xv = val(*a);
                let groups = xv.cols / gs;
                acc(*a, &mut |ga| {
                    for b in 0..xv.rows {
                        let r = xv.row(b);
                        for k in 0..groups {
                            let mut arg = k * gs;
                            for j in k * gs + 1..(k + 1) * gs {
                                if r[j] < r[arg] {
                                    arg = j;
                                }
                            }
                            ga.data[b * xv.cols + arg] += g.data[b * groups + k];
                        }
                    }
                });
            }
            Op::RowSum(a) => {
                let xv = val(*a);
                acc(*a, &mut |ga| {
                    for b in 0..xv.rows {
                        for j in 0..xv.cols {
                            ga.data[b * xv.cols + j] += g.data[b];
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let xv = val(*a);
                let n = xv.rows.max(1) as f64;
                acc(*a, &mut |ga| {
                    for b in 0..xv.rows {
                        for j in 0..xv.cols {
                            ga.data[b * xv.cols + j] += g.data[j] / n;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gk = g.data[0];
                acc(*a, &mut |ga| ga.data.iter_mut().for_each(|d| *d += gk));
            }
            Op::Concat(parts) => {
                let cols = g.cols;
                let mut off = 0;
                for p in parts {
                    let pc = val(*p).cols;
                    acc(*p, &mut |gp| {
                        for b in 0..g.rows {
                            for j in 0..pc {
                                gp.data[b * pc + j] += g.data[b * cols + off + j];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceCols { x, start, len } => {
                let xc = val(*x).cols;
                acc(*x, &mut |gx| {
                    for b in 0..g.rows {
                        for j in 0..*len {
                            gx.data[b * xc + start + j] += g.data[b * len + j];
                        }
                    }
                });
            }
            Op::Gated { w, gate, z, positive } => {
                let (wv, gv, zv) = (val(*w), val(*gate), val(*z));
                let (nb, nout, n) = (zv.rows, wv.rows, wv.cols);
                let active = |a: f64| if *positive { a > 0.0 } else { true };
                acc(*z, &mut |gz| {
                    for b in 0..nb {
                        for i in 0..nout {
                            let go = g.data[b * nout + i];
                            for j in 0..n {
                                let a = wv.data[i * n + j] * gv.data[b * n + j];
                                if active(a) {
                                    gz.data[b * n + j] += go * a;
                                }
                            }
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for b in 0..nb {
                        for i in 0..nout {
                            let go = g.data[b * nout + i];
                            for j in 0..n {
                                let a = wv.data[i * n + j] * gv.data[b * n + j];
                                if active(a) {
                                    gw.data[i * n + j] += go * gv.data[b * n + j] * zv.data[b * n + j];
                                }
                            }
                        }
                    }
                });
                acc(*gate, &mut |gg| {
                    for b in 0..nb {
                        for i in 0..nout {
                            let go = g.data[b * nout + i];
                            for j in 0..n {
                                let a = wv.data[i * n + j] * gv.data[b * n + j];
                                if active(a) {
                                    gg.data[b * n + j] += go * wv.data[i * n + j] * zv.data[b * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::SetSum(parts) => {
                for p in parts {
                    acc(*p, &mut |gp| {
                        for (d, &gk) in gp.data.iter_mut().zip(&g.data) {
                            *d += gk;
                        }
                    });
                }
            }
        }
    }
}
