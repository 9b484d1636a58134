use serde::{Deserialize, Serialize};

use super::leaf;
use crate::autodiff::{Init, NodeId, ParamId, ParamStore, Tape, Tensor};

/// Standard LSTM cell. Gate blocks are stacked as `[input, forget, cell,
/// output]` in the rows of `w` and `u`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmCell {
    pub input: usize,
    pub units: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl LstmCell {
    pub fn build(store: &mut ParamStore, prefix: &str, input: usize, units: usize) -> Self {
        let w = store.add(format!("{prefix}.w"), 4 * units, input, Init::Glorot);
        let u = store.add(format!("{prefix}.u"), 4 * units, units, Init::Glorot);
        let b = store.add(format!("{prefix}.b"), 1, 4 * units, Init::Zeros);
        Self { input, units, w, u, b }
    }

    /// Zero `(h, c)` for a batch.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> (NodeId, NodeId) {
        let h = tape.input(Tensor::zeros(batch, self.units));
        let c = tape.input(Tensor::zeros(batch, self.units));
        (h, c)
    }

    /// One step; returns the new `(h, c)`. `h` doubles as the feature output.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: (NodeId, NodeId),
        x: NodeId,
        train: bool,
    ) -> (NodeId, NodeId) {
        let (h, c) = state;
        let n = self.units;
        let w = leaf(tape, store, self.w, train);
        let u = leaf(tape, store, self.u, train);
        let b = leaf(tape, store, self.b, train);
        let wx = tape.affine(x, w, b);
        let uh = tape.linear(h, u);
        let pre = tape.add(wx, uh);
        let gi = tape.slice_cols(pre, 0, n);
        let gf = tape.slice_cols(pre, n, n);
        let gg = tape.slice_cols(pre, 2 * n, n);
        let go = tape.slice_cols(pre, 3 * n, n);
        let i = tape.sigmoid(gi);
        let f = tape.sigmoid(gf);
        let g = tape.tanh(gg);
        let o = tape.sigmoid(go);
        let keep = tape.mul(f, c);
        let write = tape.mul(i, g);
        let c2 = tape.add(keep, write);
        let squashed = tape.tanh(c2);
        let h2 = tape.mul(o, squashed);
        (h2, c2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::gradcheck::max_relative_error;

    #[test]
    fn zero_weights_give_zero_features() {
        let mut s = ParamStore::new(1);
        let cell = LstmCell::build(&mut s, "lstm", 1, 50);
        s.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut t = Tape::new();
        let mut st = cell.zero_state(&mut t, 3);
        for k in 0..4 {
            let x = t.input(Tensor::column(vec![k as f64, -2.0, 0.5]));
            st = cell.step(&mut t, &s, st, x, false);
        }
        assert!(t.value(st.0).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_contracts() {
        let mut s = ParamStore::new(8);
        let cell = LstmCell::build(&mut s, "lstm", 1, 50);
        let mut t = Tape::new();
        let mut st = cell.zero_state(&mut t, 1);
        let mut diffs = Vec::new();
        let mut prev_h = t.value(st.0).data.clone();
        let mut prev_c = t.value(st.1).data.clone();
        for _ in 0..40 {
            let x = t.input(Tensor::scalar(0.7));
            st = cell.step(&mut t, &s, st, x, false);
            let h = t.value(st.0).data.clone();
            let c = t.value(st.1).data.clone();
            for v in &h {
                assert!(v.abs() < 1.0);
            }
            let d: f64 = h
                .iter()
                .zip(&prev_h)
                .chain(c.iter().zip(&prev_c))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            diffs.push(d);
            prev_h = h;
            prev_c = c;
        }
        assert!(diffs[39] < diffs[5] && diffs[39] < 1e-3, "{diffs:?}");
    }

    #[test]
    fn gradient_check() {
        let mut s = ParamStore::new(2);
        let cell = LstmCell::build(&mut s, "lstm", 1, 5);
        let err = max_relative_error(&mut s, |t, st| {
            let mut state = cell.zero_state(t, 2);
            for k in 0..3 {
                let x = t.input(Tensor::column(vec![0.3 * k as f64, -0.8]));
                state = cell.step(t, st, state, x, true);
            }
            let sq = t.square(state.0);
            t.sum(sq)
        });
        assert!(err < 1e-6, "{err}");
    }
}
