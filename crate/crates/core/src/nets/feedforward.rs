use serde::{Deserialize, Serialize};

use super::{leaf, Activation};
use crate::autodiff::{Init, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub hidden: Activation,
    pub output: Activation,
}

impl FeedforwardSpec {
    /// tanh hidden layers and a sigmoid output in `(0, 1)`.
    pub fn policy(d_in: usize, d_out: usize, hidden_layers: usize, neurons: usize) -> Self {
        Self {
            d_in,
            d_out,
            hidden_layers,
            neurons,
            hidden: Activation::Tanh,
            output: Activation::Sigmoid,
        }
    }

    pub fn regression(d_in: usize, hidden_layers: usize, neurons: usize) -> Self {
        Self {
            d_in,
            d_out: 1,
            hidden_layers,
            neurons,
            hidden: Activation::Relu,
            output: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.neurons == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(invalid(format!("degenerate feedforward spec {self:?}")));
        }
        Ok(())
    }
}

/// `z_{i+1} = rho(W_i z_i + b_i)`, output `rho_hat(W_K z_K + b_K)`.
#[derive(Clone, Debug)]
pub struct Feedforward {
    pub spec: FeedforwardSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Feedforward {
    pub fn build(store: &mut ParamStore, prefix: &str, spec: FeedforwardSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden_layers + 1);
        let mut width = spec.d_in;
        for k in 0..=spec.hidden_layers {
            let out = if k == spec.hidden_layers { spec.d_out } else { spec.neurons };
            let w = store.add(format!("{prefix}.l{k}.w"), out, width, Init::Glorot);
            let b = store.add(format!("{prefix}.l{k}.b"), 1, out, Init::Zeros);
            layers.push((w, b));
            width = out;
        }
        Ok(Self { spec, layers })
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, train: bool) -> NodeId {
        let mut z = x;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wn = leaf(tape, store, w, train);
            let bn = leaf(tape, store, b, train);
            let a = tape.affine(z, wn, bn);
            z = if k == last { self.spec.output } else { self.spec.hidden }.apply(tape, a);
        }
        z
    }

    /// Tape-free evaluation of a batch.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let out = self.forward(&mut tape, store, xn, false);
        tape.value(out).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::gradcheck::max_relative_error;
    use crate::rng::StreamRng;

    #[test]
    fn zero_weights_give_half() {
        let mut s = ParamStore::new(3);
        let net = Feedforward::build(&mut s, "p", FeedforwardSpec::policy(2, 1, 2, 11)).unwrap();
        s.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let out = net.eval(&s, &Tensor::from_vec(2, 2, vec![1.0, -3.0, 40.0, 0.2]));
        assert_eq!(out.data, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_chain_reproduces_input() {
        let mut s = ParamStore::new(0);
        let spec = FeedforwardSpec {
            d_in: 1,
            d_out: 1,
            hidden_layers: 3,
            neurons: 1,
            hidden: Activation::Identity,
            output: Activation::Identity,
        };
        let net = Feedforward::build(&mut s, "id", spec).unwrap();
        for &(w, b) in net.layers() {
            s.get_mut(w)[0] = 1.0;
            s.get_mut(b)[0] = 0.0;
        }
        let x = Tensor::column(vec![-2.5, 0.0, 7.25]);
        assert_eq!(net.eval(&s, &x).data, x.data);
    }

    /// Straight-line matrix replay of a seeded 2x11 policy network.
    #[test]
    fn matches_matrix_replay() {
        let mut s = ParamStore::new(42);
        let net = Feedforward::build(&mut s, "p", FeedforwardSpec::policy(3, 2, 2, 11)).unwrap();
        for v in s.values_mut() {
            *v += 0.01;
        }
        let mut rng = StreamRng::new(9, 0);
        let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let out = net.eval(&s, &Tensor::from_vec(4, 3, x.clone()));
        for b in 0..4 {
            let mut z = x[b * 3..b * 3 + 3].to_vec();
            for (k, &(w, bias)) in net.layers().iter().enumerate() {
                let wv = s.get(w);
                let bv = s.get(bias);
                let rows = bv.len();
                let cols = z.len();
                let mut next = vec![0.0; rows];
                for r in 0..rows {
                    let mut acc = 0.0;
                    for c in 0..cols {
                        acc += wv[r * cols + c] * z[c];
                    }
                    let a = acc + bv[r];
                    next[r] = if k == 2 { 1.0 / (1.0 + (-a).exp()) } else { a.tanh() };
                }
                z = next;
            }
            for o in 0..2 {
                assert!((out.at(b, o) - z[o]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_check() {
        let mut s = ParamStore::new(5);
        let net = Feedforward::build(&mut s, "p", FeedforwardSpec::policy(3, 2, 2, 6)).unwrap();
        let x = Tensor::from_vec(3, 3, vec![0.3, -1.2, 0.5, 1.0, 0.0, -0.4, 2.0, 0.7, 0.1]);
        let err = max_relative_error(&mut s, |t, st| {
            let xn = t.input(x.clone());
            let y = net.forward(t, st, xn, true);
            let sq = t.square(y);
            t.sum(sq)
        });
        assert!(err < 1e-6, "{err}");
    }
}
