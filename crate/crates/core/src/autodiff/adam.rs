use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Linear interpolation from `initial` to `floor` over `steps` updates,
    /// then flat at `floor`.
    Linear { initial: f64, floor: f64, steps: u64 },
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Linear { initial, floor, steps } => {
                if step >= steps {
                    return floor;
                }
                initial + (floor - initial) * (step as f64 / steps as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl AdamConfig {
    pub fn constant(lr: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::Constant { lr },
        }
    }

    pub fn decaying(initial: f64, floor: f64, steps: u64) -> Self {
        Self {
            schedule: LrSchedule::Linear { initial, floor, steps },
            ..Self::constant(initial)
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    /// Updates rejected because of a non-finite gradient.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            skipped: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// Applies one ADAM update from the gradients held in `store`. Returns
/// `false` and leaves everything but the skip counter untouched when a
/// gradient entry is not finite.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> bool {
    assert_eq!(store.len(), state.m.len(), "optimizer sized for another store");
    if store.grads().iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return false;
    }
    let c = state.config;
    let lr = c.schedule.rate(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let grads = store.grads().to_vec();
    for (k, (p, g)) in store.values_mut().iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + c.eps);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Init;

    fn single(x0: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.add("x", 1, 1, Init::Constant(x0));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = single(1.0);
        let mut st = AdamState::new(1, AdamConfig::constant(0.1));
        s.grad_mut(crate::autodiff::ParamId(0))[0] = 1.0;
        adam_step(&mut s, &mut st);
        let after_first = s.values()[0];
        let m1 = st.moments().0[0];
        s.zero_grads();
        adam_step(&mut s, &mut st);
        // second step still moves because of momentum, but moments shrink
        assert!(st.moments().0[0].abs() < m1.abs());
        let mut s2 = single(1.0);
        let mut st2 = AdamState::new(1, AdamConfig::constant(0.1));
        adam_step(&mut s2, &mut st2);
        assert_eq!(s2.values()[0], 1.0);
        assert!(after_first < 1.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut s = single(0.0);
            let mut st = AdamState::new(1, AdamConfig::constant(0.01));
            s.grad_mut(crate::autodiff::ParamId(0))[0] = g;
            adam_step(&mut s, &mut st);
            let moved = s.values()[0];
            assert!((moved + 0.01 * g.signum()).abs() < 1e-4 * 0.01, "g={g} moved={moved}");
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut s = single(2.0);
        let mut st = AdamState::new(1, AdamConfig::constant(0.1));
        s.grad_mut(crate::autodiff::ParamId(0))[0] = f64::NAN;
        assert!(!adam_step(&mut s, &mut st));
        assert_eq!(s.values()[0], 2.0);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 0);
    }

    /// Minimizing x^2 from x = 1 with lr = 1e-2. The iteration count was
    /// measured once with this implementation and is pinned as a regression
    /// value.
    #[test]
    fn quadratic_toy_converges() {
        let mut s = single(1.0);
        let mut st = AdamState::new(1, AdamConfig::constant(1e-2));
        let mut reached = None;
        for k in 1..=2000 {
            let x = s.values()[0];
            s.zero_grads();
            s.grad_mut(crate::autodiff::ParamId(0))[0] = 2.0 * x;
            adam_step(&mut s, &mut st);
            if s.values()[0].abs() < 1e-3 {
                reached = Some(k);
                break;
            }
        }
        assert_eq!(reached, Some(QUADRATIC_TOY_STEPS));
    }

    const QUADRATIC_TOY_STEPS: usize = 269;

    #[test]
    fn linear_schedule_decays_to_floor() {
        let s = LrSchedule::Linear {
            initial: 5e-3,
            floor: 1e-4,
            steps: 100,
        };
        assert_eq!(s.rate(0), 5e-3);
        assert!((s.rate(50) - 2.55e-3).abs() < 1e-15);
        assert!((s.rate(100) - 1e-4).abs() < 1e-18);
        assert_eq!(s.rate(1000), 1e-4);
    }
}
