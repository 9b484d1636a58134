//! Gaussian HJM forward model driven by Ornstein-Uhlenbeck factors.
//!
//! Each factor `y_i` is the stochastic integral `sigma_i * int_0^t e^{-a_i (t-s)} dW^i_s`
//! and is advanced with its exact Gaussian transition. The spot is rebuilt
//! from the initial curve with the lognormal martingale correction, so
//! `E[S_t] = F(0, t)` holds exactly in law.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneFactorParams {
    /// Volatility per sqrt(day).
    pub sigma: f64,
    /// Mean reversion per day.
    pub a: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeFactorParams {
    pub sigma: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub sigma: f64,
    pub a: f64,
}

impl Factor {
    /// Variance of the factor after `t` days started from a known value.
    pub fn variance(&self, t: f64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        self.sigma * self.sigma * (-(-2.0 * self.a * t).exp_m1()) / (2.0 * self.a)
    }

    pub fn stationary_sd(&self) -> f64 {
        self.sigma / (2.0 * self.a).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveTerm {
    pub amplitude: f64,
    /// Period in days.
    pub period: f64,
}

/// Initial forward curve `F(0, T) = base + sum amp * cos(2 pi T / period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalCurve {
    pub base: f64,
    pub terms: Vec<CurveTerm>,
}

impl SeasonalCurve {
    pub fn flat(base: f64) -> Self {
        Self {
            base,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, amplitude: f64, period: f64) -> Self {
        self.terms.push(CurveTerm { amplitude, period });
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        self.base
            + self
                .terms
                .iter()
                .map(|c| c.amplitude * (2.0 * PI * t / c.period).cos())
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    pub y: Vec<f64>,
    /// Time in days.
    pub t: f64,
}

impl FactorState {
    pub fn origin(n_factors: usize) -> Self {
        Self {
            y: vec![0.0; n_factors],
            t: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricePath {
    pub spot: Vec<f64>,
    pub factors: Vec<FactorState>,
}

/// Affine maps applied to model quantities before they reach a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub spot_mean: f64,
    pub spot_scale: f64,
    pub factor_scales: Vec<f64>,
}

impl Normalization {
    pub fn spot(&self, s: f64) -> f64 {
        (s - self.spot_mean) / self.spot_scale
    }

    pub fn factor(&self, i: usize, y: f64) -> f64 {
        y / self.factor_scales[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub factors: Vec<Factor>,
    pub curve: SeasonalCurve,
    /// Length of one decision step in days.
    pub dt: f64,
}

impl ForwardModel {
    pub fn one_factor(params: OneFactorParams, curve: SeasonalCurve) -> Self {
        Self {
            factors: vec![Factor {
                sigma: params.sigma,
                a: params.a,
            }],
            curve,
            dt: 1.0,
        }
    }

    pub fn three_factor(params: ThreeFactorParams, curve: SeasonalCurve) -> Self {
        Self {
            factors: (0..3)
                .map(|i| Factor {
                    sigma: params.sigma[i],
                    a: params.a[i],
                })
                .collect(),
            curve,
            dt: 1.0,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    /// Zero volatility is accepted: it is the deterministic limit used by
    /// the LP cross-checks.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.factors.is_empty() {
            return Err(invalid("model needs at least one factor"));
        }
        for (i, f) in self.factors.iter().enumerate() {
            if !(f.sigma >= 0.0 && f.sigma.is_finite()) {
                return Err(invalid(format!("factor {i}: sigma must be >= 0")));
            }
            if !(f.a > 0.0 && f.a.is_finite()) {
                return Err(invalid(format!("factor {i}: mean reversion must be > 0")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        for k in 0..=horizon {
            let f = self.curve.value(k as f64 * self.dt);
            if !(f > 0.0) {
                return Err(invalid(format!("initial curve not positive at step {k}: {f}")));
            }
        }
        Ok(())
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Total variance of `log S_t`.
    pub fn log_variance(&self, t: f64) -> f64 {
        self.factors.iter().map(|f| f.variance(t)).sum()
    }

    pub fn spot_from(&self, y: &[f64], t: f64) -> f64 {
        let sum_y: f64 = y.iter().sum();
        self.curve.value(t) * (sum_y - 0.5 * self.log_variance(t)).exp()
    }

    pub fn normalization(&self, horizon: usize) -> Normalization {
        let n = horizon.max(1);
        let values: Vec<f64> = (0..n).map(|k| self.curve.value(self.time_of(k))).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let curve_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let stat_var: f64 = self.factors.iter().map(|f| f.stationary_sd().powi(2)).sum();
        let scale = (curve_var + mean * mean * stat_var).sqrt().max(1e-3 * mean.abs()).max(1e-12);
        Normalization {
            spot_mean: mean,
            spot_scale: scale,
            factor_scales: self
                .factors
                .iter()
                .map(|f| if f.sigma > 0.0 { f.stationary_sd() } else { 1.0 })
                .collect(),
        }
    }

    /// Draws `n_paths` independent paths of `n_steps` dates starting at
    /// date index `start_step`. Path `p` consumes random stream
    /// `stream_offset + p` only, so it does not depend on the batch size.
    pub fn simulate(
        &self,
        n_paths: usize,
        start_step: usize,
        n_steps: usize,
        seed: u64,
        stream_offset: u64,
    ) -> PathBatch {
        let nf = self.n_factors();
        let mut spot = Vec::with_capacity(n_paths * n_steps);
        let mut factors = Vec::with_capacity(n_paths * n_steps * nf);
        let start_t = self.time_of(start_step);
        let jump: Vec<(f64, f64)> = self.factors.iter().map(|f| transition_coeffs(f, start_t)).collect();
        let unit: Vec<(f64, f64)> = self.factors.iter().map(|f| transition_coeffs(f, self.dt)).collect();
        let mut y = vec![0.0; nf];
        for p in 0..n_paths {
            let mut rng = StreamRng::new(seed, stream_offset + p as u64);
            y.iter_mut().for_each(|v| *v = 0.0);
            if start_step > 0 {
                for (v, &(decay, vol)) in y.iter_mut().zip(&jump) {
                    *v = *v * decay + vol * rng.normal();
                }
            }
            for k in 0..n_steps {
                if k > 0 {
                    for (v, &(decay, vol)) in y.iter_mut().zip(&unit) {
                        *v = *v * decay + vol * rng.normal();
                    }
                }
                let t = self.time_of(start_step + k);
                spot.push(self.spot_from(&y, t));
                factors.extend_from_slice(&y);
            }
        }
        PathBatch {
            n_paths,
            n_steps,
            n_factors: nf,
            start_step,
            dt: self.dt,
            spot,
            factors,
        }
    }
}

/// `(e^{-a dt}, sigma * sqrt((1 - e^{-2 a dt}) / (2a)))`
fn transition_coeffs(f: &Factor, dt: f64) -> (f64, f64) {
    ((-f.a * dt).exp(), f.variance(dt).sqrt())
}

/// Exact OU transition of every factor over `dt` days.
pub fn factor_step(state: &FactorState, model: &ForwardModel, dt: f64, noise: &[f64]) -> Result<FactorState> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    if noise.len() != model.n_factors() || state.y.len() != model.n_factors() {
        return Err(invalid(format!(
            "expected {} factors, got state {} noise {}",
            model.n_factors(),
            state.y.len(),
            noise.len()
        )));
    }
    if noise.iter().any(|e| !e.is_finite()) {
        return Err(invalid("non-finite noise"));
    }
    let y = state
        .y
        .iter()
        .zip(&model.factors)
        .zip(noise)
        .map(|((&y, f), &e)| {
            let (decay, vol) = transition_coeffs(f, dt);
            y * decay + vol * e
        })
        .collect();
    Ok(FactorState { y, t: state.t + dt })
}

pub fn spot_at(state: &FactorState, model: &ForwardModel) -> f64 {
    model.spot_from(&state.y, state.t)
}

pub fn sample_paths(model: &ForwardModel, n_paths: usize, n_steps: usize, seed: u64) -> PathBatch {
    model.simulate(n_paths, 0, n_steps, seed, 0)
}

/// Execution price shifted by the aggregated volume traded by `m` storages.
pub fn impacted_price(spot: f64, total_control: f64, impact: f64, m: usize) -> f64 {
    debug_assert!(m >= 1);
    spot + impact / m as f64 * total_control
}

/// Path-major batch of spot prices and factor values.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_factors: usize,
    /// Date index of the first stored step.
    pub start_step: usize,
    pub dt: f64,
    spot: Vec<f64>,
    factors: Vec<f64>,
}

impl PathBatch {
    pub fn spot(&self, path: usize, step: usize) -> f64 {
        self.spot[path * self.n_steps + step]
    }

    pub fn factors(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.n_steps + step) * self.n_factors;
        &self.factors[o..o + self.n_factors]
    }

    pub fn path(&self, p: usize) -> PricePath {
        PricePath {
            spot: (0..self.n_steps).map(|k| self.spot(p, k)).collect(),
            factors: (0..self.n_steps)
                .map(|k| FactorState {
                    y: self.factors(p, k).to_vec(),
                    t: (self.start_step + k) as f64 * self.dt,
                })
                .collect(),
        }
    }

    /// Copy of steps `from..from + len` of every path.
    pub fn window(&self, from: usize, len: usize) -> PathBatch {
        assert!(from + len <= self.n_steps, "window past the end of the batch");
        let nf = self.n_factors;
        let mut spot = Vec::with_capacity(self.n_paths * len);
        let mut factors = Vec::with_capacity(self.n_paths * len * nf);
        for p in 0..self.n_paths {
            let o = p * self.n_steps + from;
            spot.extend_from_slice(&self.spot[o..o + len]);
            factors.extend_from_slice(&self.factors[o * nf..(o + len) * nf]);
        }
        PathBatch {
            n_paths: self.n_paths,
            n_steps: len,
            n_factors: nf,
            start_step: self.start_step + from,
            dt: self.dt,
            spot,
            factors,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path_id,step,spot")?;
        for p in 0..self.n_paths {
            for k in 0..self.n_steps {
                writeln!(out, "{},{},{}", p, self.start_step + k, self.spot(p, k))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_curve(n: f64) -> SeasonalCurve {
        SeasonalCurve::flat(30.0).with_term(5.0, n).with_term(1.0, 7.0)
    }

    fn one_factor(sigma: f64, a: f64) -> ForwardModel {
        ForwardModel::one_factor(OneFactorParams { sigma, a }, paper_curve(365.0))
    }

    #[test]
    fn zero_noise_keeps_zero_state() {
        let m = one_factor(0.08, 0.01);
        let s = factor_step(&FactorState::origin(1), &m, 1.0, &[0.0]).unwrap();
        assert_eq!(s.y, vec![0.0]);
        assert_eq!(s.t, 1.0);
    }

    #[test]
    fn unit_noise_step_matches_closed_form() {
        // 0.08 * sqrt((1 - e^{-0.02}) / 0.02), evaluated with mpmath at 50 digits.
        let expected = 0.079_601_661_677_620_17;
        let m = one_factor(0.08, 0.01);
        let s = factor_step(&FactorState::origin(1), &m, 1.0, &[1.0]).unwrap();
        assert!((s.y[0] - expected).abs() < 1e-15, "{}", s.y[0]);
    }

    #[test]
    fn two_steps_have_the_law_of_one_double_step() {
        let f = Factor { sigma: 0.3, a: 0.16 };
        let (d1, v1) = transition_coeffs(&f, 1.0);
        let (d2, v2) = transition_coeffs(&f, 2.0);
        // mean multiplier and variance of y after two unit steps
        assert!((d1 * d1 - d2).abs() < 1e-15);
        let var_two_steps = v1 * v1 * d1 * d1 + v1 * v1;
        assert!((var_two_steps - v2 * v2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_noise_is_rejected() {
        let m = one_factor(0.08, 0.01);
        assert!(factor_step(&FactorState::origin(1), &m, 1.0, &[f64::NAN]).is_err());
        assert!(factor_step(&FactorState::origin(1), &m, 1.0, &[0.0, 1.0]).is_err());
        assert!(factor_step(&FactorState::origin(1), &m, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn spot_at_origin_is_curve_start() {
        let m = one_factor(0.08, 0.01);
        assert_eq!(spot_at(&FactorState::origin(1), &m), 36.0);
    }

    #[test]
    fn zero_volatility_spot_is_the_curve() {
        let m = one_factor(0.0, 0.01);
        let batch = sample_paths(&m, 3, 20, 5);
        for p in 0..3 {
            for k in 0..20 {
                assert_eq!(batch.spot(p, k), m.curve.value(k as f64));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let m = one_factor(0.08, 0.01);
        let a = sample_paths(&m, 10, 15, 1);
        let b = sample_paths(&m, 10, 15, 1);
        let c = sample_paths(&m, 10, 15, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn path_does_not_depend_on_batch_size() {
        let m = one_factor(0.08, 0.01);
        let small = sample_paths(&m, 3, 12, 9);
        let large = sample_paths(&m, 50, 12, 9);
        assert_eq!(small.path(2), large.path(2));
    }

    #[test]
    fn three_factor_with_silent_factors_matches_one_factor() {
        let one = one_factor(0.04, 0.01);
        let three = ForwardModel::three_factor(
            ThreeFactorParams {
                sigma: [0.04, 0.0, 0.0],
                a: [0.01, 0.005, 0.0033],
            },
            paper_curve(365.0),
        );
        let mut s1 = FactorState::origin(1);
        let mut s3 = FactorState::origin(3);
        let mut rng = StreamRng::new(4, 0);
        for _ in 0..50 {
            let e = [rng.normal(), rng.normal(), rng.normal()];
            s1 = factor_step(&s1, &one, 1.0, &e[..1]).unwrap();
            s3 = factor_step(&s3, &three, 1.0, &e).unwrap();
            assert_eq!(spot_at(&s1, &one), spot_at(&s3, &three));
        }
    }

    #[test]
    fn impact_shifts_price() {
        assert_eq!(impacted_price(30.0, 10.0, 0.0, 1), 30.0);
        assert!((impacted_price(30.0, 10.0, 0.2, 1) - 32.0).abs() < 1e-12);
        assert!((impacted_price(30.0, 25.0, 0.2, 5) - 31.0).abs() < 1e-12);
    }

    #[test]
    fn started_batch_reports_its_dates() {
        let m = one_factor(0.08, 0.01);
        let b = m.simulate(2, 10, 3, 0, 0);
        let p = b.path(1);
        assert_eq!(p.factors[0].t, 10.0);
        assert_eq!(p.factors[2].t, 12.0);
        assert!(p.spot.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let m = one_factor(0.08, 0.01);
        let b = sample_paths(&m, 2, 3, 0);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,step,spot\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
