//! Single backward pass of GroupMax value fits, each target being the
//! optimum of a transition LP whose continuation is the min of the cuts of
//! the next fitted value.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::LrSchedule;
use crate::error::{invalid, Error, Result};
use crate::gv::LogEntry;
use crate::lp::{solve, LpProblem, LpStatus};
use crate::nets::{CutSet, DEFAULT_CUT_CAP};
use crate::price_models::ForwardModel;
use crate::rng::{derive_seed, domain, StreamRng};
use crate::storage::{bounds_1d, StorageSpec};
use crate::value::{fit_value, FittedValue, RegressionConfig, RegressionData, ValueKind, ValueSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmcsdpConfig {
    pub model: ForwardModel,
    pub horizon: usize,
    pub storage: StorageSpec,
    pub storages: usize,
    /// Must be a GroupMax spec.
    pub value: ValueSpec,
    pub cut_cap: usize,
    /// Size of the fixed regression pool drawn at every stage.
    pub samples: usize,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub log_every: usize,
}

impl GmcsdpConfig {
    pub fn new(model: ForwardModel, horizon: usize, storage: StorageSpec, storages: usize, value: ValueSpec) -> Self {
        Self {
            model,
            horizon,
            storage,
            storages,
            value,
            cut_cap: DEFAULT_CUT_CAP,
            samples: 2000,
            batch: 200,
            iterations: 15000,
            schedule: LrSchedule::Linear {
                initial: 5e-3,
                floor: 1e-4,
                steps: 15000,
            },
            seed: 0,
            log_every: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate(self.horizon)?;
        self.storage.validate()?;
        if self.value.kind != ValueKind::GroupMax {
            return Err(invalid("the transition LP needs a GroupMax value network"));
        }
        if self.horizon == 0 || self.storages == 0 || self.samples == 0 || self.batch == 0 {
            return Err(invalid("horizon, storages, samples and batch must be positive"));
        }
        Ok(())
    }
}

/// Optimum of `max_u -S * sum(u) + xi` subject to `xi <= cut(q + u)` for
/// every cut and the flow bounds at `q`. Without cuts the continuation is
/// zero.
pub fn transition_lp(spot: f64, q: &[f64], cuts: Option<&CutSet>, storage: &StorageSpec) -> LpProblem {
    let m = q.len();
    let mut obj = vec![-spot; m];
    obj.push(1.0);
    let mut p = LpProblem::new(obj);
    for (j, &qj) in q.iter().enumerate() {
        let (cw, ci) = bounds_1d(qj, storage);
        p.set_bounds(j, -cw, ci);
    }
    match cuts {
        Some(cs) => {
            p.set_bounds(m, f64::NEG_INFINITY, f64::INFINITY);
            for c in &cs.cuts {
                let mut row: Vec<f64> = c.beta.iter().map(|b| -b).collect();
                row.push(1.0);
                p.add_row(row, c.value(q));
            }
        }
        None => {
            p.set_bounds(m, 0.0, 0.0);
        }
    }
    p
}

/// Value of the transition at date `stage` from stock `q`, with the spot
/// and factor state of that date. `next` is the fitted continuation seen
/// from this date.
pub fn transition_value(
    stage: usize,
    spot: f64,
    factors: &[f64],
    q: &[f64],
    next: Option<&FittedValue>,
    storage: &StorageSpec,
    cap: usize,
) -> Result<(f64, usize)> {
    let cuts = next.map(|v| v.cuts(factors, cap)).transpose()?;
    let problem = transition_lp(spot, q, cuts.as_ref(), storage);
    let sol = solve(&problem)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::InfeasibleTransition {
            stage,
            state: q.to_vec(),
            status: sol.status.to_string(),
        });
    }
    Ok((sol.objective, cuts.map_or(0, |c| c.len())))
}

#[derive(Clone, Debug)]
pub struct StageValue {
    /// The continuation seen from the decision at date `stage`.
    pub stage: usize,
    pub value: FittedValue,
    pub log: Vec<LogEntry>,
    pub mean_cuts: f64,
    pub lp_seconds: f64,
}

/// Fits the continuation seen from date `stage - 1` from transition values
/// at date `stage`, where `next` is the continuation seen from `stage`.
pub fn fit_stage(config: &GmcsdpConfig, stage: usize, next: Option<&FittedValue>) -> Result<StageValue> {
    if stage == 0 || stage >= config.horizon {
        return Err(invalid(format!("stage {stage} outside 1..{}", config.horizon)));
    }
    let seed = derive_seed(derive_seed(config.seed, domain::REGRESS), stage as u64);
    let n = config.samples;
    let m = config.storages;
    let nf = config.model.n_factors();
    let paths = config.model.simulate(n, stage - 1, 2, seed, 0);
    let mut rng = StreamRng::new(derive_seed(seed, domain::STOCK), 0);
    let mut xs = Vec::with_capacity(n * nf);
    let mut qs = Vec::with_capacity(n * m);
    let mut targets = Vec::with_capacity(n);
    let mut cut_total = 0usize;
    let clock = Instant::now();
    for p in 0..n {
        let q: Vec<f64> = (0..m).map(|_| rng.uniform() * config.storage.q_max).collect();
        let (v, cuts) = transition_value(stage, paths.spot(p, 1), paths.factors(p, 1), &q, next, &config.storage, config.cut_cap)?;
        cut_total += cuts;
        xs.extend_from_slice(paths.factors(p, 0));
        qs.extend_from_slice(&q);
        targets.push(v);
    }
    let lp_seconds = clock.elapsed().as_secs_f64();
    let data = RegressionData {
        x: &xs,
        y: &qs,
        targets: &targets,
        x_scale: config.model.normalization(config.horizon).factor_scales,
        q_max: vec![config.storage.q_max; m],
    };
    let (value, log) = fit_value(
        &config.value,
        &data,
        &RegressionConfig {
            batch: config.batch,
            iterations: config.iterations,
            schedule: config.schedule,
            seed,
            log_every: config.log_every,
        },
    )?;
    Ok(StageValue {
        stage: stage - 1,
        value,
        log,
        mean_cuts: cut_total as f64 / n as f64,
        lp_seconds,
    })
}

#[derive(Clone, Debug)]
pub struct GmcsdpResult {
    /// `stages[i]` is the continuation seen from date `i`; the last date has none.
    pub stages: Vec<StageValue>,
    /// First-stage LP optimum `J^*` for all storages together.
    pub value: f64,
    pub per_storage: f64,
}

pub fn run_gmcsdp(config: &GmcsdpConfig) -> Result<GmcsdpResult> {
    config.validate()?;
    let mut fitted: Vec<StageValue> = Vec::with_capacity(config.horizon.saturating_sub(1));
    for stage in (1..config.horizon).rev() {
        let next = fitted.last().map(|s| &s.value);
        let sv = fit_stage(config, stage, next)?;
        log::info!(
            "gmcsdp stage {stage}: {:.1} cuts per LP, {:.2}s of LP, final mse {:.5}",
            sv.mean_cuts,
            sv.lp_seconds,
            sv.log.last().map_or(f64::NAN, |e| e.loss)
        );
        fitted.push(sv);
    }
    fitted.reverse();
    let q0 = vec![config.storage.q_init; config.storages];
    let f0 = vec![0.0; config.model.n_factors()];
    let s0 = config.model.spot_from(&f0, config.model.time_of(0));
    let (value, _) = transition_value(0, s0, &f0, &q0, fitted.first().map(|s| &s.value), &config.storage, config.cut_cap)?;
    Ok(GmcsdpResult {
        stages: fitted,
        value,
        per_storage: value / config.storages as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::lp::storage_lp;
    use crate::price_models::{OneFactorParams, SeasonalCurve};
    use crate::value::ValueNet;

    fn storage() -> StorageSpec {
        StorageSpec {
            c_inject: 10.0,
            c_withdraw: 20.0,
            q_max: 100.0,
            q_init: 50.0,
        }
    }

    fn random_value(seed: u64, dy: usize, mean: f64, scale: f64) -> FittedValue {
        let spec = ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 8, 2);
        let mut store = ParamStore::new(seed);
        let net = ValueNet::build(&mut store, &spec, 1, dy).unwrap();
        FittedValue {
            spec,
            net,
            store,
            x_scale: vec![1.0],
            q_max: vec![100.0; dy],
            mean,
            scale,
        }
    }

    fn model() -> ForwardModel {
        ForwardModel::one_factor(
            OneFactorParams { sigma: 0.3, a: 0.16 },
            SeasonalCurve::flat(30.0).with_term(4.0, 4.0),
        )
    }

    #[test]
    fn zero_continuation_is_the_bang_bang_sale() {
        let s = storage();
        for (spot, q) in [(30.0, 50.0), (12.0, 5.0), (-3.0, 95.0), (-3.0, 100.0)] {
            let (v, n) = transition_value(3, spot, &[0.0], &[q], None, &s, 64).unwrap();
            let (cw, ci) = bounds_1d(q, &s);
            let hand = (spot * cw).max(-spot * ci);
            assert!((v - hand).abs() < 1e-9, "{v} vs {hand}");
            assert_eq!(n, 0);
        }
    }

    /// The maximum of a concave piecewise-affine function of one variable
    /// sits at an end of the interval or where two pieces cross.
    #[test]
    fn one_dimensional_transition_matches_the_breakpoint_oracle() {
        let s = storage();
        for seed in 0..20 {
            let fv = random_value(seed, 1, 500.0, 80.0);
            let x = [0.3 * seed as f64 - 2.0];
            let spot = 25.0 + seed as f64;
            let q = 5.0 * seed as f64;
            let (v, _) = transition_value(2, spot, &x, &[q], Some(&fv), &s, 4096).unwrap();
            let cuts = fv.cuts(&x, 4096).unwrap();
            let (cw, ci) = bounds_1d(q, &s);
            let mut cand = vec![-cw, ci];
            for a in &cuts.cuts {
                for b in &cuts.cuts {
                    let db = a.beta[0] - b.beta[0];
                    if db.abs() > 1e-12 {
                        let y = (b.alpha - a.alpha) / db;
                        cand.push(y - q);
                    }
                }
            }
            let best = cand
                .into_iter()
                .filter(|u| *u >= -cw - 1e-12 && *u <= ci + 1e-12)
                .map(|u| {
                    let cont = fv.eval(&Tensor::from_vec(1, 1, x.to_vec()), &Tensor::from_vec(1, 1, vec![q + u]))[0];
                    -spot * u + cont
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v - best).abs() < 1e-6 * best.abs().max(1.0), "seed {seed}: {v} vs {best}");
        }
    }

    #[test]
    fn two_dimensional_transition_brackets_a_fine_grid() {
        let s = storage();
        let fv = random_value(7, 2, 300.0, 50.0);
        let x = [0.4];
        let q = [35.0, 92.0];
        let spot = 31.0;
        let (v, _) = transition_value(1, spot, &x, &q, Some(&fv), &s, 4096).unwrap();
        let b: Vec<(f64, f64)> = q.iter().map(|&qj| bounds_1d(qj, &s)).collect();
        let k = 200;
        let mut grid = Vec::new();
        for i in 0..=k {
            for j in 0..=k {
                let u0 = -b[0].0 + (b[0].0 + b[0].1) * i as f64 / k as f64;
                let u1 = -b[1].0 + (b[1].0 + b[1].1) * j as f64 / k as f64;
                grid.push((u0, u1));
            }
        }
        let ys: Vec<f64> = grid.iter().flat_map(|(u0, u1)| [q[0] + u0, q[1] + u1]).collect();
        let conts = fv.eval(&Tensor::filled(grid.len(), 1, x[0]), &Tensor::from_vec(grid.len(), 2, ys));
        let best = grid
            .iter()
            .zip(conts)
            .map(|((u0, u1), c)| -spot * (u0 + u1) + c)
            .fold(f64::NEG_INFINITY, f64::max);
        let cuts = fv.cuts(&x, 4096).unwrap();
        let lip = cuts.cuts.iter().map(|c| c.beta.iter().map(|v| (v - spot).abs()).sum::<f64>()).fold(0.0, f64::max);
        let h = b.iter().map(|(cw, ci)| (cw + ci) / k as f64).fold(0.0, f64::max);
        assert!(v >= best - 1e-9, "{v} below grid {best}");
        assert!(v <= best + lip * h, "{v} vs grid {best} (slack {})", lip * h);
    }

    #[test]
    fn transition_value_is_concave_in_the_stock() {
        let s = storage();
        let fv = random_value(11, 1, 400.0, 60.0);
        let mut rng = StreamRng::new(5, 0);
        for _ in 0..300 {
            let (a, b, l) = (rng.uniform() * 100.0, rng.uniform() * 100.0, rng.uniform());
            let f = |q: f64| transition_value(1, 28.0, &[0.1], &[q], Some(&fv), &s, 4096).unwrap().0;
            let mid = f(l * a + (1.0 - l) * b);
            assert!(mid >= l * f(a) + (1.0 - l) * f(b) - 1e-7);
        }
    }

    #[test]
    fn single_date_is_the_single_step_lp() {
        let cfg = GmcsdpConfig::new(model(), 1, storage(), 1, ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 12, 2));
        let r = run_gmcsdp(&cfg).unwrap();
        let s0 = cfg.model.spot_from(&[0.0], 0.0);
        let lp = storage_lp(&[s0], &cfg.storage).unwrap().objective;
        assert!((r.value - lp).abs() < 1e-9);
        assert!(r.stages.is_empty());
    }

    #[test]
    fn idle_storage_fits_a_constant() {
        let mut s = storage();
        s.c_inject = 0.0;
        s.c_withdraw = 0.0;
        let mut cfg = GmcsdpConfig::new(model(), 2, s, 1, ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 8, 2));
        cfg.iterations = 3000;
        cfg.samples = 200;
        cfg.schedule = LrSchedule::Constant { lr: 5e-3 };
        let r = run_gmcsdp(&cfg).unwrap();
        assert_eq!(r.stages[0].value.mean, 0.0);
        let v = r.stages[0].value.eval(&Tensor::filled(3, 1, 0.2), &Tensor::column(vec![0.0, 50.0, 100.0]));
        let log = &r.stages[0].log;
        assert!(log.last().unwrap().loss < 1e-2 * log[0].loss);
        assert!(v.iter().all(|x| x.abs() < 0.5), "{v:?}");
        assert!(r.value.abs() < 0.5);
    }

    #[test]
    fn short_run_is_reproducible_and_concave() {
        let mut cfg = GmcsdpConfig::new(model(), 3, storage(), 1, ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 8, 2));
        cfg.iterations = 200;
        cfg.samples = 150;
        let a = run_gmcsdp(&cfg).unwrap();
        let b = run_gmcsdp(&cfg).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.stages.len(), 2);
        for st in &a.stages {
            let mut rng = StreamRng::new(st.stage as u64, 1);
            for _ in 0..1000 {
                let x = Tensor::filled(3, 1, rng.normal());
                let (y1, y2, l) = (rng.uniform() * 100.0, rng.uniform() * 100.0, rng.uniform());
                let v = st.value.eval(&x, &Tensor::column(vec![y1, y2, l * y1 + (1.0 - l) * y2]));
                assert!(v[2] >= l * v[0] + (1.0 - l) * v[1] - 1e-9);
            }
        }
    }

    #[test]
    fn cut_lp_agrees_with_the_network_on_a_fine_grid() {
        let mut cfg = GmcsdpConfig::new(model(), 2, storage(), 1, ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 8, 2));
        cfg.iterations = 300;
        cfg.samples = 300;
        let r = run_gmcsdp(&cfg).unwrap();
        let fv = &r.stages[0].value;
        let s = storage();
        for q in [0.0, 33.0, 50.0, 81.0, 100.0] {
            let (v, _) = transition_value(0, 30.0, &[0.0], &[q], Some(fv), &s, 4096).unwrap();
            let (cw, ci) = bounds_1d(q, &s);
            let k = 30000;
            let us: Vec<f64> = (0..=k).map(|i| -cw + (cw + ci) * i as f64 / k as f64).collect();
            let conts = fv.eval(&Tensor::filled(us.len(), 1, 0.0), &Tensor::column(us.iter().map(|u| q + u).collect()));
            let grid = us.iter().zip(conts).map(|(u, c)| -30.0 * u + c).fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= grid - 1e-9 && v - grid < 1e-4 * v.abs().max(1.0), "q={q}: {v} vs {grid}");
        }
    }

    #[test]
    fn other_value_kinds_are_rejected() {
        let cfg = GmcsdpConfig::new(model(), 2, storage(), 1, ValueSpec::icnn(ValueKind::Concave, 1, 6, 8, 2));
        assert!(run_gmcsdp(&cfg).is_err());
    }
}
