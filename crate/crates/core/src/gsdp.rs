//! Block decomposition of the horizon: each block gets its own policy,
//! trained against a regressed value of the next block, working backwards.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LrSchedule, Tape, Tensor};
use crate::dp::mean_and_se;
use crate::error::{invalid, Result};
use crate::gv::{factor_tensor, policy_spec, InitialStock, LogEntry, PolicyJob, TrainedPolicy, EVAL_CHUNK};
use crate::nets::PolicyKind;
use crate::price_models::ForwardModel;
use crate::rng::{derive_seed, domain};
use crate::storage::StorageSpec;
use crate::value::{fit_value, FittedValue, RegressionConfig, RegressionData, ValueSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSchedule {
    pub sizes: Vec<usize>,
}

impl SplitSchedule {
    pub fn horizon(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// First date of each block.
    pub fn starts(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, &n| {
                let s = *acc;
                *acc += n;
                Some(s)
            })
            .collect()
    }
}

/// Equal blocks of `ceil(N / L)` dates with the first block taking what is
/// left. When that would leave the first block empty the blocks shrink to
/// `floor(N / L)` and the first one grows instead.
pub fn split_schedule(n: usize, l: usize) -> Result<SplitSchedule> {
    if l == 0 || l > n {
        return Err(invalid(format!("cannot split {n} dates into {l} blocks")));
    }
    let tail = l - 1;
    let mut size = n.div_ceil(l);
    if n <= tail * size {
        size = n / l;
    }
    let mut sizes = vec![size; l];
    sizes[0] = n - tail * size;
    Ok(SplitSchedule { sizes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsdpConfig {
    pub model: ForwardModel,
    pub horizon: usize,
    pub blocks: usize,
    pub storage: StorageSpec,
    pub storages: usize,
    pub policy: PolicyKind,
    pub neurons: Option<usize>,
    pub impact: f64,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub value: ValueSpec,
    pub value_samples: usize,
    pub value_batch: usize,
    pub value_iterations: usize,
    pub value_schedule: LrSchedule,
    /// Train every block from a uniform stock; off means the fixed initial
    /// stock, which only makes sense for a single block.
    pub random_q0: bool,
    pub seed: u64,
    pub eval_paths: usize,
    pub eval_seed: u64,
    pub log_every: usize,
    pub diagnostic_path: Option<PathBuf>,
}

impl GsdpConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate(self.horizon)?;
        self.storage.validate()?;
        split_schedule(self.horizon, self.blocks)?;
        if self.storages == 0 || self.batch == 0 || self.eval_paths == 0 {
            return Err(invalid("storages, batch and eval_paths must be positive"));
        }
        if self.blocks > 1 && (self.value_samples == 0 || self.value_batch == 0) {
            return Err(invalid("value regression needs samples and a batch size"));
        }
        if !(self.impact >= 0.0) {
            return Err(invalid("price impact must be non-negative"));
        }
        if self.policy == PolicyKind::LstmFf {
            return Err(invalid("block policies must be Markovian; the LSTM policy is not supported"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GsdpBlock {
    pub start: usize,
    pub policy: TrainedPolicy,
    /// Regressed value at `start`; absent for the first block.
    pub value: Option<FittedValue>,
    /// Minibatch MSE of the regression in normalized units.
    pub value_log: Vec<LogEntry>,
}

#[derive(Clone, Debug)]
pub struct GsdpResult {
    pub schedule: SplitSchedule,
    pub blocks: Vec<GsdpBlock>,
    pub value: f64,
    pub std_error: f64,
}

fn block_seed(seed: u64, l: usize) -> u64 {
    if l == 0 {
        seed
    } else {
        derive_seed(seed, l as u64)
    }
}

/// Trains the policy of the block starting at `start` with `len` dates.
pub fn train_block(
    config: &GsdpConfig,
    l: usize,
    start: usize,
    len: usize,
    vb_next: Option<&FittedValue>,
) -> Result<TrainedPolicy> {
    let seed = block_seed(config.seed, l);
    let q0 = if config.random_q0 {
        InitialStock::Uniform(derive_seed(seed, domain::STOCK))
    } else {
        InitialStock::Fixed
    };
    PolicyJob {
        model: &config.model,
        spec: policy_spec(config.policy, len, config.model.n_factors(), config.storages, config.neurons, false),
        norm: config.model.normalization(config.horizon),
        storage: config.storage,
        storages: config.storages,
        impact: config.impact,
        start,
        terminal: vb_next,
        q0,
        batch: config.batch,
        iterations: config.iterations,
        schedule: config.schedule,
        seed,
        log_every: config.log_every,
        diagnostic_path: config.diagnostic_path.as_deref(),
    }
    .train()
}

/// Least-squares fit of the realized block profit, closed by `vb_next`,
/// on the factor state and a uniform stock at the block start.
pub fn fit_bellman(
    config: &GsdpConfig,
    l: usize,
    start: usize,
    policy: &TrainedPolicy,
    vb_next: Option<&FittedValue>,
) -> Result<(FittedValue, Vec<LogEntry>)> {
    let seed = derive_seed(block_seed(config.seed, l), domain::REGRESS);
    let len = policy.spec.steps;
    let dates = len + usize::from(vb_next.is_some());
    let m = config.storages;
    let n = config.value_samples;
    let specs = vec![config.storage; m];
    let rollout = policy.rollout(&specs);
    let stock = InitialStock::Uniform(derive_seed(seed, domain::STOCK));
    let nf = config.model.n_factors();
    let mut xs = Vec::with_capacity(n * nf);
    let mut qs = Vec::with_capacity(n * m);
    let mut targets = Vec::with_capacity(n);
    let mut tape = Tape::new();
    let mut done = 0;
    while done < n {
        let b = EVAL_CHUNK.min(n - done);
        let paths = config.model.simulate(b, start, dates, seed, done as u64);
        let q0 = stock.draw(&config.storage, b, m, done as u64);
        tape.clear();
        let (mut total, q) = rollout.run(&mut tape, &policy.store, &paths, q0.clone(), len, false);
        if let Some(vb) = vb_next {
            let v = vb.forward(&mut tape, &factor_tensor(&paths, len), q);
            total = tape.add(total, v);
        }
        targets.extend_from_slice(&tape.value(total).data);
        xs.extend_from_slice(&factor_tensor(&paths, 0).data);
        qs.extend_from_slice(&q0.data);
        done += b;
    }

    let data = RegressionData {
        x: &xs,
        y: &qs,
        targets: &targets,
        x_scale: config.model.normalization(config.horizon).factor_scales,
        q_max: vec![config.storage.q_max; m],
    };
    fit_value(
        &config.value,
        &data,
        &RegressionConfig {
            batch: config.value_batch,
            iterations: config.value_iterations,
            schedule: config.value_schedule,
            seed,
            log_every: config.log_every,
        },
    )
}

/// Mean and standard error of the profit of the block policies chained
/// from the initial stock.
pub fn evaluate_blocks(blocks: &[GsdpBlock], model: &ForwardModel, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let first = &blocks.first().ok_or_else(|| invalid("no blocks to evaluate"))?.policy;
    let horizon: usize = blocks.iter().map(|b| b.policy.spec.steps).sum();
    model.validate(horizon)?;
    let specs = vec![first.storage; first.storages];
    let eval_seed = derive_seed(seed, domain::EVAL);
    let mut totals = Vec::with_capacity(n_paths);
    let mut tape = Tape::new();
    let mut done = 0;
    while done < n_paths {
        let b = EVAL_CHUNK.min(n_paths - done);
        let paths = model.simulate(b, 0, horizon, eval_seed, done as u64);
        let mut q = Tensor::filled(b, first.storages, first.storage.q_init);
        let mut sum = vec![0.0; b];
        for block in blocks {
            let len = block.policy.spec.steps;
            let window = paths.window(block.start, len);
            tape.clear();
            let (total, q_end) = block.policy.rollout(&specs).run(&mut tape, &block.policy.store, &window, q, len, false);
            sum.iter_mut().zip(&tape.value(total).data).for_each(|(s, v)| *s += v);
            q = tape.value(q_end).clone();
        }
        totals.extend(sum);
        done += b;
    }
    Ok(mean_and_se(&totals))
}

pub fn run_gsdp(config: &GsdpConfig) -> Result<GsdpResult> {
    config.validate()?;
    let schedule = split_schedule(config.horizon, config.blocks)?;
    let starts = schedule.starts();
    let mut blocks: Vec<GsdpBlock> = Vec::with_capacity(config.blocks);
    for l in (0..config.blocks).rev() {
        let vb_next = blocks.last().and_then(|b| b.value.as_ref());
        let policy = train_block(config, l, starts[l], schedule.sizes[l], vb_next)?;
        let (value, value_log) = if l > 0 {
            let (v, log) = fit_bellman(config, l, starts[l], &policy, vb_next)?;
            (Some(v), log)
        } else {
            (None, Vec::new())
        };
        log::info!("gsdp block {l} (dates {}..{}) done", starts[l], starts[l] + schedule.sizes[l]);
        blocks.push(GsdpBlock {
            start: starts[l],
            policy,
            value,
            value_log,
        });
    }
    blocks.reverse();
    let (value, std_error) = evaluate_blocks(&blocks, &config.model, config.eval_paths, config.eval_seed)?;
    Ok(GsdpResult {
        schedule,
        blocks,
        value,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gv::{evaluate_policy, train_gv, GvConfig};
    use crate::lp::storage_lp;
    use crate::price_models::{OneFactorParams, SeasonalCurve};
    use crate::value::ValueKind;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        assert_eq!(split_schedule(365, 1).unwrap().sizes, vec![365]);
        let s = split_schedule(365, 53).unwrap();
        assert_eq!(s.sizes[0], 1);
        assert!(s.sizes[1..].iter().all(|&n| n == 7));
        assert_eq!(s.sizes.len(), 53);
        assert_eq!(split_schedule(365, 365).unwrap().sizes, vec![1; 365]);
        assert_eq!(split_schedule(56, 8).unwrap().sizes, vec![7; 8]);
        assert_eq!(split_schedule(10, 6).unwrap().sizes, vec![5, 1, 1, 1, 1, 1]);
        assert!(split_schedule(5, 6).is_err());
        assert!(split_schedule(5, 0).is_err());
        assert_eq!(split_schedule(56, 8).unwrap().starts(), (0..8).map(|k| 7 * k).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn split_is_exact_with_equal_tail(n in 1usize..500, l in 1usize..60) {
            prop_assume!(l <= n);
            let s = split_schedule(n, l).unwrap();
            prop_assert_eq!(s.horizon(), n);
            prop_assert_eq!(s.sizes.len(), l);
            prop_assert!(s.sizes.iter().all(|&k| k >= 1));
            prop_assert!(s.sizes[1..].windows(2).all(|w| w[0] == w[1]));
        }
    }

    fn model(sigma: f64, n: usize) -> ForwardModel {
        ForwardModel::one_factor(
            OneFactorParams { sigma, a: 0.01 },
            SeasonalCurve::flat(30.0).with_term(5.0, n as f64).with_term(1.0, 7.0),
        )
    }

    fn config(sigma: f64, n: usize, l: usize) -> GsdpConfig {
        GsdpConfig {
            model: model(sigma, n),
            horizon: n,
            blocks: l,
            storage: StorageSpec {
                c_inject: 5.0,
                c_withdraw: 10.0,
                q_max: 100.0,
                q_init: 50.0,
            },
            storages: 1,
            policy: PolicyKind::PerStep,
            neurons: None,
            impact: 0.0,
            batch: 32,
            iterations: 100,
            schedule: LrSchedule::Constant { lr: 5e-3 },
            value: ValueSpec::feedforward(2, 11),
            value_samples: 2000,
            value_batch: 128,
            value_iterations: 300,
            value_schedule: LrSchedule::Constant { lr: 5e-3 },
            random_q0: true,
            seed: 4,
            eval_paths: 500,
            eval_seed: 5,
            log_every: 10,
            diagnostic_path: None,
        }
    }

    #[test]
    fn single_block_with_fixed_stock_is_global_valuation() {
        let mut c = config(0.08, 8, 1);
        c.random_q0 = false;
        c.iterations = 20;
        let g = run_gsdp(&c).unwrap();
        let gv = GvConfig {
            model: c.model.clone(),
            horizon: c.horizon,
            storage: c.storage,
            storages: 1,
            policy: c.policy,
            neurons: None,
            lstm_shared_head: false,
            impact: 0.0,
            batch: c.batch,
            iterations: c.iterations,
            schedule: c.schedule,
            seed: c.seed,
            eval_paths: c.eval_paths,
            eval_seed: c.eval_seed,
            log_every: c.log_every,
            diagnostic_path: None,
        };
        let t = train_gv(&gv).unwrap();
        assert_eq!(t.store.values(), g.blocks[0].policy.store.values());
        let (v, se) = evaluate_policy(&t, &c.model, c.eval_paths, c.eval_seed).unwrap();
        assert_eq!((v, se), (g.value, g.std_error));
    }

    #[test]
    fn last_block_matches_the_lp_from_sampled_stocks() {
        let mut c = config(0.0, 10, 2);
        c.model = ForwardModel::one_factor(OneFactorParams { sigma: 0.0, a: 0.01 }, SeasonalCurve::flat(30.0).with_term(5.0, 4.0));
        c.iterations = 3000;
        c.batch = 64;
        c.schedule = LrSchedule::Linear {
            initial: 5e-3,
            floor: 5e-4,
            steps: 3000,
        };
        let (start, len) = (4, 5);
        let policy = train_block(&c, 1, start, len, None).unwrap();
        let specs = vec![c.storage; 1];
        let prices: Vec<f64> = (start..start + len).map(|k| c.model.spot_from(&[0.0], c.model.time_of(k))).collect();
        let paths = c.model.simulate(1, start, len, 0, 0);
        let (mut sum_v, mut sum_lp) = (0.0, 0.0);
        for q0 in (0..=20).map(|k| 5.0 * k as f64) {
            let lp = storage_lp(&prices, &StorageSpec { q_init: q0, ..c.storage }).unwrap().objective;
            let mut tape = Tape::new();
            let (total, _) = policy
                .rollout(&specs)
                .run(&mut tape, &policy.store, &paths, Tensor::filled(1, 1, q0), len, false);
            let v = tape.value(total).item();
            assert!(v <= lp + 1e-6, "q0={q0}: {v} above the LP {lp}");
            sum_v += v;
            sum_lp += lp;
        }
        // the low-stock corner stalls in a saturated withdraw-everything policy
        assert!(sum_v >= 0.95 * sum_lp, "{sum_v} vs {sum_lp}");
    }

    #[test]
    fn idle_storage_regresses_onto_the_next_value() {
        let mut c = config(0.0, 6, 2);
        c.iterations = 300;
        c.value_iterations = 3000;
        let p1 = train_block(&c, 1, 3, 3, None).unwrap();
        let (next, _) = fit_bellman(&c, 1, 3, &p1, None).unwrap();
        let mut idle = c.clone();
        idle.storage.c_inject = 0.0;
        idle.storage.c_withdraw = 0.0;
        let p0 = train_block(&idle, 0, 0, 3, Some(&next)).unwrap();
        let (v0, _) = fit_bellman(&idle, 0, 0, &p0, Some(&next)).unwrap();
        let q = Tensor::column((0..=10).map(|k| 10.0 * k as f64).collect());
        let a = v0.eval(&Tensor::filled(11, 1, 0.0), &q);
        let b = next.eval(&Tensor::filled(11, 1, 0.0), &q);
        let range = b.iter().cloned().fold(f64::MIN, f64::max) - b.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range > 100.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 0.02 * range, "{x} vs {y}");
        }
    }

    #[test]
    fn regression_loss_falls() {
        let mut c = config(0.08, 10, 2);
        c.value = ValueSpec::icnn(ValueKind::GroupMax, 1, 6, 8, 2);
        c.value_iterations = 600;
        let r = run_gsdp(&c).unwrap();
        let log = &r.blocks[1].value_log;
        let head: f64 = log[..5].iter().map(|e| e.loss).sum();
        let tail: f64 = log[log.len() - 5..].iter().map(|e| e.loss).sum();
        assert!(tail < head, "{head} -> {tail}");
        assert!(r.value.is_finite());
        assert_eq!(r.blocks[0].start, 0);
        assert!(r.blocks[0].value.is_none());
    }

    #[test]
    fn lstm_blocks_are_rejected() {
        let mut c = config(0.08, 6, 2);
        c.policy = PolicyKind::LstmFf;
        assert!(run_gsdp(&c).is_err());
    }
}
