//! Global valuation: one policy for the whole horizon, trained by
//! stochastic gradient ascent on the pathwise profit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Checkpoint, LrSchedule, NodeId, ParamStore, Tape, Tensor};
use crate::dp::mean_and_se;
use crate::error::{invalid, Error, Result};
use crate::nets::{Policy, PolicyKind, PolicySpec};
use crate::price_models::{ForwardModel, Normalization, PathBatch};
use crate::rng::{derive_seed, domain, StreamRng};
use crate::value::FittedValue;
use crate::storage::{batch_cashflow, clipped_control, Impact, StorageSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GvConfig {
    pub model: ForwardModel,
    pub horizon: usize,
    /// Spec of each storage; all `storages` replicas are identical.
    pub storage: StorageSpec,
    pub storages: usize,
    pub policy: PolicyKind,
    /// Overrides the default hidden width when set.
    pub neurons: Option<usize>,
    pub lstm_shared_head: bool,
    /// Price-impact coefficient `P`; zero gives the linear objective.
    pub impact: f64,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub eval_paths: usize,
    pub eval_seed: u64,
    pub log_every: usize,
    /// Where to dump parameters when training diverges.
    pub diagnostic_path: Option<PathBuf>,
}

impl GvConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate(self.horizon)?;
        self.storage.validate()?;
        if self.horizon == 0 || self.storages == 0 || self.batch == 0 || self.eval_paths == 0 {
            return Err(invalid("horizon, storages, batch and eval_paths must be positive"));
        }
        if !(self.impact >= 0.0) {
            return Err(invalid("price impact must be non-negative"));
        }
        Ok(())
    }

    pub fn impact(&self) -> Option<Impact> {
        impact_of(self.impact, self.storages)
    }

    pub fn policy_spec(&self) -> PolicySpec {
        policy_spec(
            self.policy,
            self.horizon,
            self.model.n_factors(),
            self.storages,
            self.neurons,
            self.lstm_shared_head,
        )
    }
}

pub(crate) fn impact_of(p: f64, storages: usize) -> Option<Impact> {
    (p > 0.0).then_some(Impact {
        coefficient: p,
        storages,
    })
}

pub(crate) fn policy_spec(
    kind: PolicyKind,
    steps: usize,
    n_factors: usize,
    storages: usize,
    neurons: Option<usize>,
    shared_head: bool,
) -> PolicySpec {
    let mut s = PolicySpec::new(kind, steps, price_dim(kind, n_factors), storages);
    if let Some(n) = neurons {
        s.neurons = n;
    }
    s.lstm_shared_head = shared_head;
    s
}

/// The recurrent policy sees the spot only; the Markovian ones also see
/// the factors when there is more than one.
pub(crate) fn price_dim(kind: PolicyKind, n_factors: usize) -> usize {
    if kind == PolicyKind::LstmFf || n_factors == 1 {
        1
    } else {
        1 + n_factors
    }
}

pub(crate) fn price_features(paths: &PathBatch, k: usize, norm: &Normalization, dim: usize) -> Tensor {
    let b = paths.n_paths;
    let mut data = Vec::with_capacity(b * dim);
    for p in 0..b {
        data.push(norm.spot(paths.spot(p, k)));
        if dim > 1 {
            data.extend(paths.factors(p, k).iter().enumerate().map(|(i, &y)| norm.factor(i, y)));
        }
    }
    Tensor::from_vec(b, dim, data)
}

pub(crate) struct Rollout<'a> {
    pub policy: &'a Policy,
    pub spec: &'a PolicySpec,
    pub norm: &'a Normalization,
    pub specs: &'a [StorageSpec],
    pub impact: Option<Impact>,
}

impl Rollout<'_> {
    /// Runs `n_decisions` dates of `paths` from `q0`. Returns the summed
    /// cash flows `(B, 1)` and the final stock `(B, M)`.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        paths: &PathBatch,
        q0: Tensor,
        n_decisions: usize,
        train: bool,
    ) -> (NodeId, NodeId) {
        let b = paths.n_paths;
        let q_max: Vec<f64> = self.specs.iter().map(|s| s.q_max).collect();
        let inv = tape.input(Tensor::row_vector(q_max.iter().map(|m| 1.0 / m).collect()));
        let mut q = tape.input(q0);
        let mut total = tape.input(Tensor::zeros(b, 1));
        let mut state = self.policy.start(tape, b);
        for k in 0..n_decisions {
            let price = tape.input(price_features(paths, k, self.norm, self.spec.price_dim));
            let qn = tape.mul(q, inv);
            let phi = self.policy.act(tape, store, &mut state, k, price, qn, train);
            let u = clipped_control(tape, q, phi, self.specs);
            let spot = tape.input(Tensor::column((0..b).map(|p| paths.spot(p, k)).collect()));
            let cash = batch_cashflow(tape, spot, u, self.impact);
            total = tape.add(total, cash);
            let raw = tape.add(q, u);
            let capped = tape.min_const(raw, q_max.clone());
            q = tape.max_const(capped, vec![0.0; q_max.len()]);
        }
        (total, q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Minus the minibatch mean profit per storage.
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolicyArchitecture {
    spec: PolicySpec,
    norm: Normalization,
    storage: StorageSpec,
    storages: usize,
    impact: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub spec: PolicySpec,
    pub policy: Policy,
    pub store: ParamStore,
    pub norm: Normalization,
    pub storage: StorageSpec,
    pub storages: usize,
    pub impact: f64,
    pub log: Vec<LogEntry>,
}

impl TrainedPolicy {
    fn architecture(&self) -> PolicyArchitecture {
        PolicyArchitecture {
            spec: self.spec.clone(),
            norm: self.norm.clone(),
            storage: self.storage,
            storages: self.storages,
            impact: self.impact,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(&self.store, &self.architecture())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let arch: PolicyArchitecture = ck.architecture()?;
        let mut scratch = ParamStore::new(0);
        let policy = Policy::build(&mut scratch, &arch.spec)?;
        if scratch.slices() != ck.slices.as_slice() {
            return Err(Error::Checkpoint("parameter layout does not match the architecture".into()));
        }
        Ok(Self {
            spec: arch.spec,
            policy,
            store: ck.to_store()?,
            norm: arch.norm,
            storage: arch.storage,
            storages: arch.storages,
            impact: arch.impact,
            log: Vec::new(),
        })
    }

    pub(crate) fn rollout<'a>(&'a self, specs: &'a [StorageSpec]) -> Rollout<'a> {
        Rollout {
            policy: &self.policy,
            spec: &self.spec,
            norm: &self.norm,
            specs,
            impact: impact_of(self.impact, self.storages),
        }
    }
}

pub fn train_gv(config: &GvConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    let job = PolicyJob {
        model: &config.model,
        spec: config.policy_spec(),
        norm: config.model.normalization(config.horizon),
        storage: config.storage,
        storages: config.storages,
        impact: config.impact,
        start: 0,
        terminal: None,
        q0: InitialStock::Fixed,
        batch: config.batch,
        iterations: config.iterations,
        schedule: config.schedule,
        seed: config.seed,
        log_every: config.log_every,
        diagnostic_path: config.diagnostic_path.as_deref(),
    };
    job.train()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum InitialStock {
    Fixed,
    /// Uniform on `[0, q_max]^M`, drawn from the given seed.
    Uniform(u64),
}

impl InitialStock {
    pub fn draw(&self, storage: &StorageSpec, rows: usize, cols: usize, offset: u64) -> Tensor {
        match *self {
            InitialStock::Fixed => Tensor::filled(rows, cols, storage.q_init),
            InitialStock::Uniform(seed) => {
                let mut rng = StreamRng::new(seed, offset);
                Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform() * storage.q_max).collect())
            }
        }
    }
}

/// Policy optimization over dates `start..start + spec.steps`, optionally
/// closed by a fitted value of the stock left at the following date.
pub(crate) struct PolicyJob<'a> {
    pub model: &'a ForwardModel,
    pub spec: PolicySpec,
    pub norm: Normalization,
    pub storage: StorageSpec,
    pub storages: usize,
    pub impact: f64,
    pub start: usize,
    pub terminal: Option<&'a FittedValue>,
    pub q0: InitialStock,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub log_every: usize,
    pub diagnostic_path: Option<&'a Path>,
}

impl PolicyJob<'_> {
    pub fn train(self) -> Result<TrainedPolicy> {
        let spec = self.spec;
        let n = spec.steps;
        let mut store = ParamStore::new(derive_seed(self.seed, domain::INIT));
        let policy = Policy::build(&mut store, &spec)?;
        let specs = vec![self.storage; self.storages];
        let rollout = Rollout {
            policy: &policy,
            spec: &spec,
            norm: &self.norm,
            specs: &specs,
            impact: impact_of(self.impact, self.storages),
        };
        let mut adam = AdamState::new(
            store.len(),
            AdamConfig {
                schedule: self.schedule,
                ..AdamConfig::constant(0.0)
            },
        );
        let train_seed = derive_seed(self.seed, domain::TRAIN);
        let dates = n + usize::from(self.terminal.is_some());
        let m = self.storages as f64;
        let mut log = Vec::new();
        let mut tape = Tape::new();
        for it in 0..self.iterations {
            let offset = (it * self.batch) as u64;
            let paths = self.model.simulate(self.batch, self.start, dates, train_seed, offset);
            tape.clear();
            let q0 = self.q0.draw(&self.storage, self.batch, self.storages, it as u64);
            let (mut total, q) = rollout.run(&mut tape, &store, &paths, q0, n, true);
            if let Some(vb) = self.terminal {
                let v = vb.forward(&mut tape, &factor_tensor(&paths, n), q);
                total = tape.add(total, v);
            }
            let mean = tape.mean_rows(total);
            let loss = tape.scale(mean, -1.0 / m);
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                if let Some(p) = self.diagnostic_path {
                    Checkpoint::new(&store, &spec)?.save(p)?;
                }
                return Err(Error::Diverged {
                    iteration: it,
                    detail: format!("loss is {lv}"),
                });
            }
            if it % self.log_every.max(1) == 0 || it + 1 == self.iterations {
                log.push(LogEntry { iteration: it, loss: lv });
                log::debug!("policy at date {} iteration {it}: loss {lv:.3}", self.start);
            }
            store.zero_grads();
            tape.backward(loss, &mut store)?;
            adam_step(&mut store, &mut adam);
        }
        Ok(TrainedPolicy {
            spec,
            policy,
            store,
            norm: self.norm,
            storage: self.storage,
            storages: self.storages,
            impact: self.impact,
            log,
        })
    }
}

/// Factor states at step `k` as a `(B, n_factors)` tensor.
pub(crate) fn factor_tensor(paths: &PathBatch, k: usize) -> Tensor {
    let data = (0..paths.n_paths).flat_map(|p| paths.factors(p, k).to_vec()).collect();
    Tensor::from_vec(paths.n_paths, paths.n_factors, data)
}

pub(crate) const EVAL_CHUNK: usize = 1000;

/// Mean and standard error of the total profit `J^M` over fresh paths.
pub fn evaluate_policy(trained: &TrainedPolicy, model: &ForwardModel, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let horizon = trained.spec.steps;
    model.validate(horizon)?;
    if price_dim(trained.spec.kind, model.n_factors()) != trained.spec.price_dim {
        return Err(invalid("policy was trained on a model with another factor count"));
    }
    let specs = vec![trained.storage; trained.storages];
    let rollout = trained.rollout(&specs);
    let eval_seed = derive_seed(seed, domain::EVAL);
    let mut totals = Vec::with_capacity(n_paths);
    let mut tape = Tape::new();
    let mut done = 0;
    while done < n_paths {
        let b = EVAL_CHUNK.min(n_paths - done);
        let paths = model.simulate(b, 0, horizon, eval_seed, done as u64);
        tape.clear();
        let q0 = Tensor::filled(b, trained.storages, trained.storage.q_init);
        let (total, _) = rollout.run(&mut tape, &trained.store, &paths, q0, horizon, false);
        totals.extend_from_slice(&tape.value(total).data);
        done += b;
    }
    Ok(mean_and_se(&totals))
}

/// Replicates the storage `m` times; results are reported per storage.
pub fn scale_to_dimension(config: &GvConfig, m: usize) -> GvConfig {
    GvConfig {
        storages: m,
        ..config.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::deterministic_storage_lp;
    use crate::price_models::{OneFactorParams, SeasonalCurve};

    fn config(sigma: f64, horizon: usize, kind: PolicyKind) -> GvConfig {
        GvConfig {
            model: ForwardModel::one_factor(
                OneFactorParams { sigma, a: 0.01 },
                SeasonalCurve::flat(30.0).with_term(5.0, horizon as f64).with_term(1.0, 7.0),
            ),
            horizon,
            storage: StorageSpec {
                c_inject: 5.0,
                c_withdraw: 10.0,
                q_max: 100.0,
                q_init: 50.0,
            },
            storages: 1,
            policy: kind,
            neurons: None,
            lstm_shared_head: false,
            impact: 0.0,
            batch: 32,
            iterations: 200,
            schedule: LrSchedule::Constant { lr: 5e-3 },
            seed: 1,
            eval_paths: 200,
            eval_seed: 2,
            log_every: 10,
            diagnostic_path: None,
        }
    }

    #[test]
    fn zero_policy_empties_the_storage() {
        let cfg = config(0.0, 10, PolicyKind::PerStep);
        let mut t = train_gv(&GvConfig { iterations: 0, ..cfg.clone() }).unwrap();
        // large negative output bias drives every unit control to ~0
        for net in match &t.policy {
            Policy::PerStep(p) => &p.nets,
            _ => unreachable!(),
        } {
            let (w, b) = net.layers()[2];
            t.store.get_mut(w).iter_mut().for_each(|v| *v = 0.0);
            t.store.get_mut(b)[0] = -800.0;
        }
        let (v, se) = evaluate_policy(&t, &cfg.model, 50, 0).unwrap();
        let prices: Vec<f64> = (0..10).map(|k| cfg.model.spot_from(&[0.0], k as f64)).collect();
        let hand: f64 = prices.iter().take(5).map(|s| 10.0 * s).sum();
        assert!((v - hand).abs() < 1e-9, "{v} vs {hand}");
        assert!(se < 1e-9);
    }

    #[test]
    fn evaluation_is_deterministic_and_survives_a_checkpoint() {
        let cfg = config(0.08, 8, PolicyKind::PerStep);
        let t = train_gv(&GvConfig { iterations: 5, ..cfg.clone() }).unwrap();
        let a = evaluate_policy(&t, &cfg.model, 300, 9).unwrap();
        let b = evaluate_policy(&t, &cfg.model, 300, 9).unwrap();
        assert_eq!(a, b);
        let dir = std::env::temp_dir().join(format!("gv-ck-{}", std::process::id()));
        t.save(&dir).unwrap();
        let back = TrainedPolicy::load(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(evaluate_policy(&back, &cfg.model, 300, 9).unwrap(), a);
    }

    #[test]
    fn short_deterministic_training_approaches_the_lp() {
        let cfg = GvConfig {
            iterations: 1500,
            batch: 4,
            schedule: LrSchedule::Linear {
                initial: 2e-2,
                floor: 1e-3,
                steps: 1500,
            },
            ..config(0.0, 10, PolicyKind::PerStep)
        };
        let lp = deterministic_storage_lp(&cfg.model, &cfg.storage, cfg.horizon).unwrap();
        let t = train_gv(&cfg).unwrap();
        let (v, _) = evaluate_policy(&t, &cfg.model, 4, 0).unwrap();
        assert!(v <= lp + 1e-6);
        assert!(v >= 0.99 * lp, "{v} vs {lp}");
        assert!(t.log.last().unwrap().loss < t.log[0].loss);
    }

    #[test]
    fn every_policy_kind_trains_a_few_steps() {
        for kind in [PolicyKind::PerStep, PolicyKind::Merged, PolicyKind::DeepSet, PolicyKind::LstmFf] {
            let mut cfg = config(0.08, 6, kind);
            cfg.iterations = 3;
            cfg.storages = 2;
            cfg.impact = 0.2;
            let t = train_gv(&cfg).unwrap();
            let (v, _) = evaluate_policy(&t, &cfg.model, 50, 0).unwrap();
            assert!(v.is_finite());
        }
    }

    #[test]
    fn scaling_keeps_everything_but_the_count() {
        let cfg = config(0.08, 6, PolicyKind::PerStep);
        assert_eq!(scale_to_dimension(&cfg, 1), cfg);
        let c10 = scale_to_dimension(&cfg, 10);
        assert_eq!(c10.storages, 10);
        assert_eq!(c10.policy_spec().neurons, 20);
    }

    #[test]
    fn diverging_training_is_reported() {
        let mut cfg = config(0.08, 4, PolicyKind::PerStep);
        cfg.storage.c_inject = f64::MAX;
        cfg.storage.c_withdraw = f64::MAX;
        cfg.storage.q_max = f64::MAX;
        cfg.storage.q_init = f64::MAX / 2.0;
        cfg.iterations = 2;
        assert!(matches!(train_gv(&cfg), Err(Error::Diverged { .. })));
    }
}
