//! Named experiments, one family per published table. Every preset exists
//! at paper scale and at desk scale; the desk mapping is spelled out in the
//! builders below.

use reservoir_core::autodiff::LrSchedule;
use reservoir_core::dp::{ControlRule, DpConfig, Flavor};
use reservoir_core::gmcsdp::GmcsdpConfig;
use reservoir_core::gsdp::GsdpConfig;
use reservoir_core::gv::GvConfig;
use reservoir_core::nets::PolicyKind;
use reservoir_core::price_models::{ForwardModel, OneFactorParams, SeasonalCurve, ThreeFactorParams};
use reservoir_core::storage::StorageSpec;
use reservoir_core::value::{ValueKind, ValueSpec};
use serde::Serialize;

use crate::config::{ExperimentConfig, Method, Reference, Scale};
use crate::{BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PresetInfo {
    pub name: String,
    pub method: &'static str,
    pub description: String,
    /// Published value the paper-scale preset is compared with.
    pub reference: Option<f64>,
    pub source: String,
}

/// Horizon of the desk GV presets.
pub const DESK_GV_HORIZON: usize = 30;
/// Horizon of the desk GSDP presets.
pub const DESK_GSDP_HORIZON: usize = 56;

const PAPER_HORIZON: usize = 365;

fn storage() -> StorageSpec {
    StorageSpec {
        c_inject: 5.0,
        c_withdraw: 10.0,
        q_max: 100.0,
        q_init: 50.0,
    }
}

fn small_storage() -> StorageSpec {
    StorageSpec {
        c_inject: 10.0,
        c_withdraw: 20.0,
        q_max: 100.0,
        q_init: 50.0,
    }
}

/// `F(0,T) = 30 + 5 cos(2 pi T / N) + cos(2 pi T / 7)`: the yearly swing
/// spans the horizon at either scale.
fn seasonal(horizon: usize) -> SeasonalCurve {
    SeasonalCurve::flat(30.0).with_term(5.0, horizon as f64).with_term(1.0, 7.0)
}

pub fn linear_model(horizon: usize) -> ForwardModel {
    ForwardModel::one_factor(OneFactorParams { sigma: 0.08, a: 0.01 }, seasonal(horizon))
}

fn three_factor_model(horizon: usize) -> ForwardModel {
    ForwardModel::three_factor(
        ThreeFactorParams {
            sigma: [0.04, 0.028, 0.023],
            a: [0.01, 0.005, 0.0033],
        },
        seasonal(horizon),
    )
}

fn gmcsdp_model(period: f64) -> ForwardModel {
    ForwardModel::one_factor(
        OneFactorParams { sigma: 0.3, a: 0.16 },
        SeasonalCurve::flat(30.0).with_term(4.0, period),
    )
}

fn decay(initial: f64, iterations: usize) -> LrSchedule {
    LrSchedule::Linear {
        initial,
        floor: 1e-4,
        steps: iterations as u64,
    }
}

struct GvSizes {
    horizon: usize,
    iterations: usize,
    eval_paths: usize,
    runs: usize,
}

fn gv_sizes(scale: Scale) -> GvSizes {
    match scale {
        Scale::Paper => GvSizes {
            horizon: PAPER_HORIZON,
            iterations: 100_000,
            eval_paths: 200_000,
            runs: 10,
        },
        Scale::Desk => GvSizes {
            horizon: DESK_GV_HORIZON,
            iterations: 6_000,
            eval_paths: 20_000,
            runs: 3,
        },
    }
}

fn gv_config(model: ForwardModel, s: &GvSizes, storages: usize, policy: PolicyKind, impact: f64) -> GvConfig {
    GvConfig {
        model,
        horizon: s.horizon,
        storage: storage(),
        storages,
        policy,
        neurons: None,
        lstm_shared_head: false,
        impact,
        batch: 200,
        iterations: s.iterations,
        schedule: decay(2e-3, s.iterations),
        seed: 0,
        eval_paths: s.eval_paths,
        eval_seed: 0,
        log_every: (s.iterations / 50).max(1),
        diagnostic_path: None,
    }
}

/// Reference computed by regression DP before the runs.
fn dp_reference(scale: Scale, nonlinear: bool, factors: usize) -> Reference {
    let paths = match scale {
        Scale::Paper => 100_000,
        Scale::Desk => 20_000,
    };
    Reference::Dp {
        dp: DpConfig {
            grid_points: if nonlinear { 101 } else { 21 },
            control: if nonlinear {
                ControlRule::Discretized { steps: 15 }
            } else {
                ControlRule::GridAware
            },
            bins_per_dim: if factors == 1 { 50 } else { 6 },
            n_paths: paths,
            seed: 1_000_003,
            flavor: Flavor::CashFlow,
            impact: None,
        },
        eval_paths: paths,
    }
}

/// DP setup used by `dp-reference` for any preset: the preset's own
/// reference when it is computed, otherwise the desk defaults.
pub fn dp_setup(cfg: &ExperimentConfig) -> crate::config::DpExperiment {
    if let Method::Dp(d) = &cfg.method {
        return d.clone();
    }
    let fallback = dp_reference(cfg.scale, cfg.method.impact() > 0.0, cfg.method.model().n_factors());
    let r = match &cfg.reference {
        Reference::Dp { .. } => &cfg.reference,
        _ => &fallback,
    };
    r.dp_setup(&cfg.method).expect("dp reference")
}

fn published(scale: Scale, value: f64, source: &str, nonlinear: bool, factors: usize) -> Reference {
    match scale {
        Scale::Paper => Reference::Published {
            value,
            source: source.to_string(),
        },
        Scale::Desk => dp_reference(scale, nonlinear, factors),
    }
}

struct GsdpSizes {
    horizon: usize,
    iterations: usize,
    value_samples: usize,
    value_iterations: usize,
    eval_paths: usize,
    runs: usize,
}

fn gsdp_sizes(scale: Scale) -> GsdpSizes {
    match scale {
        Scale::Paper => GsdpSizes {
            horizon: PAPER_HORIZON,
            iterations: 100_000,
            value_samples: 100_000,
            value_iterations: 100_000,
            eval_paths: 200_000,
            runs: 10,
        },
        Scale::Desk => GsdpSizes {
            horizon: DESK_GSDP_HORIZON,
            iterations: 1_500,
            value_samples: 4_000,
            value_iterations: 3_000,
            eval_paths: 20_000,
            runs: 5,
        },
    }
}

/// Desk block counts keep blocks of roughly three months, one month and one
/// week when the horizon shrinks from a year to eight weeks.
fn desk_blocks(paper_blocks: usize) -> usize {
    match paper_blocks {
        4 => 2,
        13 => 4,
        _ => 8,
    }
}

fn gsdp_config(scale: Scale, blocks: usize, storages: usize, impact: f64, value: ValueSpec) -> GsdpConfig {
    let s = gsdp_sizes(scale);
    let blocks = match scale {
        Scale::Paper => blocks,
        Scale::Desk => desk_blocks(blocks),
    };
    GsdpConfig {
        model: linear_model(s.horizon),
        horizon: s.horizon,
        blocks,
        storage: storage(),
        storages,
        policy: PolicyKind::PerStep,
        neurons: None,
        impact,
        batch: 200,
        iterations: s.iterations,
        schedule: decay(2e-3, s.iterations),
        value,
        value_samples: s.value_samples,
        value_batch: 200,
        value_iterations: s.value_iterations,
        value_schedule: decay(5e-3, s.value_iterations),
        random_q0: true,
        seed: 0,
        eval_paths: s.eval_paths,
        eval_seed: 0,
        log_every: (s.iterations / 20).max(1),
        diagnostic_path: None,
    }
}

fn gmcsdp_config(scale: Scale, model: ForwardModel, horizon: usize, st: StorageSpec, m: usize, value: ValueSpec) -> GmcsdpConfig {
    let mut c = GmcsdpConfig::new(model, horizon, st, m, value);
    let (samples, iterations) = match scale {
        Scale::Paper => (20_000, 15_000),
        Scale::Desk => (2_000, 3_000),
    };
    c.samples = samples;
    c.iterations = iterations;
    c.schedule = decay(5e-3, iterations);
    c.log_every = (iterations / 30).max(1);
    c
}

struct Entry {
    name: String,
    description: String,
    reference: Option<f64>,
    source: String,
    build: Box<dyn Fn(Scale) -> (Method, Reference, usize)>,
}

fn entries() -> Vec<Entry> {
    let mut out = Vec::new();
    let mut push = |name: String,
                    description: String,
                    reference: Option<f64>,
                    source: &str,
                    build: Box<dyn Fn(Scale) -> (Method, Reference, usize)>| {
        out.push(Entry {
            name,
            description,
            reference,
            source: source.to_string(),
            build,
        })
    };

    const T1: &str = "Table 1, DP value 4932";
    for (tag, kind, label) in [
        ("perstep", PolicyKind::PerStep, "one network per date"),
        ("merged", PolicyKind::Merged, "a single network with time input"),
    ] {
        push(
            format!("table1-{tag}"),
            format!("GV, dim 1, linear, {label}"),
            Some(4932.0),
            T1,
            Box::new(move |scale| {
                let s = gv_sizes(scale);
                let m = Method::Gv(gv_config(linear_model(s.horizon), &s, 1, kind, 0.0));
                (m, published(scale, 4932.0, T1, false, 1), s.runs)
            }),
        );
    }

    const T2: &str = "Table 2, DP value 4932 per storage";
    for (tag, kind) in [("ff", PolicyKind::PerStep), ("deepset", PolicyKind::DeepSet)] {
        for m in [3usize, 10] {
            push(
                format!("table2-{tag}-m{m}"),
                format!("GV, {m} identical storages, linear, {tag} policy with 10+M neurons"),
                Some(4932.0),
                T2,
                Box::new(move |scale| {
                    let s = gv_sizes(scale);
                    let c = gv_config(linear_model(s.horizon), &s, m, kind, 0.0);
                    (Method::Gv(c), published(scale, 4932.0, T2, false, 1), s.runs)
                }),
            );
        }
    }

    const T3: &str = "Table 3, DP simulation value 3796 with P=0.2";
    for m in [1usize, 5, 10] {
        push(
            format!("table3-nonlinear-m{m}"),
            format!("GV, {m} storages with price impact P=0.2"),
            Some(3796.0),
            T3,
            Box::new(move |scale| {
                let s = gv_sizes(scale);
                let c = gv_config(linear_model(s.horizon), &s, m, PolicyKind::PerStep, 0.2);
                (Method::Gv(c), published(scale, 3796.0, T3, true, 1), s.runs)
            }),
        );
    }

    const T4: &str = "Table 4, indicative 3-factor DP value 4300";
    for (tag, kind) in [("ff", PolicyKind::PerStep), ("lstm", PolicyKind::LstmFf)] {
        for m in [1usize, 5, 10] {
            push(
                format!("table4-{tag}-m{m}"),
                format!("GV, three-factor model, {m} storages, {tag} policy"),
                Some(4300.0),
                T4,
                Box::new(move |scale| {
                    let s = gv_sizes(scale);
                    let c = gv_config(three_factor_model(s.horizon), &s, m, kind, 0.0);
                    (Method::Gv(c), published(scale, 4300.0, T4, false, 3), s.runs)
                }),
            );
        }
    }

    const T5: &str = "Table 5, DP value 4932, best of 10 runs";
    for (l, paper) in [(4usize, 4900.0), (13, 4816.0), (53, 4389.0)] {
        push(
            format!("table5-l{l}-m11"),
            format!("GSDP, dim 1, L={l}, feedforward value 2x11 (paper best {paper})"),
            Some(4932.0),
            T5,
            Box::new(move |scale| {
                let c = gsdp_config(scale, l, 1, 0.0, ValueSpec::feedforward(2, 11));
                (Method::Gsdp(c), published(scale, 4932.0, T5, false, 1), gsdp_sizes(scale).runs)
            }),
        );
    }
    for (l, paper) in [(4usize, 4899.0), (13, 4834.0), (53, 4633.0)] {
        push(
            format!("table5-l{l}-m30"),
            format!("GSDP, dim 1, L={l}, feedforward value 3x30 (paper best {paper})"),
            Some(4932.0),
            T5,
            Box::new(move |scale| {
                let c = gsdp_config(scale, l, 1, 0.0, ValueSpec::feedforward(3, 30));
                (Method::Gsdp(c), published(scale, 4932.0, T5, false, 1), gsdp_sizes(scale).runs)
            }),
        );
    }

    const T6F: &str = "Table 6, feedforward part, DP values 4932 and 3796, L=53";
    for (case, impact, reference) in [("linear", 0.0, 4932.0), ("nonlinear", 0.2, 3796.0)] {
        for m in [1usize, 5, 10] {
            push(
                format!("table6-ff-{case}-m{m}"),
                format!("GSDP, {case}, {m} storages, L=53, feedforward value 5x20"),
                Some(reference),
                T6F,
                Box::new(move |scale| {
                    let c = gsdp_config(scale, 53, m, impact, ValueSpec::feedforward(5, 20));
                    let r = published(scale, reference, T6F, impact > 0.0, 1);
                    (Method::Gsdp(c), r, gsdp_sizes(scale).runs)
                }),
            );
        }
    }

    const T6: &str = "Table 6, DP value 4932, L=53";
    const T7: &str = "Table 7, DP value 3796, L=53";
    for (table, case, impact, reference, source) in [(6, "linear", 0.0, 4932.0, T6), (7, "nonlinear", 0.2, 3796.0, T7)] {
        for (tag, kind, m_y) in [
            ("psi-a", ValueKind::Concave, 20usize),
            ("psi-ad", ValueKind::Free, 20),
            ("psi-gm", ValueKind::GroupMax, 40),
        ] {
            for m in [1usize, 5, 10] {
                push(
                    format!("table{table}-{tag}-m{m}"),
                    format!("GSDP, {case}, {m} storages, L=53, {tag} value with m_x=10, 3 layers, m_y={m_y}"),
                    Some(reference),
                    source,
                    Box::new(move |scale| {
                        let v = ValueSpec::icnn(kind, 3, 10, m_y, 2);
                        let c = gsdp_config(scale, 53, m, impact, v);
                        let r = published(scale, reference, source, impact > 0.0, 1);
                        (Method::Gsdp(c), r, gsdp_sizes(scale).runs)
                    }),
                );
            }
        }
    }

    const T8: &str = "Table 8, DP value 3424, N=42";
    for m in [1usize, 3, 5] {
        for m_y in [8usize, 10, 12] {
            push(
                format!("table8-m{m}-my{m_y}"),
                format!("GMCSDP, N=42, {m} storages, GroupMax m_x=8, one hidden layer, m_y={m_y}, G=2"),
                Some(3424.0),
                T8,
                Box::new(move |scale| {
                    let v = ValueSpec::icnn(ValueKind::GroupMax, 1, 8, m_y, 2);
                    let c = gmcsdp_config(scale, gmcsdp_model(7.0), 42, storage(), m, v);
                    let r = Reference::Published {
                        value: 3424.0,
                        source: T8.to_string(),
                    };
                    (Method::Gmcsdp(c), r, 10)
                }),
            );
        }
    }

    const T9: &str = "Table 9, DP value 1818, N=8";
    for m in 1usize..=4 {
        let mut rows = vec![("", 1usize, 9usize, 3usize), ("", 1, 10, 2), ("", 1, 12, 2)];
        if m <= 2 {
            rows.push(("k3-", 2, 10, 5));
        }
        for (k, layers, m_y, g) in rows {
            push(
                format!("table9-dim{m}-{k}my{m_y}"),
                format!("GMCSDP, N=8, {m} storages, GroupMax m_x=6, {layers} hidden layer(s), m_y={m_y}, G={g}"),
                Some(1818.0),
                T9,
                Box::new(move |scale| {
                    let v = ValueSpec::icnn(ValueKind::GroupMax, layers, 6, m_y, g);
                    let c = gmcsdp_config(scale, gmcsdp_model(4.0), 8, small_storage(), m, v);
                    let r = Reference::Published {
                        value: 1818.0,
                        source: T9.to_string(),
                    };
                    (Method::Gmcsdp(c), r, 10)
                }),
            );
        }
    }
    out
}

pub fn catalog() -> Vec<PresetInfo> {
    entries()
        .into_iter()
        .map(|e| {
            let method = (e.build)(Scale::Desk).0.label();
            PresetInfo {
                name: e.name,
                method,
                description: e.description,
                reference: e.reference,
                source: e.source,
            }
        })
        .collect()
}

pub fn preset(name: &str, scale: Scale) -> Result<ExperimentConfig> {
    let e = entries()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| BenchError::UnknownPreset(name.to_string()))?;
    let (method, reference, runs) = (e.build)(scale);
    let cfg = ExperimentConfig {
        name: e.name,
        description: format!("{} [{}]", e.description, e.source),
        scale,
        runs,
        seed: 0,
        reference,
        method,
    };
    cfg.validate()?;
    Ok(cfg)
}
