use proptest::prelude::*;
use reservoir_core::autodiff::LrSchedule;
use reservoir_core::dp::{simulate_dp_policy, solve_dp, DpConfig};
use reservoir_core::gv::{evaluate_policy, train_gv, GvConfig, TrainedPolicy};
use reservoir_core::lp::deterministic_storage_lp;
use reservoir_core::nets::PolicyKind;
use reservoir_core::price_models::{ForwardModel, OneFactorParams, SeasonalCurve};
use reservoir_core::storage::{apply_control, control_from_unit, effective_bounds, StockVector, StorageSpec};

fn spec() -> StorageSpec {
    StorageSpec {
        c_inject: 5.0,
        c_withdraw: 10.0,
        q_max: 100.0,
        q_init: 50.0,
    }
}

fn model(sigma: f64, n: usize) -> ForwardModel {
    ForwardModel::one_factor(
        OneFactorParams { sigma, a: 0.01 },
        SeasonalCurve::flat(30.0).with_term(5.0, n as f64).with_term(1.0, 7.0),
    )
}

#[test]
fn regression_dp_without_volatility_matches_the_lp() {
    let n = 12;
    let m = model(0.0, n);
    let lp = deterministic_storage_lp(&m, &spec(), n).unwrap();
    let cfg = DpConfig {
        grid_points: 21,
        n_paths: 200,
        ..DpConfig::default()
    };
    let sol = solve_dp(&m, &spec(), n, &cfg).unwrap();
    assert!((sol.value - lp).abs() <= 1e-6 * lp.max(1.0), "dp {} lp {lp}", sol.value);
    let (v, _) = simulate_dp_policy(&sol, &m, 50, 9).unwrap();
    assert!((v - lp).abs() <= 1e-6 * lp.max(1.0), "simulated {v} lp {lp}");
}

#[test]
fn dp_value_grows_with_volatility() {
    let n = 10;
    let cfg = DpConfig {
        grid_points: 21,
        n_paths: 4000,
        ..DpConfig::default()
    };
    let calm = solve_dp(&model(0.0, n), &spec(), n, &cfg).unwrap().value;
    let wild = solve_dp(&model(0.5, n), &spec(), n, &cfg).unwrap().value;
    assert!(wild > calm, "{wild} <= {calm}");
}

fn tiny_gv() -> GvConfig {
    GvConfig {
        model: model(0.1, 6),
        horizon: 6,
        storage: spec(),
        storages: 1,
        policy: PolicyKind::PerStep,
        neurons: None,
        lstm_shared_head: false,
        impact: 0.0,
        batch: 16,
        iterations: 30,
        schedule: LrSchedule::Constant { lr: 1e-3 },
        seed: 5,
        eval_paths: 200,
        eval_seed: 1,
        log_every: 10,
        diagnostic_path: None,
    }
}

#[test]
fn gv_checkpoint_round_trip_preserves_the_policy() {
    let cfg = tiny_gv();
    let trained = train_gv(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    trained.save(&path).unwrap();
    let loaded = TrainedPolicy::load(&path).unwrap();
    let a = evaluate_policy(&trained, &cfg.model, 300, 11).unwrap();
    let b = evaluate_policy(&loaded, &cfg.model, 300, 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gv_training_is_seed_deterministic() {
    let cfg = tiny_gv();
    let a = train_gv(&cfg).unwrap();
    let b = train_gv(&cfg).unwrap();
    assert_eq!(
        evaluate_policy(&a, &cfg.model, 100, 2).unwrap(),
        evaluate_policy(&b, &cfg.model, 100, 2).unwrap()
    );
}

fn any_spec() -> impl Strategy<Value = StorageSpec> {
    (0.0..50.0f64, 0.0..50.0f64, 1.0..200.0f64, 0.0..1.0f64).prop_map(|(ci, cw, q_max, f)| StorageSpec {
        c_inject: ci,
        c_withdraw: cw,
        q_max,
        q_init: f * q_max,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clipped_controls_keep_every_trajectory_admissible(
        s in any_spec(),
        phis in prop::collection::vec(0.0..=1.0f64, 1..40),
    ) {
        let specs = [s];
        let mut q = StockVector::initial(&specs);
        for phi in phis {
            let b = effective_bounds(&q, &specs);
            let u = control_from_unit(&b, &[phi]);
            prop_assert!(u[0] >= -s.c_withdraw - 1e-9 && u[0] <= s.c_inject + 1e-9);
            let next = apply_control(&q, &u, &specs);
            prop_assert!((next.levels()[0] - q.levels()[0] - u[0]).abs() <= 1e-9 * s.q_max);
            prop_assert!(StockVector::new(next.levels().to_vec(), &specs).is_ok());
            q = next;
        }
    }

    #[test]
    fn lp_value_is_nonnegative_and_monotone_in_capacity(
        s in any_spec(),
        n in 1usize..10,
        extra in 0.0..20.0f64,
    ) {
        let m = model(0.0, n);
        let v = deterministic_storage_lp(&m, &s, n).unwrap();
        prop_assert!(v >= -1e-7);
        let wider = StorageSpec { c_inject: s.c_inject + extra, c_withdraw: s.c_withdraw + extra, ..s };
        let w = deterministic_storage_lp(&m, &wider, n).unwrap();
        prop_assert!(w >= v - 1e-6 * v.abs().max(1.0));
    }
}
