//! Dispatch of an experiment to its trainer, seeded replication and
//! aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use reservoir_core::dp::{simulate_dp_policy, solve_dp, DpSolution};
use reservoir_core::gmcsdp::run_gmcsdp;
use reservoir_core::gsdp::run_gsdp;
use reservoir_core::gv::{evaluate_policy, train_gv, LogEntry};

use crate::config::{DpExperiment, ExperimentConfig, Method, Reference};
use crate::report::{ResolvedReference, RunReport, RunRow, Summary};
use crate::Result;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Report directory; the experiment writes into `out/<name>`.
    pub out: Option<PathBuf>,
    /// Concurrent runs. Results do not depend on it.
    pub threads: usize,
}

/// Per-storage value of one run with its Monte Carlo error when the value
/// comes from a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub value: f64,
    pub std_error: Option<f64>,
}

fn write_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for e in log {
        w.write_record([e.iteration.to_string(), e.loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Regression DP followed by an out-of-sample simulation of its policy.
/// Returns the solution, the simulated value and its standard error.
pub fn dp_reference(setup: &DpExperiment) -> Result<(DpSolution, f64, f64)> {
    let sol = solve_dp(&setup.model, &setup.storage, setup.horizon, &setup.dp)?;
    let (v, se) = simulate_dp_policy(&sol, &setup.model, setup.eval_paths, setup.dp.seed)?;
    Ok((sol, v, se))
}

/// One seeded run. Artifacts (training logs, stage statistics, Bellman
/// tables) go to `dir` when given.
pub fn run_method(method: &Method, dir: Option<&Path>) -> Result<RunOutcome> {
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    match method {
        Method::Gv(c) => {
            let trained = train_gv(c)?;
            let (v, se) = evaluate_policy(&trained, &c.model, c.eval_paths, c.eval_seed)?;
            if let Some(d) = dir {
                write_log(&d.join("training.csv"), &trained.log)?;
                trained.save(d.join("policy.json"))?;
            }
            let m = c.storages as f64;
            Ok(RunOutcome {
                value: v / m,
                std_error: Some(se / m),
            })
        }
        Method::Gsdp(c) => {
            let r = run_gsdp(c)?;
            if let Some(d) = dir {
                let mut w = csv::Writer::from_path(d.join("blocks.csv"))?;
                w.write_record(["block", "start", "dates", "final_policy_loss", "final_value_mse"])?;
                for (l, b) in r.blocks.iter().enumerate() {
                    let last = |log: &[LogEntry]| log.last().map(|e| e.loss.to_string()).unwrap_or_default();
                    w.write_record([
                        l.to_string(),
                        b.start.to_string(),
                        b.policy.spec.steps.to_string(),
                        last(&b.policy.log),
                        last(&b.value_log),
                    ])?;
                }
                w.flush()?;
            }
            let m = c.storages as f64;
            Ok(RunOutcome {
                value: r.value / m,
                std_error: Some(r.std_error / m),
            })
        }
        Method::Gmcsdp(c) => {
            let r = run_gmcsdp(c)?;
            if let Some(d) = dir {
                let mut w = csv::Writer::from_path(d.join("stages.csv"))?;
                w.write_record(["stage", "mean_cuts", "lp_seconds", "initial_mse", "final_mse"])?;
                for s in &r.stages {
                    let mse = |e: Option<&LogEntry>| e.map(|e| e.loss.to_string()).unwrap_or_default();
                    w.write_record([
                        s.stage.to_string(),
                        format!("{:.2}", s.mean_cuts),
                        format!("{:.3}", s.lp_seconds),
                        mse(s.log.first()),
                        mse(s.log.last()),
                    ])?;
                }
                w.flush()?;
            }
            Ok(RunOutcome {
                value: r.per_storage,
                std_error: None,
            })
        }
        Method::Dp(c) => {
            let (sol, v, se) = dp_reference(c)?;
            if let Some(d) = dir {
                sol.table.write_csv(fs::File::create(d.join("bellman.csv"))?)?;
            }
            Ok(RunOutcome {
                value: v,
                std_error: Some(se),
            })
        }
    }
}

fn resolve_reference(config: &ExperimentConfig) -> Result<Option<ResolvedReference>> {
    Ok(match &config.reference {
        Reference::Published { value, source } => Some(ResolvedReference {
            value: *value,
            std_error: None,
            source: source.clone(),
        }),
        Reference::Dp { .. } => {
            let setup = config.reference.dp_setup(&config.method).expect("dp reference");
            let (_, v, se) = dp_reference(&setup)?;
            log::info!("{}: dp reference {v:.2} +- {se:.2}", config.name);
            Some(ResolvedReference {
                value: v,
                std_error: Some(se),
                source: format!(
                    "regression DP, {} paths, {} stock levels, simulated on {} fresh paths",
                    setup.dp.n_paths, setup.dp.grid_points, setup.eval_paths
                ),
            })
        }
        Reference::None => None,
    })
}

/// Runs seeds `seed .. seed + runs`, records failures per run and
/// aggregates over the completed ones.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let clock = Instant::now();
    let reference = resolve_reference(config)?;
    let dir = opts.out.as_ref().map(|o| o.join(&config.name));
    let rows: Mutex<Vec<Option<RunRow>>> = Mutex::new(vec![None; config.runs]);
    let next = AtomicUsize::new(0);
    let workers = opts.threads.clamp(1, config.runs);
    let work = || loop {
        let r = next.fetch_add(1, Ordering::SeqCst);
        if r >= config.runs {
            break;
        }
        let seed = config.seed + r as u64;
        let started = Instant::now();
        let run_dir = dir.as_ref().map(|d| d.join(format!("run-{r}")));
        let outcome = run_method(&config.method.with_seed(seed), run_dir.as_deref());
        let seconds = started.elapsed().as_secs_f64();
        let row = match outcome {
            Ok(o) => {
                log::info!("{} run {r} (seed {seed}): {:.2} in {seconds:.1}s", config.name, o.value);
                RunRow {
                    run: r,
                    seed,
                    value: Some(o.value),
                    std_error: o.std_error,
                    seconds,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("{} run {r} (seed {seed}) failed: {e}", config.name);
                RunRow {
                    run: r,
                    seed,
                    value: None,
                    std_error: None,
                    seconds,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.lock().expect("row lock")[r] = Some(row);
    };
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&work);
            }
        });
    }
    let rows: Vec<RunRow> = rows.into_inner().expect("row lock").into_iter().flatten().collect();
    let summary = Summary::from_rows(&rows, reference.as_ref().map(|r| r.value));
    let report = RunReport {
        name: config.name.clone(),
        method: config.method.label().to_string(),
        reference,
        rows,
        summary,
        wall_seconds: clock.elapsed().as_secs_f64(),
        config_hash: config.hash()?,
        config: config.clone(),
    };
    if let Some(d) = &dir {
        report.write_dir(d)?;
    }
    Ok(report)
}
