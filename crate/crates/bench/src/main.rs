use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use reservoir_bench::presets::dp_setup;
use reservoir_bench::{catalog, dp_reference, preset, run_experiment, ExperimentConfig, RunOptions, Scale};

#[derive(Parser)]
#[command(name = "reservoir-bench", version, about = "Storage valuation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every preset with its reference value and source.
    ListPresets {
        #[arg(long)]
        json: bool,
    },
    /// Print the resolved experiment config as TOML.
    ShowConfig(Select),
    /// Write simulated spot paths of the experiment's price model.
    SimulatePrices {
        #[command(flatten)]
        select: Select,
        #[arg(long, default_value_t = 100)]
        paths: usize,
    },
    /// Regression DP value of the experiment's storage problem.
    DpReference(Select),
    /// Run a GV experiment.
    TrainGv(Select),
    /// Run a GSDP experiment.
    TrainGsdp(Select),
    /// Run a GMCSDP experiment.
    TrainGmcsdp(Select),
    /// Run any experiment.
    Run(Select),
}

#[derive(Args)]
struct Select {
    /// Preset name, see `list-presets`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// paper or desk; applies to presets.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// First seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory (default: $RESERVOIR_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run everything on one thread.
    #[arg(long)]
    deterministic: bool,
}

impl Select {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(name), None) => preset(name, self.scale.parse::<Scale>()?)?,
            (None, Some(path)) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            _ => bail!("give exactly one of --preset or --config"),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("RESERVOIR_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn threads(&self) -> usize {
        if self.deterministic {
            return 1;
        }
        std::env::var("RESERVOIR_THREADS")
            .ok()
            .and_then(|t| t.parse().ok())
            .unwrap_or(1)
    }
}

fn run(select: &Select, expected: Option<&str>) -> Result<()> {
    let cfg = select.resolve()?;
    if let Some(kind) = expected {
        if cfg.method.label() != kind {
            bail!("{} is a {} experiment, not {kind}", cfg.name, cfg.method.label());
        }
    }
    let opts = RunOptions {
        out: Some(select.out()),
        threads: select.threads(),
    };
    let report = run_experiment(&cfg, &opts)?;
    print!("{}", report.table());
    println!("report written to {}", select.out().join(&cfg.name).display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListPresets { json } => {
            let list = catalog();
            if json {
                println!("{}", serde_json::to_string_pretty(&list)?);
            } else {
                for p in list {
                    let r = p.reference.map_or("-".to_string(), |v| format!("{v}"));
                    println!("{:<26} {:<7} ref {:>6}  {}  [{}]", p.name, p.method, r, p.description, p.source);
                }
            }
        }
        Command::ShowConfig(select) => print!("{}", select.resolve()?.to_toml()?),
        Command::SimulatePrices { select, paths } => {
            let cfg = select.resolve()?;
            let model = cfg.method.model();
            let batch = model.simulate(paths, 0, cfg.method.horizon(), cfg.seed, 0);
            let dir = select.out().join(&cfg.name);
            fs::create_dir_all(&dir)?;
            let path = dir.join("prices.csv");
            let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
            batch.write_csv(&mut f)?;
            f.flush()?;
            println!("{paths} paths of {} dates written to {}", cfg.method.horizon(), path.display());
        }
        Command::DpReference(select) => {
            let cfg = select.resolve()?;
            let mut setup = dp_setup(&cfg);
            if let Some(s) = select.seed {
                setup.dp.seed = s;
            }
            let (sol, v, se) = dp_reference(&setup)?;
            let dir = select.out().join(&cfg.name);
            fs::create_dir_all(&dir)?;
            sol.table.write_csv(fs::File::create(dir.join("bellman.csv"))?)?;
            fs::write(dir.join("dp.toml"), toml::to_string(&setup)?)?;
            println!("{}: backward value {:.2}, simulated value {v:.2} +- {se:.2}", cfg.name, sol.value);
        }
        Command::TrainGv(s) => run(&s, Some("gv"))?,
        Command::TrainGsdp(s) => run(&s, Some("gsdp"))?,
        Command::TrainGmcsdp(s) => run(&s, Some("gmcsdp"))?,
        Command::Run(s) => run(&s, None)?,
    }
    Ok(())
}
