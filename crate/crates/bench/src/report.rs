//! Per-run rows, aggregates and their CSV, JSON and text renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::Result;

/// One seeded run. `value` is the per-storage value; failed runs carry the
/// error text and no value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedReference {
    pub value: f64,
    pub std_error: Option<f64>,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    pub failed: usize,
    pub max: Option<f64>,
    pub min: Option<f64>,
    pub average: Option<f64>,
    /// Smallest `|value - reference|` over completed runs.
    pub min_diff: Option<f64>,
    /// Value of the run achieving `min_diff`.
    pub best: Option<f64>,
}

impl Summary {
    pub fn from_rows(rows: &[RunRow], reference: Option<f64>) -> Self {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
        let n = vals.len();
        let max = vals.iter().copied().reduce(f64::max);
        let min = vals.iter().copied().reduce(f64::min);
        let average = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
        let best = reference.and_then(|r| vals.iter().copied().min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs())));
        Summary {
            completed: n,
            failed: rows.len() - n,
            max,
            min,
            average,
            min_diff: best.zip(reference).map(|(b, r)| (b - r).abs()),
            best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub method: String,
    pub reference: Option<ResolvedReference>,
    pub rows: Vec<RunRow>,
    pub summary: Summary,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl RunReport {
    /// Recomputes the aggregates from the rows.
    pub fn recomputed_summary(&self) -> Summary {
        Summary::from_rows(&self.rows, self.reference.as_ref().map(|r| r.value))
    }

    /// Columns `run,seed,value,std_error,seconds,status,error`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "seed", "value", "std_error", "seconds", "status", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                r.std_error.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.3}", r.seconds),
                if r.error.is_none() { "ok" } else { "failed" }.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Layout of the published tables: max, min, average, min diff.
    pub fn table(&self) -> String {
        let s = &self.summary;
        let mut t = String::new();
        let _ = writeln!(t, "{} ({}, config {})", self.name, self.method, self.config_hash);
        if let Some(r) = &self.reference {
            let se = r.std_error.map_or(String::new(), |e| format!(" +- {e:.2}"));
            let _ = writeln!(t, "reference {:.2}{se}  [{}]", r.value, r.source);
        }
        let _ = writeln!(t, "{:>6} {:>10} {:>10} {:>10}", "run", "seed", "value", "s.e.");
        for r in &self.rows {
            match &r.error {
                None => {
                    let _ = writeln!(t, "{:>6} {:>10} {:>10} {:>10}", r.run, r.seed, opt(r.value), opt(r.std_error));
                }
                Some(e) => {
                    let _ = writeln!(t, "{:>6} {:>10} failed: {e}", r.run, r.seed);
                }
            }
        }
        let _ = writeln!(t, "| Maximal | Minimal | Average | Min diff with reference |");
        let _ = writeln!(t, "| {} | {} | {} | {} |", opt(s.max), opt(s.min), opt(s.average), opt(s.min_diff));
        let _ = writeln!(t, "completed {} of {} runs in {:.1}s", s.completed, self.rows.len(), self.wall_seconds);
        t
    }

    /// Writes `runs.csv`, `report.json`, `config.toml` and `summary.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join("runs.csv"))?)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        fs::write(dir.join("summary.txt"), self.table())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: usize, value: Option<f64>) -> RunRow {
        RunRow {
            run,
            seed: run as u64,
            value,
            std_error: value.map(|_| 1.0),
            seconds: 0.5,
            error: value.is_none().then(|| "diverged".to_string()),
        }
    }

    #[test]
    fn aggregates_skip_failed_runs() {
        let rows = vec![row(0, Some(11.0)), row(1, None), row(2, Some(14.0)), row(3, Some(12.5))];
        let s = Summary::from_rows(&rows, Some(13.0));
        assert_eq!((s.completed, s.failed), (3, 1));
        assert_eq!(s.max, Some(14.0));
        assert_eq!(s.min, Some(11.0));
        assert_eq!(s.average, Some(12.5));
        assert_eq!(s.best, Some(12.5));
        assert_eq!(s.min_diff, Some(0.5));
    }

    #[test]
    fn no_completed_runs_gives_empty_aggregates() {
        let s = Summary::from_rows(&[row(0, None)], Some(1.0));
        assert_eq!(s.completed, 0);
        assert!(s.max.is_none() && s.average.is_none() && s.min_diff.is_none());
    }
}
