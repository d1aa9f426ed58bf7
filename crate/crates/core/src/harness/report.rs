use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sink::read_metrics;
use crate::metrics::{self, MetricsError};
use crate::rng::stream;

/// Everything the report needs from one run's metrics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    pub algorithm: String,
    pub seed: u64,
    /// `(step, mean return)` per evaluation.
    pub evals: Vec<(u64, f64)>,
    pub grad_norms: Vec<f64>,
    pub failed: bool,
}

impl RunSummary {
    pub fn final_return(&self) -> Option<f64> {
        self.evals.last().map(|&(_, r)| r)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no metrics files under {0}")]
    Empty(PathBuf),
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            csv_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads every metrics CSV under `dir`, recursively, one summary per run id.
pub fn load_runs(dir: &Path) -> Result<Vec<RunSummary>, ReportError> {
    let mut files = Vec::new();
    csv_files(dir, &mut files)?;
    let mut runs: BTreeMap<String, RunSummary> = BTreeMap::new();
    for path in files {
        let rows = read_metrics(&path).map_err(|source| ReportError::Csv { path: path.clone(), source })?;
        for r in rows {
            let run = runs.entry(r.run_id.clone()).or_insert_with(|| RunSummary {
                run_id: r.run_id.clone(),
                task: r.task.clone(),
                algorithm: r.algorithm.clone(),
                seed: r.seed,
                evals: Vec::new(),
                grad_norms: Vec::new(),
                failed: false,
            });
            match r.metric.as_str() {
                "eval_return" => run.evals.push((r.step, r.value)),
                "grad_norm" => run.grad_norms.push(r.value),
                "failure" => run.failed = true,
                _ => {}
            }
        }
    }
    if runs.is_empty() {
        return Err(ReportError::Empty(dir.to_path_buf()));
    }
    Ok(runs.into_values().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnRow {
    pub task: String,
    pub algorithm: String,
    pub runs: usize,
    pub iqm: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub algorithm: String,
    pub taus: Vec<f64>,
    pub fractions: Vec<f64>,
    /// IQM of normalised final returns across all tasks and runs.
    pub normalised_iqm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvarRow {
    pub algorithm: String,
    pub tasks: usize,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub returns: Vec<ReturnRow>,
    pub profiles: Vec<ProfileRow>,
    pub cvar: Vec<CvarRow>,
}

/// Final-return IQMs with bootstrap intervals per task and algorithm,
/// performance profiles on per-task normalised returns, and mean CVaR of
/// detrended gradient norms across tasks.
pub fn build_report(runs: &[RunSummary], n_resamples: usize) -> Result<Report, ReportError> {
    let mut finals: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in runs {
        if let Some(v) = r.final_return() {
            finals.entry((r.task.clone(), r.algorithm.clone())).or_default().push(v);
        }
    }
    let mut rng = stream(0, "report");
    let mut returns = Vec::new();
    for ((task, algorithm), v) in &finals {
        returns.push(ReturnRow {
            task: task.clone(),
            algorithm: algorithm.clone(),
            runs: v.len(),
            iqm: metrics::iqm(v)?,
            ci: metrics::bootstrap_ci(v, n_resamples, 0.95, &mut rng)?,
        });
    }

    let mut bounds: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for ((task, _), v) in &finals {
        let b = bounds.entry(task).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        for &x in v {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
        }
    }
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((task, algorithm), v) in &finals {
        let (lo, hi) = bounds[task.as_str()];
        scores.entry(algorithm).or_default().extend(metrics::normalize_returns(v, lo, hi));
    }
    let taus = metrics::tau_grid(10);
    let mut profiles = Vec::new();
    for (algorithm, s) in &scores {
        profiles.push(ProfileRow {
            algorithm: algorithm.to_string(),
            fractions: metrics::performance_profile(s, &taus),
            taus: taus.clone(),
            normalised_iqm: metrics::iqm(s)?,
        });
    }

    let mut per_task: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in runs {
        if r.grad_norms.len() >= 2 {
            let c = metrics::cvar_detrended(&r.grad_norms, 0.95)?;
            per_task.entry((r.algorithm.clone(), r.task.clone())).or_default().push(c);
        }
    }
    let mut by_algo: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((algorithm, _), v) in per_task {
        by_algo.entry(algorithm).or_default().push(metrics::mean(&v)?);
    }
    let mut cvar = Vec::new();
    for (algorithm, v) in by_algo {
        let (mean, standard_error) = metrics::mean_and_standard_error(&v)?;
        cvar.push(CvarRow {
            algorithm,
            tasks: v.len(),
            mean,
            standard_error,
        });
    }
    Ok(Report { returns, profiles, cvar })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "final evaluation return (IQM, 95% bootstrap CI)")?;
        writeln!(f, "{:<28} {:<22} {:>4} {:>10} {:>22}", "task", "algorithm", "runs", "iqm", "ci")?;
        for r in &self.returns {
            writeln!(
                f,
                "{:<28} {:<22} {:>4} {:>10.4} {:>22}",
                r.task,
                r.algorithm,
                r.runs,
                r.iqm,
                format!("[{:.4}, {:.4}]", r.ci.0, r.ci.1)
            )?;
        }
        if let Some(p) = self.profiles.first() {
            writeln!(f, "\nperformance profile: fraction of normalised scores > tau")?;
            write!(f, "{:<22} {:>8}", "algorithm", "iqm")?;
            for t in &p.taus {
                write!(f, " {t:>5.1}")?;
            }
            writeln!(f)?;
        }
        for p in &self.profiles {
            write!(f, "{:<22} {:>8.4}", p.algorithm, p.normalised_iqm)?;
            for v in &p.fractions {
                write!(f, " {v:>5.2}")?;
            }
            writeln!(f)?;
        }
        if !self.cvar.is_empty() {
            writeln!(f, "\nCVaR(95%) of detrended gradient norms, mean over tasks")?;
            writeln!(f, "{:<22} {:>5} {:>12} {:>12}", "algorithm", "tasks", "mean", "std err")?;
            for c in &self.cvar {
                writeln!(f, "{:<22} {:>5} {:>12.5} {:>12.5}", c.algorithm, c.tasks, c.mean, c.standard_error)?;
            }
        }
        Ok(())
    }
}
