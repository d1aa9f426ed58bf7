use std::fmt;
use std::time::Instant;

use serde::Serialize;

use super::config::{Algorithm, ExperimentConfig};
use super::run::{DeepRun, Metric, RunError};

#[derive(Debug, Clone, Serialize)]
pub struct SpeedRow {
    pub label: String,
    pub algorithm: String,
    pub ensemble_size: usize,
    /// Wall-clock seconds of each repeat.
    pub times: Vec<f64>,
    pub mean_seconds: f64,
    /// `mean / baseline mean - 1`.
    pub relative_increase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedTable {
    pub task: String,
    pub steps: u64,
    pub rows: Vec<SpeedRow>,
}

impl SpeedTable {
    pub fn ratio(&self, ensemble_size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.ensemble_size == ensemble_size && r.label != "baseline")
            .map(|r| r.relative_increase + 1.0)
    }
}

impl fmt::Display for SpeedTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} steps on {}", self.steps, self.task)?;
        writeln!(f, "{:<10} {:<12} {:>4} {:>12} {:>10}", "variant", "algorithm", "K", "seconds", "increase")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:<12} {:>4} {:>12.3} {:>9.1}%",
                r.label,
                r.algorithm,
                r.ensemble_size,
                r.mean_seconds,
                100.0 * r.relative_increase
            )?;
        }
        Ok(())
    }
}

/// Times `steps` training steps of one configuration, evaluation excluded.
pub fn time_training(config: &ExperimentConfig, seed: u64, steps: u64) -> Result<f64, RunError> {
    let mut cfg = config.clone();
    // One step past the window, so the closing evaluation is never reached.
    cfg.total_steps = Some(steps + 1);
    cfg.eval_interval = Some(u64::MAX);
    cfg.stop_at_return = None;
    let mut run = DeepRun::new(&cfg, seed)?;
    let mut sink: Vec<Metric> = Vec::new();
    let start = Instant::now();
    while run.step_count() < steps {
        run.step(&mut sink)?;
        sink.clear();
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Wall-clock cost of training the baseline and its ensemble variant at
/// each configured ensemble size. Runs strictly serially.
pub fn speed_benchmark(config: &ExperimentConfig) -> Result<SpeedTable, RunError> {
    let Algorithm::Deep(algorithm) = config.algorithm else {
        return Err(RunError::Invalid("the speed benchmark needs a deep algorithm".into()));
    };
    let s = &config.speedtest;
    let mut variants = vec![("baseline".to_string(), algorithm.baseline(), 1)];
    for &k in &s.ensemble_sizes {
        variants.push((format!("K={k}"), algorithm.with_ensemble(), k));
    }
    let seed = config.seeds[0];
    let mut rows: Vec<SpeedRow> = Vec::new();
    for (label, algo, k) in variants {
        let mut cfg = config.clone();
        cfg.algorithm = Algorithm::Deep(algo);
        cfg.deep.ensemble_size = if algo.is_emax() { k } else { config.deep.ensemble_size };
        let times = (0..s.repeats)
            .map(|rep| time_training(&cfg, seed + rep as u64, s.steps))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_seconds = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(SpeedRow {
            label,
            algorithm: algo.name().to_string(),
            ensemble_size: k,
            times,
            mean_seconds,
            relative_increase: 0.0,
        });
    }
    let base = rows[0].mean_seconds;
    for r in &mut rows {
        r.relative_increase = r.mean_seconds / base - 1.0;
    }
    Ok(SpeedTable {
        task: config.task(),
        steps: s.steps,
        rows,
    })
}
