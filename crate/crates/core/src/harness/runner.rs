use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{Metric, RunError, TrainingRun};
use super::sink::MetricsWriter;

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics_file: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub steps: u64,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Files produced by [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub timing_file: PathBuf,
    pub seeds: Vec<SeedOutcome>,
}

impl RunArtifacts {
    pub fn all_failed(&self) -> bool {
        !self.seeds.is_empty() && self.seeds.iter().all(|s| s.error.is_some())
    }
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_s{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_s{seed}.ckpt"))
}

/// Steps `run` to completion, streaming its metrics into `writer`.
///
/// On failure returns the step reached alongside the error.
pub fn drive(run: &mut TrainingRun, writer: &mut MetricsWriter) -> Result<(), (u64, RunError)> {
    let mut buf: Vec<Metric> = Vec::new();
    while !run.is_finished() {
        run.step(&mut buf).map_err(|e| (run.step_count(), e))?;
        for m in buf.drain(..) {
            writer.write(m.step, &m.name, m.value).map_err(|e| (m.step, e.into()))?;
        }
    }
    writer.flush().map_err(|e| (run.step_count(), e.into()))
}

/// Trains every seed of `config` in turn. A failing seed gets a `failure`
/// row in its metrics file and the remaining seeds still run.
pub fn run_experiment(config: &ExperimentConfig) -> io::Result<RunArtifacts> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let metrics_file = metrics_path(&dir, seed);
        let mut writer = MetricsWriter::create(&metrics_file, config, seed)?;
        let start = Instant::now();
        let mut steps = 0;
        let mut checkpoint = None;
        let outcome = TrainingRun::new(config, seed).map_err(|e| (0, e)).and_then(|mut run| {
            let r = drive(&mut run, &mut writer);
            steps = run.step_count();
            r?;
            if config.checkpoint {
                let path = checkpoint_path(&dir, seed);
                run.save(&path).map_err(|e| (steps, e))?;
                checkpoint = Some(path);
            }
            Ok(())
        });
        let error = match outcome {
            Ok(()) => None,
            Err((step, e)) => {
                writer.write(step, "failure", 1.0)?;
                writer.flush()?;
                Some(e.to_string())
            }
        };
        seeds.push(SeedOutcome {
            seed,
            metrics_file,
            checkpoint,
            steps,
            seconds: start.elapsed().as_secs_f64(),
            error,
        });
    }
    let artifacts = RunArtifacts {
        timing_file: dir.join("timing.json"),
        output_dir: dir,
        seeds,
    };
    std::fs::write(
        &artifacts.timing_file,
        serde_json::to_string_pretty(&artifacts).expect("artifacts serialise"),
    )?;
    Ok(artifacts)
}
