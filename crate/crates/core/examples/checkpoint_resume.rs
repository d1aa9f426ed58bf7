//! Stops a training run halfway, saves it, reloads it and finishes; the
//! logged metrics match a run that was never interrupted.
//!
//! cargo run --release --example checkpoint_resume

use emax::deep::DeepAlgorithm;
use emax::env::{EnvConfig, LbfConfig};
use emax::harness::{Algorithm, ExperimentConfig, Metric, TrainingRun};

fn main() {
    let mut config = ExperimentConfig::new(Algorithm::Deep(DeepAlgorithm::VdnEmax), EnvConfig::Lbf(LbfConfig::default()));
    config.total_steps = Some(2000);
    config.eval_interval = Some(500);
    config.deep.hidden = vec![32];
    config.deep.batch_size = 16;
    config.deep.warmup = 200;

    let run_to_end = |run: &mut TrainingRun, out: &mut Vec<Metric>| {
        while !run.is_finished() {
            run.step(out).unwrap();
        }
    };
    let mut reference = Vec::new();
    run_to_end(&mut TrainingRun::new(&config, 0).unwrap(), &mut reference);

    let mut run = TrainingRun::new(&config, 0).unwrap();
    let mut resumed = Vec::new();
    while run.step_count() < 1000 {
        run.step(&mut resumed).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    run.save(&path).unwrap();
    println!("saved at step {} ({} bytes)", run.step_count(), std::fs::metadata(&path).unwrap().len());
    let mut run = TrainingRun::load(&path).unwrap();
    run_to_end(&mut run, &mut resumed);

    for m in resumed.iter().filter(|m| m.name == "eval_return") {
        println!("step {:>5}  eval return {:.3}", m.step, m.value);
    }
    println!("{} metrics, identical to the uninterrupted run: {}", resumed.len(), resumed == reference);
}
