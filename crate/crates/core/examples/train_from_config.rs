//! Trains one seed of a TOML experiment and prints its evaluation curve.
//!
//! cargo run --release --example train_from_config -- [config] [steps]

use std::path::PathBuf;

use emax::harness::{ExperimentConfig, TrainingRun};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/lbf-5x5-2p-1f-coop-pen-idqn-emax.toml"));
    let mut config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        config.total_steps = Some(steps);
    }
    let seed = config.seeds[0];
    println!("{} for {} steps, seed {seed}", config.run_id(seed), config.total_steps());
    let mut run = TrainingRun::new(&config, seed).unwrap();
    let mut out = Vec::new();
    let mut episodes = 0;
    while !run.is_finished() {
        run.step(&mut out).unwrap();
        for m in out.drain(..) {
            match m.name.as_str() {
                "train_return" => episodes += 1,
                "eval_return" => println!("step {:>7}  episodes {episodes:>5}  eval return {:.3}", m.step, m.value),
                _ => {}
            }
        }
    }
}
