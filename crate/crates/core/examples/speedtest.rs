//! Wall-clock cost of ensembles of growing size against the single-network
//! baseline, on a short window of training.
//!
//! cargo run --release --example speedtest [steps]

use std::path::Path;

use emax::harness::{speed_benchmark, ExperimentConfig};

fn main() {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/lbf-5x5-2p-1f-coop-pen-idqn-emax.toml");
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.speedtest.steps = steps;
    config.speedtest.repeats = 1;
    config.deep.warmup = 100;
    let table = speed_benchmark(&config).unwrap();
    print!("{table}");
}
