//! Trains the four tabular learners on the climbing game over 100 seeds and
//! reports how often each ends on the optimal joint action (A, A).
//!
//! cargo run --release --example climbing_game

use emax::rng::stream;
use emax::tabular::{ClimbingRun, TabularAlgorithm, TabularConfig};

fn main() {
    let seeds = 100;
    let steps = 1000;
    for algo in TabularAlgorithm::ALL {
        let config = TabularConfig::defaults(algo);
        let mut optimal = 0;
        let mut finals = [0usize; 3];
        for seed in 0..seeds {
            let mut run = ClimbingRun::new(algo, config, seed).expect("default config is valid");
            for _ in 0..steps {
                run.train_step().expect("training step");
            }
            let (joint, reward) = run.greedy_joint(&mut stream(seed, "eval"));
            if reward == 11.0 {
                optimal += 1;
            }
            finals[joint[0]] += 1;
        }
        println!(
            "{:<22} optimal {:>3}/{seeds}   agent-0 final actions A/B/C = {:?}",
            algo.name(),
            optimal,
            finals
        );
    }
}
