//! Ensemble statistics and the two decision rules on a single row of values:
//! optimistic UCB for exploration and majority vote for evaluation.
//!
//! cargo run --release --example ensemble_ucb

use emax::ensemble::{ensemble_stats, majority_vote_action, ucb_action, ucb_scores, vote_counts};
use emax::rng::stream;

fn main() {
    // Action 1 looks slightly worse on average but the members disagree on it.
    let members = vec![
        vec![1.0, 0.2, 0.5],
        vec![1.1, 2.5, 0.4],
        vec![0.9, -0.8, 0.6],
        vec![1.0, 1.9, 0.5],
    ];
    let (mean, std) = ensemble_stats(&members);
    println!("mean {mean:.3?}\nstd  {std:.3?}");
    let mut rng = stream(0, "demo");
    for beta in [0.0, 0.3, 1.0] {
        let scores = ucb_scores(&mean, &std, beta);
        println!("beta {beta:.1}: scores {scores:.3?} -> action {}", ucb_action(&members, beta, &mut rng));
    }
    println!("votes {:?} -> action {}", vote_counts(&members), majority_vote_action(&members, &mut rng));
}
