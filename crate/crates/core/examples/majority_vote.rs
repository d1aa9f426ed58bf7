//! Evaluation by majority vote keeps working when one ensemble member is
//! badly wrong; acting on that member alone, or on the ensemble mean, does not.
//!
//! cargo run --release --example majority_vote

use emax::deep::{member_prefix, DeepAlgorithm, DeepConfig, DeepLearner, EvalPolicy};
use emax::ensemble::{ensemble_stats, vote_counts};
use emax::env::{ClimbingGame, EnvConfig, Environment};
use emax::harness::evaluate_learner;

fn main() {
    let config = DeepConfig {
        hidden: vec![8],
        ensemble_size: 5,
        ..DeepConfig::default()
    };
    let mut learner = DeepLearner::new(DeepAlgorithm::IdqnEmax, config, &ClimbingGame::new().spec(), 0).unwrap();
    // Values over actions (A, B, C); the last member is confidently wrong.
    let members = [
        [11.0, -5.0, 0.0],
        [9.0, 0.0, 2.0],
        [10.0, 1.0, 4.0],
        [8.0, -2.0, 1.0],
        [-20.0, 0.0, 90.0],
    ];
    for (k, values) in members.iter().enumerate() {
        let p = member_prefix(k);
        learner.params.get_mut(&format!("{p}.w1")).unwrap().data_mut().fill(0.0);
        learner.params.get_mut(&format!("{p}.b1")).unwrap().data_mut().copy_from_slice(values);
    }
    let (mean, _) = ensemble_stats(&members);
    println!("votes per action {:?}", vote_counts(&members));
    println!("ensemble mean    {mean:?}");
    for (label, policy) in [("majority vote", EvalPolicy::Vote), ("member 0", EvalPolicy::Member(0)), ("member 4", EvalPolicy::Member(4))] {
        let ret = evaluate_learner(&learner, &EnvConfig::Climbing, 10, policy, 0.0, 0, "demo").unwrap();
        println!("{label:<14} return {ret}");
    }
}
