//! Statistics and decision rules over an ensemble of per-action value rows.
//!
//! Shared by the tabular and the deep agents: both reduce to K rows of
//! action values for a single decision.

use rand::Rng;

use crate::rng::{argmax_set, argmax_tie_break};

/// Per-action mean and population standard deviation (divisor K) across
/// `members`, accumulated with Welford's update so that identical members
/// give a standard deviation of exactly zero.
pub fn ensemble_stats<R: AsRef<[f64]>>(members: &[R]) -> (Vec<f64>, Vec<f64>) {
    assert!(!members.is_empty(), "ensemble must have at least one member");
    let n = members[0].as_ref().len();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (k, row) in members.iter().enumerate() {
        let row = row.as_ref();
        assert_eq!(row.len(), n, "ensemble members disagree on action count");
        let count = (k + 1) as f64;
        for a in 0..n {
            let delta = row[a] - mean[a];
            mean[a] += delta / count;
            m2[a] += delta * (row[a] - mean[a]);
        }
    }
    let k = members.len() as f64;
    let std = m2.into_iter().map(|v| (v / k).max(0.0).sqrt()).collect();
    (mean, std)
}

/// `mean + beta * std` per action.
pub fn ucb_scores(mean: &[f64], std: &[f64], beta: f64) -> Vec<f64> {
    mean.iter().zip(std).map(|(m, s)| m + beta * s).collect()
}

/// Optimistic action: argmax of `mean + beta * std`, ties broken uniformly.
pub fn ucb_action<R: AsRef<[f64]>, G: Rng + ?Sized>(members: &[R], beta: f64, rng: &mut G) -> usize {
    let (mean, std) = ensemble_stats(members);
    argmax_tie_break(&ucb_scores(&mean, &std, beta), rng)
}

/// Votes per action: every member votes for each of its maximisers.
pub fn vote_counts<R: AsRef<[f64]>>(members: &[R]) -> Vec<usize> {
    let n = members.first().map_or(0, |m| m.as_ref().len());
    let mut votes = vec![0; n];
    for row in members {
        for a in argmax_set(row.as_ref()) {
            votes[a] += 1;
        }
    }
    votes
}

/// Most-voted action, ties broken uniformly.
pub fn majority_vote_action<R: AsRef<[f64]>, G: Rng + ?Sized>(members: &[R], rng: &mut G) -> usize {
    let votes: Vec<f64> = vote_counts(members).into_iter().map(|v| v as f64).collect();
    argmax_tie_break(&votes, rng)
}
