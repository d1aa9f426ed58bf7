//! A hand-written team on boulder push: pushing cells are reassigned every
//! step to minimise total distance, each agent walks there breadth-first
//! around the boulder and its teammates, then all push together.
//!
//! cargo run --release --example bpush_scripted

use std::collections::VecDeque;

use emax::env::bpush::{BoulderPush, BpushConfig, DOWN, LEFT, RIGHT, UP};
use emax::env::Environment;
use emax::rng::stream;

fn first_move(blocked: &[(i64, i64)], width: i64, height: i64, from: (i64, i64), to: (i64, i64)) -> Option<usize> {
    if from == to {
        return None;
    }
    let moves = [(UP, (0, -1)), (DOWN, (0, 1)), (LEFT, (-1, 0)), (RIGHT, (1, 0))];
    let mut seen = vec![from];
    let mut queue = VecDeque::new();
    for (a, (dx, dy)) in moves {
        queue.push_back(((from.0 + dx, from.1 + dy), a));
    }
    while let Some((cell, first)) = queue.pop_front() {
        let inside = cell.0 >= 0 && cell.1 >= 0 && cell.0 < width && cell.1 < height;
        if !inside || blocked.contains(&cell) || seen.contains(&cell) {
            continue;
        }
        if cell == to {
            return Some(first);
        }
        seen.push(cell);
        for (_, (dx, dy)) in moves {
            queue.push_back(((cell.0 + dx, cell.1 + dy), first));
        }
    }
    None
}

fn distance(a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Cheapest assignment of agents to goals, by brute force over permutations.
fn assign(agents: &[(i64, i64)], goals: &[(i64, i64)]) -> Vec<(i64, i64)> {
    fn permute(rest: &mut Vec<(i64, i64)>, k: usize, best: &mut (i64, Vec<(i64, i64)>), agents: &[(i64, i64)]) {
        if k == rest.len() {
            let cost = agents.iter().zip(rest.iter()).map(|(&a, &g)| distance(a, g)).sum();
            if cost < best.0 {
                *best = (cost, rest.clone());
            }
            return;
        }
        for i in k..rest.len() {
            rest.swap(k, i);
            permute(rest, k + 1, best, agents);
            rest.swap(k, i);
        }
    }
    let mut best = (i64::MAX, goals.to_vec());
    permute(&mut goals.to_vec(), 0, &mut best, agents);
    best.1
}

fn main() {
    let config = BpushConfig::default();
    let (w, h) = (config.width as i64, config.height as i64);
    let mut env = BoulderPush::new(config, stream(0, "env")).unwrap();
    let episodes = 20;
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut out = env.reset().unwrap();
        let mut ret = out.reward;
        let mut steps = 0;
        while !out.done {
            let agents = env.agent_positions().to_vec();
            let goals = assign(&agents, &env.pushing_cells());
            let placed = agents.iter().zip(&goals).all(|(a, g)| a == g);
            let push = env.direction().action();
            let boulder = env.boulder_cells();
            let actions: Vec<usize> = agents
                .iter()
                .zip(&goals)
                .map(|(&a, &g)| {
                    if placed {
                        return push;
                    }
                    let mut blocked = boulder.clone();
                    blocked.extend(agents.iter().filter(|&&o| o != a));
                    first_move(&blocked, w, h, a, g)
                        .or_else(|| first_move(&boulder, w, h, a, g))
                        .unwrap_or(push)
                })
                .collect();
            out = env.step(&actions).unwrap();
            ret += out.reward;
            steps += 1;
        }
        total += ret;
        println!("episode {ep:>2}: return {ret:6.3} in {steps:>2} steps{}", if out.truncated { " (timed out)" } else { "" });
    }
    println!("mean return {:.3}", total / episodes as f64);
}
