//! Transition replay with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One joint transition. `last_actions` are the actions that preceded
/// `observations` (`None` at the start of an episode).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observations: Vec<Vec<f64>>,
    pub last_actions: Vec<Option<usize>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_observations: Vec<Vec<f64>>,
    /// No bootstrapping from the next state.
    pub terminal: bool,
}

/// Ring buffer of transitions stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub(crate) capacity: usize,
    pub(crate) n_agents: usize,
    pub(crate) obs_dim: usize,
    pub(crate) len: usize,
    pub(crate) head: usize,
    pub(crate) obs: Vec<f64>,
    pub(crate) next_obs: Vec<f64>,
    /// `usize::MAX` encodes "no previous action".
    pub(crate) last_actions: Vec<usize>,
    pub(crate) actions: Vec<usize>,
    pub(crate) rewards: Vec<f64>,
    pub(crate) terminal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("replay holds {len} transitions, need at least {needed}")]
pub struct ReplayTooSmall {
    pub len: usize,
    pub needed: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_agents: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            n_agents,
            obs_dim,
            len: 0,
            head: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            last_actions: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, t: &Transition) {
        let (n, d) = (self.n_agents, self.obs_dim);
        assert_eq!(t.observations.len(), n);
        assert_eq!(t.actions.len(), n);
        let obs: Vec<f64> = t.observations.concat();
        let next: Vec<f64> = t.next_observations.concat();
        assert_eq!(obs.len(), n * d);
        assert_eq!(next.len(), n * d);
        let last: Vec<usize> = t.last_actions.iter().map(|a| a.unwrap_or(usize::MAX)).collect();
        if self.len < self.capacity {
            self.obs.extend(obs);
            self.next_obs.extend(next);
            self.last_actions.extend(last);
            self.actions.extend(&t.actions);
            self.rewards.push(t.reward);
            self.terminal.push(t.terminal);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * n * d..(i + 1) * n * d].copy_from_slice(&obs);
            self.next_obs[i * n * d..(i + 1) * n * d].copy_from_slice(&next);
            self.last_actions[i * n..(i + 1) * n].copy_from_slice(&last);
            self.actions[i * n..(i + 1) * n].copy_from_slice(&t.actions);
            self.rewards[i] = t.reward;
            self.terminal[i] = t.terminal;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Transition {
        assert!(i < self.len);
        let (n, d) = (self.n_agents, self.obs_dim);
        let split = |v: &[f64]| v.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Transition {
            observations: split(&self.obs[i * n * d..(i + 1) * n * d]),
            last_actions: self.last_actions[i * n..(i + 1) * n]
                .iter()
                .map(|&a| (a != usize::MAX).then_some(a))
                .collect(),
            actions: self.actions[i * n..(i + 1) * n].to_vec(),
            reward: self.rewards[i],
            next_observations: split(&self.next_obs[i * n * d..(i + 1) * n * d]),
            terminal: self.terminal[i],
        }
    }

    /// `batch_size` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, ReplayTooSmall> {
        if self.len < batch_size || self.len == 0 {
            return Err(ReplayTooSmall {
                len: self.len,
                needed: batch_size.max(1),
            });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len)).collect())
    }

    /// `k` independent batches, one per ensemble member.
    pub fn sample_bootstrapped<R: Rng + ?Sized>(&self, k: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, ReplayTooSmall> {
        (0..k).map(|_| self.sample_indices(batch_size, rng)).collect()
    }
}
