//! Cooperative multi-agent environments behind one reset/step contract.
//!
//! Every environment shares a single scalar reward among all agents and
//! reports the global state as the concatenation of agent observations.

pub mod bpush;
pub mod climbing;
pub mod lbf;

pub use bpush::{BoulderPush, BpushConfig, Direction};
pub use climbing::{ClimbingGame, CLIMBING_PAYOFF};
pub use lbf::{Foraging, LbfConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent}: action {action} out of range (0..{n_actions})")]
    InvalidAction { agent: usize, action: usize, n_actions: usize },
    #[error("expected {expected} actions, got {actual}")]
    ActionCount { expected: usize, actual: usize },
    #[error("step called after the episode ended")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: Vec<usize>,
    pub obs_len: Vec<usize>,
    pub state_len: usize,
    pub max_steps: usize,
}

impl EnvSpec {
    /// Action count shared by all agents. The environments here are homogeneous.
    pub fn actions(&self) -> usize {
        self.n_actions[0]
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_len[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    /// Episode over, for any reason.
    pub done: bool,
    /// Episode over only because the step limit was hit.
    pub truncated: bool,
    pub state: Vec<f64>,
}

impl StepOutcome {
    pub(crate) fn new(observations: Vec<Vec<f64>>, reward: f64, done: bool, truncated: bool) -> Self {
        let state = observations.concat();
        Self {
            observations,
            reward,
            done,
            truncated,
            state,
        }
    }

    /// True when the transition ends the episode in a real terminal state,
    /// so that value targets should not bootstrap.
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self) -> Result<StepOutcome, EnvError>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError>;
}

pub(crate) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::ActionCount {
            expected: n_agents,
            actual: actions.len(),
        });
    }
    for (agent, &action) in actions.iter().enumerate() {
        if action >= n_actions {
            return Err(EnvError::InvalidAction { agent, action, n_actions });
        }
    }
    Ok(())
}

/// Declarative environment selection, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Climbing,
    Lbf(LbfConfig),
    Bpush(BpushConfig),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::Climbing => Ok(()),
            EnvConfig::Lbf(c) => c.validate(),
            EnvConfig::Bpush(c) => c.validate(),
        }
    }

    /// Short task label such as `lbf-5x5-2p-1f-coop-pen`.
    pub fn task_name(&self) -> String {
        match self {
            EnvConfig::Climbing => "climbing".to_string(),
            EnvConfig::Lbf(c) => c.task_name(),
            EnvConfig::Bpush(c) => c.task_name(),
        }
    }

    pub fn build(&self, rng: StreamRng) -> Result<EnvInstance, EnvError> {
        self.validate()?;
        Ok(match self {
            EnvConfig::Climbing => EnvInstance::Climbing(ClimbingGame::new()),
            EnvConfig::Lbf(c) => EnvInstance::Lbf(Foraging::new(c.clone(), rng)?),
            EnvConfig::Bpush(c) => EnvInstance::Bpush(BoulderPush::new(c.clone(), rng)?),
        })
    }
}

/// Any of the built-in environments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EnvInstance {
    Climbing(ClimbingGame),
    Lbf(Foraging),
    Bpush(BoulderPush),
}

impl Environment for EnvInstance {
    fn spec(&self) -> EnvSpec {
        match self {
            EnvInstance::Climbing(e) => e.spec(),
            EnvInstance::Lbf(e) => e.spec(),
            EnvInstance::Bpush(e) => e.spec(),
        }
    }

    fn reset(&mut self) -> Result<StepOutcome, EnvError> {
        match self {
            EnvInstance::Climbing(e) => e.reset(),
            EnvInstance::Lbf(e) => e.reset(),
            EnvInstance::Bpush(e) => e.reset(),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        match self {
            EnvInstance::Climbing(e) => e.step(actions),
            EnvInstance::Lbf(e) => e.step(actions),
            EnvInstance::Bpush(e) => e.step(actions),
        }
    }
}

/// Random free cell from `candidates`, removed from the list.
pub(crate) fn take_random<R: rand::Rng>(candidates: &mut Vec<(i64, i64)>, rng: &mut R) -> Option<(i64, i64)> {
    if candidates.is_empty() {
        return None;
    }
    let i = rng.random_range(0..candidates.len());
    Some(candidates.swap_remove(i))
}
