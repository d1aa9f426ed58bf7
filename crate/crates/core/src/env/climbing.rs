use super::{check_actions, EnvError, EnvSpec, Environment, StepOutcome};

/// Payoff for (row agent action, column agent action); actions A=0, B=1, C=2.
pub const CLIMBING_PAYOFF: [[f64; 3]; 3] = [[11.0, -30.0, 0.0], [-30.0, 7.0, 6.0], [0.0, 0.0, 5.0]];

/// Stateless two-agent matrix game; every episode is a single step.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ClimbingGame {
    live: bool,
}

impl ClimbingGame {
    pub fn new() -> Self {
        Self { live: false }
    }

    pub fn payoff(a: usize, b: usize) -> f64 {
        CLIMBING_PAYOFF[a][b]
    }

    fn observations() -> Vec<Vec<f64>> {
        vec![vec![1.0], vec![1.0]]
    }
}

impl Environment for ClimbingGame {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: vec![3, 3],
            obs_len: vec![1, 1],
            state_len: 2,
            max_steps: 1,
        }
    }

    fn reset(&mut self) -> Result<StepOutcome, EnvError> {
        self.live = true;
        Ok(StepOutcome::new(Self::observations(), 0.0, false, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if !self.live {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, 2, 3)?;
        self.live = false;
        Ok(StepOutcome::new(Self::observations(), Self::payoff(actions[0], actions[1]), true, false))
    }
}
