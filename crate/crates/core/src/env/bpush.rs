use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, take_random, EnvError, EnvSpec, Environment, StepOutcome};
use crate::rng::StreamRng;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpushConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    50
}

impl Default for BpushConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            n_agents: 2,
            max_steps: default_max_steps(),
        }
    }
}

impl BpushConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents == 0 {
            return Err(EnvError::InvalidConfig("bpush n_agents must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("bpush max_steps must be positive".into()));
        }
        // Any direction needs n cells across and three along (target, boulder, pushers).
        let short = self.width.min(self.height);
        if short < self.n_agents || short < 3 {
            return Err(EnvError::GridTooSmall(format!(
                "{}x{} grid cannot fit a {}-wide boulder in every direction",
                self.width, self.height, self.n_agents
            )));
        }
        if self.width * self.height < 3 * self.n_agents {
            return Err(EnvError::GridTooSmall("not enough free cells for agents".into()));
        }
        Ok(())
    }

    pub fn task_name(&self) -> String {
        format!("bpush-{}x{}-{}p", self.width, self.height, self.n_agents)
    }

    pub fn obs_len(&self) -> usize {
        2 + 2 * self.n_agents + 4
    }
}

/// Push direction, in one-hot order N, E, S, W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }

    /// The movement action that walks in this direction.
    pub fn action(self) -> usize {
        match self {
            Direction::North => UP,
            Direction::East => RIGHT,
            Direction::South => DOWN,
            Direction::West => LEFT,
        }
    }

    fn vertical(self) -> bool {
        matches!(self, Direction::North | Direction::South)
    }
}

/// Agents must line up behind a boulder as wide as the team and push it in
/// unison until it reaches the grid edge it faces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoulderPush {
    config: BpushConfig,
    rng: StreamRng,
    /// Top-left cell of the boulder.
    anchor: (i64, i64),
    direction: Direction,
    agents: Vec<(i64, i64)>,
    steps: usize,
    live: bool,
    started: bool,
}

impl BoulderPush {
    pub fn new(config: BpushConfig, rng: StreamRng) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            rng,
            anchor: (0, 0),
            direction: Direction::North,
            agents: Vec::new(),
            steps: 0,
            live: false,
            started: false,
        })
    }

    /// Places the boulder and agents explicitly.
    pub fn set_layout(&mut self, anchor: (i64, i64), direction: Direction, agents: &[(i64, i64)]) -> Result<StepOutcome, EnvError> {
        if agents.len() != self.config.n_agents {
            return Err(EnvError::InvalidConfig("layout does not match n_agents".into()));
        }
        self.anchor = anchor;
        self.direction = direction;
        let cells = self.boulder_cells();
        if cells.iter().chain(agents).any(|&c| !self.in_bounds(c)) {
            return Err(EnvError::InvalidConfig("layout leaves the grid".into()));
        }
        if agents.iter().any(|a| cells.contains(a)) {
            return Err(EnvError::InvalidConfig("agent placed on the boulder".into()));
        }
        self.agents = agents.to_vec();
        self.steps = 0;
        self.live = true;
        self.started = true;
        Ok(self.outcome(0.0, false, false))
    }

    pub fn anchor(&self) -> (i64, i64) {
        self.anchor
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn agent_positions(&self) -> &[(i64, i64)] {
        &self.agents
    }

    /// Number of successful pushes needed to reach the target edge.
    pub fn distance_to_target(&self) -> usize {
        let (x, y) = self.anchor;
        let (w, h) = (self.config.width as i64, self.config.height as i64);
        (match self.direction {
            Direction::North => y,
            Direction::South => h - 1 - y,
            Direction::West => x,
            Direction::East => w - 1 - x,
        }) as usize
    }

    /// Cells that must be occupied for a push, ordered along the boulder.
    pub fn pushing_cells(&self) -> Vec<(i64, i64)> {
        let (dx, dy) = self.direction.delta();
        self.boulder_cells().into_iter().map(|(x, y)| (x - dx, y - dy)).collect()
    }

    pub fn boulder_cells(&self) -> Vec<(i64, i64)> {
        let (x, y) = self.anchor;
        let n = self.config.n_agents as i64;
        if self.direction.vertical() {
            (0..n).map(|i| (x + i, y)).collect()
        } else {
            (0..n).map(|i| (x, y + i)).collect()
        }
    }

    fn in_bounds(&self, (x, y): (i64, i64)) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.config.width && (y as usize) < self.config.height
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.config.obs_len());
        obs.extend([self.anchor.0 as f64, self.anchor.1 as f64]);
        for &(x, y) in &self.agents {
            obs.extend([x as f64, y as f64]);
        }
        let mut one_hot = [0.0; 4];
        one_hot[self.direction.index()] = 1.0;
        obs.extend(one_hot);
        obs
    }

    fn outcome(&self, reward: f64, done: bool, truncated: bool) -> StepOutcome {
        let obs = self.observation();
        StepOutcome::new(vec![obs; self.config.n_agents], reward, done, truncated)
    }
}

impl Environment for BoulderPush {
    fn spec(&self) -> EnvSpec {
        let n = self.config.n_agents;
        EnvSpec {
            n_agents: n,
            n_actions: vec![4; n],
            obs_len: vec![self.config.obs_len(); n],
            state_len: n * self.config.obs_len(),
            max_steps: self.config.max_steps,
        }
    }

    fn reset(&mut self) -> Result<StepOutcome, EnvError> {
        let (w, h) = (self.config.width as i64, self.config.height as i64);
        let n = self.config.n_agents as i64;
        self.direction = Direction::ALL[self.rng.random_range(0..4)];
        // The boulder starts at least one push from its edge, with room behind it.
        let (xs, ys) = match self.direction {
            Direction::North => ((0, w - n), (1, h - 2)),
            Direction::South => ((0, w - n), (1, h - 2)),
            Direction::East => ((1, w - 2), (0, h - n)),
            Direction::West => ((1, w - 2), (0, h - n)),
        };
        self.anchor = (self.rng.random_range(xs.0..=xs.1), self.rng.random_range(ys.0..=ys.1));
        let cells = self.boulder_cells();
        let mut free: Vec<(i64, i64)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|c| !cells.contains(c))
            .collect();
        self.agents.clear();
        for _ in 0..n {
            let pos = take_random(&mut free, &mut self.rng).ok_or_else(|| EnvError::GridTooSmall("no free cell for agents".into()))?;
            self.agents.push(pos);
        }
        self.steps = 0;
        self.live = true;
        self.started = true;
        Ok(self.outcome(0.0, false, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if !self.live {
            return Err(if self.started { EnvError::StepAfterDone } else { EnvError::NotReset });
        }
        check_actions(actions, self.config.n_agents, 4)?;
        let n = self.config.n_agents as f64;
        let push = self.direction.action();
        let behind = self.pushing_cells();
        let pushers: Vec<usize> = (0..self.agents.len())
            .filter(|&i| actions[i] == push && behind.contains(&self.agents[i]))
            .collect();

        let mut reward = 0.0;
        let mut reached = false;
        if pushers.len() == self.agents.len() {
            let (dx, dy) = self.direction.delta();
            self.anchor = (self.anchor.0 + dx, self.anchor.1 + dy);
            for a in &mut self.agents {
                *a = (a.0 + dx, a.1 + dy);
            }
            reward += 0.1 * n;
            if self.distance_to_target() == 0 {
                reward += n;
                reached = true;
            }
        } else {
            if !pushers.is_empty() {
                reward -= 0.01;
            }
            let cells = self.boulder_cells();
            let mut order: Vec<usize> = (0..self.agents.len()).collect();
            order.shuffle(&mut self.rng);
            for i in order {
                let (x, y) = self.agents[i];
                let target = match actions[i] {
                    UP => (x, y - 1),
                    DOWN => (x, y + 1),
                    LEFT => (x - 1, y),
                    _ => (x + 1, y),
                };
                if self.in_bounds(target) && !cells.contains(&target) && !self.agents.contains(&target) {
                    self.agents[i] = target;
                }
            }
        }

        self.steps += 1;
        let timeout = self.steps >= self.config.max_steps;
        let done = reached || timeout;
        self.live = !done;
        Ok(self.outcome(reward, done, done && !reached))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn env(n: usize, seed: u64) -> BoulderPush {
        let cfg = BpushConfig {
            n_agents: n,
            ..BpushConfig::default()
        };
        BoulderPush::new(cfg, stream(seed, "env")).unwrap()
    }

    #[test]
    fn reset_layout_contract() {
        for seed in 0..50 {
            let mut e = env(2, seed);
            let out = e.reset().unwrap();
            assert_eq!(out, env(2, seed).reset().unwrap());
            assert_eq!(out.observations[0].len(), 2 + 2 * 2 + 4);
            assert_eq!(out.observations[0][6..].iter().sum::<f64>(), 1.0);
            assert!(e.distance_to_target() >= 1);
            assert!(e.pushing_cells().iter().all(|&c| e.in_bounds(c)));
        }
    }

    #[test]
    fn unison_push_and_partial_penalty() {
        let mut e = env(2, 0);
        e.set_layout((3, 4), Direction::North, &[(3, 5), (4, 5)]).unwrap();
        let out = e.step(&[UP, LEFT]).unwrap();
        assert_eq!(out.reward, -0.01);
        assert_eq!(e.anchor(), (3, 4));
        // The left move was blocked by agent 0, so both are still in place.
        assert_eq!(e.agent_positions(), &[(3, 5), (4, 5)]);
        let out = e.step(&[UP, UP]).unwrap();
        assert!((out.reward - 0.2).abs() < 1e-15);
        assert_eq!(e.anchor(), (3, 3));
        assert_eq!(e.agent_positions(), &[(3, 4), (4, 4)]);
    }

    #[test]
    fn reaching_target_pays_per_agent() {
        let mut e = env(2, 0);
        e.set_layout((2, 1), Direction::North, &[(2, 2), (3, 2)]).unwrap();
        let out = e.step(&[UP, UP]).unwrap();
        assert!((out.reward - 2.2).abs() < 1e-12);
        assert!(out.terminal());
    }

    #[test]
    fn scripted_push_golden_trace() {
        // Farthest legal start, team already behind the boulder: every step
        // is a push, so the return is 0.1 n per push plus n on arrival.
        for n in [2, 3] {
            for dir in Direction::ALL {
                let mut e = env(n, 0);
                let (w, h) = (8, 8);
                let anchor = match dir {
                    Direction::North => (0, h - 2),
                    Direction::South => (0, 1),
                    Direction::West => (w - 2, 0),
                    Direction::East => (1, 0),
                };
                e.anchor = anchor;
                e.direction = dir;
                let behind = e.pushing_cells();
                e.set_layout(anchor, dir, &behind).unwrap();
                let d = e.distance_to_target();
                assert_eq!(d, 6);
                let (mut ret, mut steps) = (0.0, 0);
                loop {
                    let out = e.step(&vec![dir.action(); n]).unwrap();
                    ret += out.reward;
                    steps += 1;
                    if out.done {
                        assert!(out.terminal());
                        break;
                    }
                }
                let n = n as f64;
                assert_eq!(steps, d);
                assert!((ret - (0.1 * n * d as f64 + n)).abs() < 1e-12, "{dir:?}: {ret}");
            }
        }
    }
}
