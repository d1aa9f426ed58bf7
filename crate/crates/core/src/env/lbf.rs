use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, take_random, EnvError, EnvSpec, Environment, StepOutcome};
use crate::rng::StreamRng;

pub const NOOP: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;
pub const PICKUP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_food: usize,
    /// Every food needs at least two agents.
    #[serde(default)]
    pub coop: bool,
    /// Charged once per agent whose pickup attempt collects nothing.
    #[serde(default)]
    pub penalty: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_max_level")]
    pub max_agent_level: usize,
}

fn default_max_steps() -> usize {
    50
}

fn default_max_level() -> usize {
    3
}

impl Default for LbfConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            n_agents: 2,
            n_food: 1,
            coop: true,
            penalty: 0.05,
            max_steps: default_max_steps(),
            max_agent_level: default_max_level(),
        }
    }
}

impl LbfConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("lbf width and height must be positive".into());
        }
        if self.n_agents == 0 {
            return bad("lbf n_agents must be at least 1".into());
        }
        if self.n_food == 0 {
            return bad("lbf n_food must be at least 1".into());
        }
        if self.coop && self.n_agents < 2 {
            return bad("lbf coop needs at least 2 agents".into());
        }
        if self.max_agent_level == 0 {
            return bad("lbf max_agent_level must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("lbf max_steps must be positive".into());
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return bad(format!("lbf penalty must be a non-negative number, got {}", self.penalty));
        }
        if self.width * self.height < self.n_agents + self.n_food {
            return Err(EnvError::GridTooSmall(format!(
                "{}x{} grid cannot hold {} agents and {} food",
                self.width, self.height, self.n_agents, self.n_food
            )));
        }
        Ok(())
    }

    pub fn task_name(&self) -> String {
        let mut name = format!("lbf-{}x{}-{}p-{}f", self.width, self.height, self.n_agents, self.n_food);
        if self.coop {
            name.push_str("-coop");
        }
        if self.penalty > 0.0 {
            name.push_str("-pen");
        }
        name
    }

    pub fn obs_len(&self) -> usize {
        (self.n_agents + self.n_food) * 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Food {
    pos: (i64, i64),
    level: usize,
    collected: bool,
}

/// Level-based foraging on a fully observable grid. Positions are `(x, y)`
/// with `y` growing downwards, so `UP` decrements `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Foraging {
    config: LbfConfig,
    rng: StreamRng,
    agents: Vec<(i64, i64)>,
    levels: Vec<usize>,
    foods: Vec<Food>,
    total_food_level: usize,
    steps: usize,
    live: bool,
}

impl Foraging {
    pub fn new(config: LbfConfig, rng: StreamRng) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            rng,
            agents: Vec::new(),
            levels: Vec::new(),
            foods: Vec::new(),
            total_food_level: 0,
            steps: 0,
            live: false,
        })
    }

    /// Places entities explicitly. Food entries are `(x, y, level)`.
    pub fn set_layout(&mut self, agents: &[(i64, i64, usize)], foods: &[(i64, i64, usize)]) -> Result<StepOutcome, EnvError> {
        if agents.len() != self.config.n_agents || foods.len() != self.config.n_food {
            return Err(EnvError::InvalidConfig("layout does not match entity counts".into()));
        }
        self.agents = agents.iter().map(|&(x, y, _)| (x, y)).collect();
        self.levels = agents.iter().map(|&(_, _, l)| l).collect();
        self.foods = foods
            .iter()
            .map(|&(x, y, level)| Food {
                pos: (x, y),
                level,
                collected: false,
            })
            .collect();
        self.total_food_level = self.foods.iter().map(|f| f.level).sum();
        self.steps = 0;
        self.live = true;
        Ok(self.outcome(0.0, false, false))
    }

    pub fn config(&self) -> &LbfConfig {
        &self.config
    }

    pub fn agent_positions(&self) -> &[(i64, i64)] {
        &self.agents
    }

    pub fn agent_levels(&self) -> &[usize] {
        &self.levels
    }

    /// `(x, y, level, collected)` per food.
    pub fn foods(&self) -> Vec<(i64, i64, usize, bool)> {
        self.foods.iter().map(|f| (f.pos.0, f.pos.1, f.level, f.collected)).collect()
    }

    fn in_bounds(&self, (x, y): (i64, i64)) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.config.width && (y as usize) < self.config.height
    }

    fn food_at(&self, pos: (i64, i64)) -> bool {
        self.foods.iter().any(|f| !f.collected && f.pos == pos)
    }

    fn food_level_range(&self) -> (usize, usize) {
        let mut sorted = self.levels.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top = sorted[0];
        if self.config.coop {
            (top + 1, sorted[0] + sorted[1])
        } else {
            (1, top)
        }
    }

    fn observation(&self, ego: usize) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.config.obs_len());
        let push_agent = |obs: &mut Vec<f64>, i: usize| {
            obs.extend([self.agents[i].0 as f64, self.agents[i].1 as f64, self.levels[i] as f64]);
        };
        push_agent(&mut obs, ego);
        for i in (0..self.agents.len()).filter(|&i| i != ego) {
            push_agent(&mut obs, i);
        }
        for f in &self.foods {
            if f.collected {
                obs.extend([-1.0, -1.0, 0.0]);
            } else {
                obs.extend([f.pos.0 as f64, f.pos.1 as f64, f.level as f64]);
            }
        }
        obs
    }

    fn outcome(&self, reward: f64, done: bool, truncated: bool) -> StepOutcome {
        let observations = (0..self.agents.len()).map(|i| self.observation(i)).collect();
        StepOutcome::new(observations, reward, done, truncated)
    }
}

fn adjacent(a: (i64, i64), b: (i64, i64)) -> bool {
    (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1
}

impl Environment for Foraging {
    fn spec(&self) -> EnvSpec {
        let n = self.config.n_agents;
        EnvSpec {
            n_agents: n,
            n_actions: vec![6; n],
            obs_len: vec![self.config.obs_len(); n],
            state_len: n * self.config.obs_len(),
            max_steps: self.config.max_steps,
        }
    }

    fn reset(&mut self) -> Result<StepOutcome, EnvError> {
        let (w, h) = (self.config.width as i64, self.config.height as i64);
        self.levels = (0..self.config.n_agents)
            .map(|_| self.rng.random_range(1..=self.config.max_agent_level))
            .collect();
        let (lo, hi) = self.food_level_range();

        // Food goes on interior cells when the grid has any, never next to other food.
        let interior: Vec<(i64, i64)> = (1..h - 1).flat_map(|y| (1..w - 1).map(move |x| (x, y))).collect();
        let mut food_cells = if interior.len() >= self.config.n_food {
            interior
        } else {
            (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect()
        };
        self.foods.clear();
        for _ in 0..self.config.n_food {
            let pos = take_random(&mut food_cells, &mut self.rng)
                .ok_or_else(|| EnvError::GridTooSmall(format!("no free cell for food on {w}x{h}")))?;
            food_cells.retain(|&c| c != pos && !adjacent(c, pos));
            let level = self.rng.random_range(lo..=hi);
            self.foods.push(Food {
                pos,
                level,
                collected: false,
            });
        }
        let mut free: Vec<(i64, i64)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&c| !self.foods.iter().any(|f| f.pos == c))
            .collect();
        self.agents.clear();
        for _ in 0..self.config.n_agents {
            let pos = take_random(&mut free, &mut self.rng)
                .ok_or_else(|| EnvError::GridTooSmall(format!("no free cell for agents on {w}x{h}")))?;
            self.agents.push(pos);
        }
        self.total_food_level = self.foods.iter().map(|f| f.level).sum();
        self.steps = 0;
        self.live = true;
        Ok(self.outcome(0.0, false, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if !self.live {
            return Err(if self.agents.is_empty() {
                EnvError::NotReset
            } else {
                EnvError::StepAfterDone
            });
        }
        check_actions(actions, self.config.n_agents, 6)?;

        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.shuffle(&mut self.rng);
        for i in order {
            let (x, y) = self.agents[i];
            let target = match actions[i] {
                UP => (x, y - 1),
                DOWN => (x, y + 1),
                LEFT => (x - 1, y),
                RIGHT => (x + 1, y),
                _ => continue,
            };
            if self.in_bounds(target) && !self.food_at(target) && !self.agents.contains(&target) {
                self.agents[i] = target;
            }
        }

        let mut reward = 0.0;
        let mut succeeded = vec![false; self.agents.len()];
        for f in 0..self.foods.len() {
            if self.foods[f].collected {
                continue;
            }
            let pos = self.foods[f].pos;
            let helpers: Vec<usize> = (0..self.agents.len())
                .filter(|&i| actions[i] == PICKUP && adjacent(self.agents[i], pos))
                .collect();
            let strength: usize = helpers.iter().map(|&i| self.levels[i]).sum();
            if !helpers.is_empty() && strength >= self.foods[f].level {
                self.foods[f].collected = true;
                reward += self.foods[f].level as f64 / self.total_food_level as f64;
                for i in helpers {
                    succeeded[i] = true;
                }
            }
        }
        if self.config.penalty > 0.0 {
            for i in 0..self.agents.len() {
                if actions[i] == PICKUP && !succeeded[i] {
                    reward -= self.config.penalty;
                }
            }
        }

        self.steps += 1;
        let cleared = self.foods.iter().all(|f| f.collected);
        let timeout = self.steps >= self.config.max_steps;
        let done = cleared || timeout;
        self.live = !done;
        Ok(self.outcome(reward, done, done && !cleared))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn env(cfg: LbfConfig, seed: u64) -> Foraging {
        Foraging::new(cfg, stream(seed, "env")).unwrap()
    }

    #[test]
    fn reset_is_seeded() {
        let a = env(LbfConfig::default(), 3).reset().unwrap();
        let b = env(LbfConfig::default(), 3).reset().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observations[0].len(), (2 + 1) * 3);
        assert_eq!(a.state.len(), 2 * 9);
    }

    #[test]
    fn coop_level_one_agents_get_level_two_food() {
        let cfg = LbfConfig {
            width: 8,
            height: 8,
            n_food: 3,
            max_agent_level: 1,
            ..LbfConfig::default()
        };
        let mut e = env(cfg, 0);
        for _ in 0..20 {
            e.reset().unwrap();
            assert!(e.foods().iter().all(|f| f.2 == 2));
        }
    }

    #[test]
    fn joint_pickup_and_penalty() {
        let mut e = env(LbfConfig::default(), 0);
        e.set_layout(&[(1, 2, 1), (3, 2, 1)], &[(2, 2, 2)]).unwrap();
        let out = e.step(&[PICKUP, NOOP]).unwrap();
        assert!((out.reward + 0.05).abs() < 1e-15);
        assert!(!out.done);
        let out = e.step(&[PICKUP, PICKUP]).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.terminal());
        assert_eq!(&out.observations[0][6..], &[-1.0, -1.0, 0.0]);
    }

    #[test]
    fn noop_keeps_state_and_timeout_truncates() {
        let cfg = LbfConfig {
            max_steps: 3,
            ..LbfConfig::default()
        };
        let mut e = env(cfg, 1);
        let start = e.reset().unwrap();
        for t in 0..3 {
            let out = e.step(&[NOOP, NOOP]).unwrap();
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.state, start.state);
            assert_eq!(out.done, t == 2);
        }
        assert!(e.clone().step(&[0, 0]).is_err());
    }

    #[test]
    fn movement_blocked_by_food_walls_and_agents() {
        let mut e = env(LbfConfig::default(), 0);
        e.set_layout(&[(0, 0, 1), (1, 0, 1)], &[(0, 1, 2)]).unwrap();
        e.step(&[UP, LEFT]).unwrap();
        assert_eq!(e.agent_positions(), &[(0, 0), (1, 0)]);
        e.step(&[DOWN, DOWN]).unwrap();
        assert_eq!(e.agent_positions(), &[(0, 0), (1, 1)]);
    }
}
