use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::{self, Arrays, CheckpointError, LoadedArrays};
use super::config::{Algorithm, ExperimentConfig};
use crate::deep::{DeepAlgorithm, DeepError, DeepLearner, EvalPolicy, ReplayBuffer, RewardStandardizer, Transition};
use crate::env::{EnvConfig, EnvError, EnvInstance, Environment, StepOutcome};
use crate::rng::{argmax_tie_break, stream, StreamRng};
use crate::tabular::{ClimbingRun, TabularAgent, TabularError};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Deep(#[from] DeepError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// One logged value, before it is tagged with run identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub step: u64,
    pub name: String,
    pub value: f64,
}

impl Metric {
    fn new(step: u64, name: impl Into<String>, value: f64) -> Self {
        Self {
            step,
            name: name.into(),
            value,
        }
    }
}

/// Mean undiscounted return over `episodes` rollouts of `policy`, which maps
/// (observations, previous actions) to a joint action.
pub fn evaluate_policy<E, F>(env: &mut E, episodes: usize, mut policy: F) -> Result<f64, RunError>
where
    E: Environment + ?Sized,
    F: FnMut(&[Vec<f64>], &[Option<usize>]) -> Result<Vec<usize>, RunError>,
{
    if episodes == 0 {
        return Err(RunError::Invalid("evaluation needs at least one episode".into()));
    }
    let n = env.spec().n_agents;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut out = env.reset()?;
        let mut last = vec![None; n];
        loop {
            let actions = policy(&out.observations, &last)?;
            out = env.step(&actions)?;
            total += out.reward;
            last = actions.into_iter().map(Some).collect();
            if out.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Evaluates a deep learner on fresh environments drawn from `tag`'s streams,
/// leaving all training state untouched.
pub fn evaluate_learner(
    learner: &DeepLearner,
    env: &EnvConfig,
    episodes: usize,
    policy: EvalPolicy,
    epsilon: f64,
    seed: u64,
    tag: &str,
) -> Result<f64, RunError> {
    let mut env = env.build(stream(seed, &format!("eval-env/{tag}")))?;
    let mut rng = stream(seed, &format!("eval/{tag}"));
    evaluate_policy(&mut env, episodes, |obs, last| Ok(learner.act_evaluation(obs, last, policy, epsilon, &mut rng)?))
}

fn eval_policy(config: &ExperimentConfig) -> EvalPolicy {
    config.eval_member.map_or(EvalPolicy::Vote, EvalPolicy::Member)
}

/// Evaluation action of one tabular agent: its usual greedy rule, or greedy
/// on a single ensemble member.
pub fn tabular_policy_action<R: rand::Rng + ?Sized>(agent: &TabularAgent, member: Option<usize>, rng: &mut R) -> usize {
    match (member, agent.ensemble()) {
        (Some(k), Some(ens)) => argmax_tie_break(&ens.rows[k], rng),
        _ => agent.eval_action(rng),
    }
}

/// Deep training: environment interaction, replay, updates and periodic
/// evaluation for one seed.
#[derive(Debug, Clone)]
pub struct DeepRun {
    config: ExperimentConfig,
    seed: u64,
    env: EnvInstance,
    current: StepOutcome,
    last_actions: Vec<Option<usize>>,
    episode_return: f64,
    learner: DeepLearner,
    buffer: ReplayBuffer,
    standardizer: RewardStandardizer,
    explore: StreamRng,
    replay: StreamRng,
    t: u64,
    finished: bool,
}

#[derive(Serialize, Deserialize)]
struct DeepState {
    config: ExperimentConfig,
    seed: u64,
    env: EnvInstance,
    current: StepOutcome,
    last_actions: Vec<Option<usize>>,
    episode_return: f64,
    standardizer: RewardStandardizer,
    explore: StreamRng,
    replay: StreamRng,
    t: u64,
    finished: bool,
    updates: u64,
    adam: AdamConfig,
    adam_step: u64,
    params: BTreeMap<String, Vec<usize>>,
    moments: BTreeMap<String, Vec<usize>>,
    replay_len: usize,
    replay_head: usize,
}

impl DeepRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        let Algorithm::Deep(algorithm) = config.algorithm else {
            return Err(RunError::Invalid(format!("{} is not a deep algorithm", config.algorithm)));
        };
        let mut env = config.env.build(stream(seed, "env"))?;
        let spec = env.spec();
        let learner = DeepLearner::new(algorithm, config.deep.clone(), &spec, seed)?;
        let buffer = ReplayBuffer::new(config.deep.buffer_capacity, spec.n_agents, spec.obs_dim());
        let current = env.reset()?;
        Ok(Self {
            config: config.clone(),
            seed,
            env,
            current,
            last_actions: vec![None; spec.n_agents],
            episode_return: 0.0,
            learner,
            buffer,
            standardizer: RewardStandardizer::new(),
            explore: stream(seed, "explore"),
            replay: stream(seed, "replay"),
            t: 0,
            finished: config.total_steps() == 0,
        })
    }

    pub fn algorithm(&self) -> DeepAlgorithm {
        self.learner.algorithm
    }

    pub fn learner(&self) -> &DeepLearner {
        &self.learner
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Evaluation with the config's policy, episode count and ε.
    pub fn evaluate(&self, tag: &str) -> Result<f64, RunError> {
        evaluate_learner(
            &self.learner,
            &self.config.env,
            self.config.eval_episodes,
            eval_policy(&self.config),
            self.config.deep.eval_epsilon,
            self.seed,
            tag,
        )
    }

    /// One environment step, followed by an update once replay is warm and
    /// an evaluation when one is due.
    pub fn step(&mut self, out: &mut Vec<Metric>) -> Result<(), RunError> {
        if self.finished {
            return Ok(());
        }
        let deep = &self.config.deep;
        let actions = self
            .learner
            .act_training(&self.current.observations, &self.last_actions, self.t, &mut self.explore)?;
        let next = self.env.step(&actions)?;
        let reward = if deep.reward_standardisation {
            self.standardizer.standardize(next.reward)
        } else {
            next.reward
        };
        self.buffer.push(&Transition {
            observations: std::mem::take(&mut self.current.observations),
            last_actions: std::mem::take(&mut self.last_actions),
            actions: actions.clone(),
            reward,
            next_observations: next.observations.clone(),
            terminal: next.terminal(),
        });
        self.episode_return += next.reward;
        self.t += 1;
        let t = self.t;
        if next.done {
            out.push(Metric::new(t, "train_return", self.episode_return));
            self.episode_return = 0.0;
            self.current = self.env.reset()?;
            self.last_actions = vec![None; self.learner.layout.n_agents];
        } else {
            self.current = next;
            self.last_actions = actions.into_iter().map(Some).collect();
        }

        if self.buffer.len() >= deep.warmup.max(deep.batch_size) {
            let stats = self.learner.update(&self.buffer, &mut self.replay)?;
            if self.learner.update_count().is_multiple_of(self.config.log_interval) {
                out.push(Metric::new(t, "loss", stats.loss));
                out.push(Metric::new(t, "grad_norm", stats.grad_norm_clipped));
                out.push(Metric::new(t, "grad_norm_raw", stats.grad_norm));
            }
        }

        let total = self.config.total_steps();
        if t.is_multiple_of(self.config.eval_interval()) || t == total {
            let ret = self.evaluate(&t.to_string())?;
            out.push(Metric::new(t, "eval_return", ret));
            if self.config.stop_at_return.is_some_and(|target| ret >= target) {
                self.finished = true;
            }
        }
        if t >= total {
            self.finished = true;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let mut arrays = Arrays::new();
        let mut params = BTreeMap::new();
        for (name, t) in self.learner.params.iter() {
            params.insert(name.clone(), t.shape().to_vec());
            arrays.push_f64(format!("param/{name}"), t.data().to_vec());
        }
        let mut moments = BTreeMap::new();
        for ((name, m), (_, v)) in self.learner.adam.first_moment().iter().zip(self.learner.adam.second_moment().iter()) {
            moments.insert(name.clone(), m.shape().to_vec());
            arrays.push_f64(format!("adam.m/{name}"), m.data().to_vec());
            arrays.push_f64(format!("adam.v/{name}"), v.data().to_vec());
        }
        let b = &self.buffer;
        arrays.push_f64("replay/obs", b.obs.clone());
        arrays.push_f64("replay/next_obs", b.next_obs.clone());
        arrays.push_f64("replay/rewards", b.rewards.clone());
        arrays.push_u64("replay/last_actions", b.last_actions.iter().map(|&a| a as u64).collect());
        arrays.push_u64("replay/actions", b.actions.iter().map(|&a| a as u64).collect());
        arrays.push_u64("replay/terminal", b.terminal.iter().map(|&d| d as u64).collect());
        let state = DeepState {
            config: self.config.clone(),
            seed: self.seed,
            env: self.env.clone(),
            current: self.current.clone(),
            last_actions: self.last_actions.clone(),
            episode_return: self.episode_return,
            standardizer: self.standardizer.clone(),
            explore: self.explore.clone(),
            replay: self.replay.clone(),
            t: self.t,
            finished: self.finished,
            updates: self.learner.update_count(),
            adam: self.learner.adam.config,
            adam_step: self.learner.adam.step_count(),
            params,
            moments,
            replay_len: b.len,
            replay_head: b.head,
        };
        checkpoint::write(path, "deep", &state, &arrays)?;
        Ok(())
    }

    fn from_checkpoint(state: DeepState, mut arrays: LoadedArrays) -> Result<Self, RunError> {
        let mut run = DeepRun::new(&state.config, state.seed)?;
        let tensor = |arrays: &mut LoadedArrays, key: String, shape: &[usize]| -> Result<Tensor, RunError> {
            let data = arrays.take_f64(&key)?;
            Tensor::new(shape.to_vec(), data).map_err(|e| CheckpointError::Mismatch(format!("{key}: {e}")).into())
        };
        let mut params = ParamStore::new();
        for (name, shape) in &state.params {
            if run.learner.params.get(name).map(Tensor::shape) != Some(shape.as_slice()) {
                return Err(CheckpointError::Mismatch(format!("parameter `{name}` does not fit the configured networks")).into());
            }
            params.insert(name.clone(), tensor(&mut arrays, format!("param/{name}"), shape)?);
        }
        if params.len() != run.learner.params.len() {
            return Err(CheckpointError::Mismatch("parameter set differs from the configured networks".into()).into());
        }
        let (mut first, mut second) = (ParamStore::new(), ParamStore::new());
        for (name, shape) in &state.moments {
            first.insert(name.clone(), tensor(&mut arrays, format!("adam.m/{name}"), shape)?);
            second.insert(name.clone(), tensor(&mut arrays, format!("adam.v/{name}"), shape)?);
        }
        run.learner
            .restore(params, Adam::from_parts(state.adam, state.adam_step, first, second), state.updates);

        let b = &mut run.buffer;
        b.obs = arrays.take_f64("replay/obs")?;
        b.next_obs = arrays.take_f64("replay/next_obs")?;
        b.rewards = arrays.take_f64("replay/rewards")?;
        b.last_actions = arrays.take_u64("replay/last_actions")?.into_iter().map(|a| a as usize).collect();
        b.actions = arrays.take_u64("replay/actions")?.into_iter().map(|a| a as usize).collect();
        b.terminal = arrays.take_u64("replay/terminal")?.into_iter().map(|d| d != 0).collect();
        b.len = state.replay_len;
        b.head = state.replay_head;
        let (n, d) = (b.n_agents, b.obs_dim);
        if b.rewards.len() != b.len || b.obs.len() != b.len * n * d || b.actions.len() != b.len * n || b.head >= b.capacity {
            return Err(CheckpointError::Mismatch("replay arrays are inconsistent".into()).into());
        }

        run.env = state.env;
        run.current = state.current;
        run.last_actions = state.last_actions;
        run.episode_return = state.episode_return;
        run.standardizer = state.standardizer;
        run.explore = state.explore;
        run.replay = state.replay;
        run.t = state.t;
        run.finished = state.finished;
        Ok(run)
    }
}

/// Two tabular learners on the climbing game, with logging and evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularRun {
    config: ExperimentConfig,
    seed: u64,
    run: ClimbingRun,
    finished: bool,
}

const CLIMBING_ACTIONS: [&str; 3] = ["A", "B", "C"];

impl TabularRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        let (Algorithm::Tabular(algorithm), Some(tc)) = (config.algorithm, config.tabular_config()) else {
            return Err(RunError::Invalid(format!("{} is not a tabular algorithm", config.algorithm)));
        };
        Ok(Self {
            config: config.clone(),
            seed,
            run: ClimbingRun::new(algorithm, tc, seed)?,
            finished: config.total_steps() == 0,
        })
    }

    pub fn inner(&self) -> &ClimbingRun {
        &self.run
    }

    pub fn step_count(&self) -> u64 {
        self.run.step_count()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Mean return of greedy (or single-member) joint play.
    pub fn evaluate(&self, tag: &str) -> Result<f64, RunError> {
        let mut env = self.config.env.build(stream(self.seed, &format!("eval-env/{tag}")))?;
        let mut rng = stream(self.seed, &format!("eval/{tag}"));
        let member = self.config.eval_member;
        evaluate_policy(&mut env, self.config.eval_episodes, |_, _| {
            Ok(self.run.agents.iter().map(|a| tabular_policy_action(a, member, &mut rng)).collect())
        })
    }

    pub fn step(&mut self, out: &mut Vec<Metric>) -> Result<(), RunError> {
        if self.finished {
            return Ok(());
        }
        let trace = self.run.train_step()?;
        let t = trace.step;
        out.push(Metric::new(t, "train_return", trace.reward));
        if t % self.config.log_interval == 0 {
            for (i, (mean, std)) in trace.mean.iter().zip(&trace.std).enumerate() {
                for (a, name) in CLIMBING_ACTIONS.iter().enumerate() {
                    out.push(Metric::new(t, format!("q_mean/a{i}/{name}"), mean[a]));
                    out.push(Metric::new(t, format!("q_std/a{i}/{name}"), std[a]));
                }
            }
        }
        let total = self.config.total_steps();
        if t % self.config.eval_interval() == 0 || t == total {
            let ret = self.evaluate(&t.to_string())?;
            out.push(Metric::new(t, "eval_return", ret));
            if self.config.stop_at_return.is_some_and(|target| ret >= target) {
                self.finished = true;
            }
        }
        if t >= total {
            self.finished = true;
        }
        if self.finished {
            let (_, reward) = self.run.greedy_joint(&mut stream(self.seed, "eval"));
            out.push(Metric::new(t, "final_greedy_return", reward));
        }
        Ok(())
    }
}

/// A training run of either family.
#[derive(Debug, Clone)]
pub enum TrainingRun {
    Deep(Box<DeepRun>),
    Tabular(TabularRun),
}

impl TrainingRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        Ok(match config.algorithm {
            Algorithm::Deep(_) => TrainingRun::Deep(Box::new(DeepRun::new(config, seed)?)),
            Algorithm::Tabular(_) => TrainingRun::Tabular(TabularRun::new(config, seed)?),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        match self {
            TrainingRun::Deep(r) => &r.config,
            TrainingRun::Tabular(r) => &r.config,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TrainingRun::Deep(r) => r.seed,
            TrainingRun::Tabular(r) => r.seed,
        }
    }

    pub fn step(&mut self, out: &mut Vec<Metric>) -> Result<(), RunError> {
        match self {
            TrainingRun::Deep(r) => r.step(out),
            TrainingRun::Tabular(r) => r.step(out),
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            TrainingRun::Deep(r) => r.step_count(),
            TrainingRun::Tabular(r) => r.step_count(),
        }
    }

    pub fn is_finished(&self) -> bool {
        match self {
            TrainingRun::Deep(r) => r.is_finished(),
            TrainingRun::Tabular(r) => r.is_finished(),
        }
    }

    pub fn evaluate(&self, tag: &str) -> Result<f64, RunError> {
        match self {
            TrainingRun::Deep(r) => r.evaluate(tag),
            TrainingRun::Tabular(r) => r.evaluate(tag),
        }
    }

    /// Replaces the evaluation settings, keeping all learned state.
    pub fn set_evaluation(&mut self, episodes: usize, member: Option<usize>, epsilon: f64) {
        let c = match self {
            TrainingRun::Deep(r) => &mut r.config,
            TrainingRun::Tabular(r) => &mut r.config,
        };
        c.eval_episodes = episodes;
        c.eval_member = member;
        c.deep.eval_epsilon = epsilon;
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        match self {
            TrainingRun::Deep(r) => r.save(path),
            TrainingRun::Tabular(r) => Ok(checkpoint::write(path, "tabular", r, &Arrays::new())?),
        }
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let (kind, state, arrays): (String, serde_json::Value, _) = checkpoint::read(path)?;
        let header = |e: serde_json::Error| RunError::from(CheckpointError::Header(e));
        match kind.as_str() {
            "deep" => Ok(TrainingRun::Deep(Box::new(DeepRun::from_checkpoint(
                serde_json::from_value(state).map_err(header)?,
                arrays,
            )?))),
            "tabular" => Ok(TrainingRun::Tabular(serde_json::from_value(state).map_err(header)?)),
            other => Err(CheckpointError::Mismatch(format!("unknown checkpoint kind `{other}`")).into()),
        }
    }
}
