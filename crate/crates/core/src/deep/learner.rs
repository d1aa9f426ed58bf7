use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{build_loss, member_prefix, Batch, InputLayout, LossSetup, TargetKind, MIXER_PREFIX, TARGET_PREFIX};
use super::mixer::{MixerKind, QmixSpec};
use super::net::{init_mlp, mlp_forward, MlpSpec};
use super::replay::{ReplayBuffer, ReplayTooSmall};
use super::schedule::EpsilonSchedule;
use crate::ensemble::{majority_vote_action, ucb_action};
use crate::env::EnvSpec;
use crate::rng::{argmax_tie_break, stream};
use crate::tabular::epsilon_greedy_action;
use crate::tensor::{clip_global_norm, Adam, AdamConfig, Graph, ParamStore, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeepError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Replay(#[from] ReplayTooSmall),
    #[error("invalid setting `{field}`: {reason}")]
    InvalidSetting { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeepAlgorithm {
    Idqn,
    Vdn,
    Qmix,
    IdqnEmax,
    VdnEmax,
    QmixEmax,
}

impl DeepAlgorithm {
    pub const ALL: [DeepAlgorithm; 6] = [
        DeepAlgorithm::Idqn,
        DeepAlgorithm::Vdn,
        DeepAlgorithm::Qmix,
        DeepAlgorithm::IdqnEmax,
        DeepAlgorithm::VdnEmax,
        DeepAlgorithm::QmixEmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeepAlgorithm::Idqn => "idqn",
            DeepAlgorithm::Vdn => "vdn",
            DeepAlgorithm::Qmix => "qmix",
            DeepAlgorithm::IdqnEmax => "idqn-emax",
            DeepAlgorithm::VdnEmax => "vdn-emax",
            DeepAlgorithm::QmixEmax => "qmix-emax",
        }
    }

    pub fn is_emax(self) -> bool {
        matches!(self, DeepAlgorithm::IdqnEmax | DeepAlgorithm::VdnEmax | DeepAlgorithm::QmixEmax)
    }

    pub fn mixer(self) -> MixerKind {
        match self {
            DeepAlgorithm::Idqn | DeepAlgorithm::IdqnEmax => MixerKind::None,
            DeepAlgorithm::Vdn | DeepAlgorithm::VdnEmax => MixerKind::Vdn,
            DeepAlgorithm::Qmix | DeepAlgorithm::QmixEmax => MixerKind::Qmix,
        }
    }

    /// The non-ensemble algorithm with the same value aggregation.
    pub fn baseline(self) -> DeepAlgorithm {
        match self.mixer() {
            MixerKind::None => DeepAlgorithm::Idqn,
            MixerKind::Vdn => DeepAlgorithm::Vdn,
            MixerKind::Qmix => DeepAlgorithm::Qmix,
        }
    }

    pub fn with_ensemble(self) -> DeepAlgorithm {
        match self.mixer() {
            MixerKind::None => DeepAlgorithm::IdqnEmax,
            MixerKind::Vdn => DeepAlgorithm::VdnEmax,
            MixerKind::Qmix => DeepAlgorithm::QmixEmax,
        }
    }
}

/// Deep agent hyperparameters. Defaults are the gridworld settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepConfig {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Members per ensemble; ignored by the baselines.
    pub ensemble_size: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub target_update_interval: u64,
    pub max_grad_norm: f64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub epsilon_decay_steps: u64,
    pub eval_epsilon: f64,
    pub reward_standardisation: bool,
    pub mixing_embed: usize,
    pub hypernet_embed: usize,
    pub agent_id_input: bool,
}

impl Default for DeepConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-4,
            hidden: vec![128, 128],
            ensemble_size: 5,
            beta: 0.3,
            batch_size: 1024,
            buffer_capacity: 200_000,
            warmup: 1000,
            target_update_interval: 200,
            max_grad_norm: 5.0,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            epsilon_decay_steps: 200_000,
            eval_epsilon: 0.05,
            reward_standardisation: true,
            mixing_embed: 32,
            hypernet_embed: 64,
            agent_id_input: true,
        }
    }
}

impl DeepConfig {
    pub fn validate(&self, algorithm: DeepAlgorithm) -> Result<(), DeepError> {
        let bad = |field, reason: &str| {
            Err(DeepError::InvalidSetting {
                field,
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one non-zero layer width");
        }
        if algorithm.is_emax() && self.ensemble_size < 2 {
            return bad("ensemble_size", "ensemble algorithms need at least 2 members");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity", "must hold at least one batch");
        }
        if self.target_update_interval == 0 {
            return bad("target_update_interval", "must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm", "must be positive");
        }
        for (field, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_final", self.epsilon_final),
            ("eval_epsilon", self.eval_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if self.mixing_embed == 0 || self.hypernet_embed == 0 {
            return bad("mixing_embed", "mixer widths must be positive");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_final,
            decay_steps: self.epsilon_decay_steps,
        }
    }
}

/// Which policy drives evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPolicy {
    /// Majority vote across members (plain greedy for a single network).
    #[default]
    Vote,
    /// Greedy on one member only.
    Member(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm after clipping.
    pub grad_norm_clipped: f64,
}

/// Parameter-shared value networks for all agents, optionally an ensemble,
/// plus the mixer and an optimizer over all of them.
#[derive(Debug, Clone)]
pub struct DeepLearner {
    pub algorithm: DeepAlgorithm,
    pub config: DeepConfig,
    pub layout: InputLayout,
    pub params: ParamStore,
    pub adam: Adam,
    setup: LossSetup,
    updates: u64,
}

impl DeepLearner {
    pub fn new(algorithm: DeepAlgorithm, config: DeepConfig, spec: &EnvSpec, seed: u64) -> Result<Self, DeepError> {
        config.validate(algorithm)?;
        if spec.n_actions.iter().any(|&a| a != spec.actions()) || spec.obs_len.iter().any(|&o| o != spec.obs_dim()) {
            return Err(DeepError::InvalidSetting {
                field: "env",
                reason: "parameter sharing needs identical action and observation spaces".into(),
            });
        }
        let layout = InputLayout {
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim(),
            n_actions: spec.actions(),
            agent_id: config.agent_id_input,
        };
        let net = MlpSpec::new(layout.dim(), &config.hidden, layout.n_actions);
        let members = if algorithm.is_emax() { config.ensemble_size } else { 1 };
        let qmix = (algorithm.mixer() == MixerKind::Qmix).then(|| QmixSpec {
            n_agents: spec.n_agents,
            state_dim: layout.state_dim(),
            embed: config.mixing_embed,
            hyper_embed: config.hypernet_embed,
        });
        let mut params = ParamStore::new();
        for k in 0..members {
            init_mlp(&net, &member_prefix(k), &mut stream(seed, &format!("init.{}", member_prefix(k))), &mut params);
        }
        if let Some(q) = &qmix {
            q.init(MIXER_PREFIX, &mut stream(seed, "init.mixer"), &mut params);
        }
        let setup = LossSetup {
            net,
            mixer: algorithm.mixer(),
            qmix,
            targets: if algorithm.is_emax() {
                TargetKind::EnsembleMean
            } else {
                TargetKind::TargetNetwork
            },
            members,
        };
        let adam = Adam::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        let mut learner = Self {
            algorithm,
            config,
            layout,
            params,
            adam,
            setup,
            updates: 0,
        };
        learner.sync_targets();
        Ok(learner)
    }

    pub(crate) fn restore(&mut self, params: ParamStore, adam: Adam, updates: u64) {
        self.params = params;
        self.adam = adam;
        self.updates = updates;
    }

    pub fn members(&self) -> usize {
        self.setup.members
    }

    pub fn setup(&self) -> &LossSetup {
        &self.setup
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// Copies online networks into their `target.` twins: member 0 and the
    /// mixer for the baselines, only the mixer for ensembles.
    pub fn sync_targets(&mut self) {
        let mut copy = ParamStore::new();
        if !self.algorithm.is_emax() {
            let p = format!("{}.", member_prefix(0));
            self.params.copy_prefix(&p, &format!("{TARGET_PREFIX}{p}"), &mut copy);
        }
        if self.setup.qmix.is_some() {
            let p = format!("{MIXER_PREFIX}.");
            self.params.copy_prefix(&p, &format!("{TARGET_PREFIX}{p}"), &mut copy);
        }
        for (name, t) in copy.into_inner() {
            self.params.insert(name, t);
        }
    }

    /// `[agent][action]` values of member `k`.
    pub fn member_values(&self, k: usize, observations: &[Vec<f64>], last_actions: &[Option<usize>]) -> Result<Vec<Vec<f64>>, DeepError> {
        self.values_with_prefix(&member_prefix(k), observations, last_actions)
    }

    pub(crate) fn values_with_prefix(&self, prefix: &str, observations: &[Vec<f64>], last_actions: &[Option<usize>]) -> Result<Vec<Vec<f64>>, DeepError> {
        let x = self.layout.encode_joint(observations, last_actions);
        let out = mlp_forward(&self.params, prefix, &self.setup.net, &x, self.layout.n_agents)?;
        Ok(out.chunks(self.layout.n_actions).map(<[f64]>::to_vec).collect())
    }

    /// `[member][agent][action]`.
    pub fn all_values(&self, observations: &[Vec<f64>], last_actions: &[Option<usize>]) -> Result<Vec<Vec<Vec<f64>>>, DeepError> {
        (0..self.members()).map(|k| self.member_values(k, observations, last_actions)).collect()
    }

    /// Exploration: ε-greedy for single networks, ensemble UCB otherwise.
    pub fn act_training<R: Rng + ?Sized>(&self, observations: &[Vec<f64>], last_actions: &[Option<usize>], t: u64, rng: &mut R) -> Result<Vec<usize>, DeepError> {
        let values = self.all_values(observations, last_actions)?;
        let n = self.layout.n_agents;
        if self.algorithm.is_emax() {
            Ok((0..n)
                .map(|i| {
                    let rows: Vec<&[f64]> = values.iter().map(|m| m[i].as_slice()).collect();
                    ucb_action(&rows, self.config.beta, rng)
                })
                .collect())
        } else {
            let eps = self.config.epsilon_schedule().value(t);
            Ok((0..n).map(|i| epsilon_greedy_action(&values[0][i], eps, rng)).collect())
        }
    }

    /// Evaluation: uniform with probability `epsilon`, else the chosen policy.
    pub fn act_evaluation<R: Rng + ?Sized>(
        &self,
        observations: &[Vec<f64>],
        last_actions: &[Option<usize>],
        policy: EvalPolicy,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>, DeepError> {
        let n = self.layout.n_agents;
        let values = match policy {
            EvalPolicy::Vote => self.all_values(observations, last_actions)?,
            EvalPolicy::Member(k) => {
                if k >= self.members() {
                    return Err(DeepError::InvalidSetting {
                        field: "eval_member",
                        reason: format!("member {k} does not exist (ensemble of {})", self.members()),
                    });
                }
                vec![self.member_values(k, observations, last_actions)?]
            }
        };
        Ok((0..n)
            .map(|i| {
                if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                    return rng.random_range(0..self.layout.n_actions);
                }
                if values.len() == 1 {
                    argmax_tie_break(&values[0][i], rng)
                } else {
                    let rows: Vec<&[f64]> = values.iter().map(|m| m[i].as_slice()).collect();
                    majority_vote_action(&rows, rng)
                }
            })
            .collect())
    }

    /// One gradient step on freshly sampled batches (one per member).
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats, DeepError> {
        let batches = match self.setup.targets {
            TargetKind::TargetNetwork => 1,
            TargetKind::EnsembleMean => self.members(),
        };
        let indices = buffer.sample_bootstrapped(batches, self.config.batch_size, rng)?;
        let batches: Vec<Batch> = indices
            .iter()
            .map(|ix| Batch::from_buffer(buffer, ix, &self.layout, self.config.gamma))
            .collect();
        self.update_on(&batches)
    }

    /// One gradient step on the given batches.
    pub fn update_on(&mut self, batches: &[Batch]) -> Result<UpdateStats, DeepError> {
        let mut g = Graph::new();
        let out = build_loss(&mut g, &self.params, &self.setup, batches, None)?;
        let loss = g.value(out.loss)?.data()[0];
        let mut grads = g.backward(out.loss)?;
        grads.retain(|name| !name.starts_with(TARGET_PREFIX));
        let grad_norm = clip_global_norm(&mut grads, self.config.max_grad_norm)?;
        self.adam.step(&mut self.params, &grads)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_update_interval) {
            self.sync_targets();
        }
        Ok(UpdateStats {
            loss,
            grad_norm,
            grad_norm_clipped: grad_norm.min(self.config.max_grad_norm),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::replay::Transition;
    use crate::env::{EnvConfig, Environment, LbfConfig};

    fn lbf_spec() -> EnvSpec {
        EnvConfig::Lbf(LbfConfig::default()).build(stream(0, "env")).unwrap().spec()
    }

    fn small(algorithm: DeepAlgorithm) -> DeepLearner {
        let config = DeepConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            buffer_capacity: 64,
            ensemble_size: 3,
            target_update_interval: 4,
            mixing_embed: 4,
            hypernet_embed: 8,
            ..DeepConfig::default()
        };
        DeepLearner::new(algorithm, config, &lbf_spec(), 1).unwrap()
    }

    fn filled_buffer(learner: &DeepLearner) -> ReplayBuffer {
        let mut env = EnvConfig::Lbf(LbfConfig::default()).build(stream(3, "env")).unwrap();
        let mut buf = ReplayBuffer::new(64, 2, learner.layout.obs_dim);
        let mut rng = stream(3, "act");
        let mut out = env.reset().unwrap();
        let mut last = vec![None, None];
        for _ in 0..40 {
            let a = vec![rng.random_range(0..6), rng.random_range(0..6)];
            let next = env.step(&a).unwrap();
            buf.push(&Transition {
                observations: out.observations.clone(),
                last_actions: last.clone(),
                actions: a.clone(),
                reward: next.reward,
                next_observations: next.observations.clone(),
                terminal: next.terminal(),
            });
            last = a.into_iter().map(Some).collect();
            out = next;
            if out.done {
                out = env.reset().unwrap();
                last = vec![None, None];
            }
        }
        buf
    }

    #[test]
    fn ensemble_size_validated() {
        let config = DeepConfig {
            ensemble_size: 1,
            ..DeepConfig::default()
        };
        assert!(matches!(
            DeepLearner::new(DeepAlgorithm::IdqnEmax, config.clone(), &lbf_spec(), 0),
            Err(DeepError::InvalidSetting { field: "ensemble_size", .. })
        ));
        assert!(DeepLearner::new(DeepAlgorithm::Idqn, config, &lbf_spec(), 0).is_ok());
    }

    #[test]
    fn members_are_not_aliased() {
        let l = small(DeepAlgorithm::IdqnEmax);
        assert_ne!(l.params.get("q0.w0"), l.params.get("q1.w0"));
        assert!(l.params.get("target.q0.w0").is_none());
        let b = small(DeepAlgorithm::Qmix);
        assert_eq!(b.params.get("q0.w0"), b.params.get("target.q0.w0"));
        assert_eq!(b.params.get("mixer.value.w0"), b.params.get("target.mixer.value.w0"));
    }

    #[test]
    fn target_sync_cadence() {
        let mut l = small(DeepAlgorithm::Vdn);
        let buf = filled_buffer(&l);
        let mut rng = stream(0, "replay");
        for step in 1..=4 {
            let before = l.params.get("target.q0.w0").unwrap().clone();
            l.update(&buf, &mut rng).unwrap();
            let after = l.params.get("target.q0.w0").unwrap();
            if step < 4 {
                assert_eq!(&before, after, "target moved between syncs");
                assert_ne!(l.params.get("q0.w0").unwrap(), after);
            } else {
                assert_eq!(l.params.get("q0.w0").unwrap(), after);
            }
        }
    }

    #[test]
    fn every_algorithm_updates() {
        for algo in DeepAlgorithm::ALL {
            let mut l = small(algo);
            let buf = filled_buffer(&l);
            let stats = l.update(&buf, &mut stream(0, "replay")).unwrap();
            assert!(stats.loss.is_finite() && stats.grad_norm.is_finite(), "{algo:?}");
            assert!(l.params.iter().all(|(_, t)| t.is_finite()));
            assert_eq!(l.adam.step_count(), 1);
        }
    }

    #[test]
    fn baseline_exploration_follows_schedule() {
        let l = small(DeepAlgorithm::Idqn);
        let obs = vec![vec![0.0; 9], vec![1.0; 9]];
        let last = vec![None, None];
        let mut rng = stream(0, "explore");
        let mut counts = [0usize; 6];
        for _ in 0..6000 {
            counts[l.act_training(&obs, &last, 0, &mut rng).unwrap()[0]] += 1;
        }
        assert!(counts.iter().all(|&c| c > 850), "{counts:?}");
        let greedy = argmax_tie_break(&l.member_values(0, &obs, &last).unwrap()[0], &mut rng);
        let mut hits = 0;
        for _ in 0..10_000 {
            if l.act_training(&obs, &last, 10_000_000, &mut rng).unwrap()[0] == greedy {
                hits += 1;
            }
        }
        // 0.95 + 0.05 / 6 greedy mass.
        let p = 0.95 + 0.05 / 6.0;
        assert!((hits as f64 / 1e4 - p).abs() < 3.0 * (p * (1.0 - p) / 1e4f64).sqrt());
    }

    #[test]
    fn evaluation_epsilon_rate() {
        let l = small(DeepAlgorithm::IdqnEmax);
        let obs = vec![vec![0.3; 9], vec![0.7; 9]];
        let last = vec![Some(1), None];
        let mut rng = stream(0, "eval");
        let vote = l.act_evaluation(&obs, &last, EvalPolicy::Vote, 0.0, &mut rng).unwrap();
        let mut differs = 0;
        for _ in 0..10_000 {
            if l.act_evaluation(&obs, &last, EvalPolicy::Vote, 0.05, &mut rng).unwrap()[0] != vote[0] {
                differs += 1;
            }
        }
        // Uniform 5% of the time, landing off the vote with probability 5/6.
        let p = 0.05 * 5.0 / 6.0;
        assert!((differs as f64 / 1e4 - p).abs() < 3.0 * (p * (1.0 - p) / 1e4f64).sqrt(), "{differs}");
        assert!(l.act_evaluation(&obs, &last, EvalPolicy::Member(3), 0.0, &mut rng).is_err());
    }
}
