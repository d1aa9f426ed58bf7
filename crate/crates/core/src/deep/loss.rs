//! TD losses for independent learners and value decomposition, with either
//! delayed target networks or ensemble-mean targets.
//!
//! Batch rows are agent-major: row `i * B + b` holds agent `i` of sample `b`.

use super::mixer::{MixerKind, QmixSpec};
use super::net::{mlp_graph, MlpSpec};
use super::replay::ReplayBuffer;
use crate::rng::argmax_first;
use crate::tensor::{Graph, NodeId, ParamStore, Result, Tensor, TensorError};

/// How a network input is assembled from an agent's local view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub agent_id: bool,
}

impl InputLayout {
    /// Observation, one-hot previous action, then optionally one-hot agent id.
    pub fn dim(&self) -> usize {
        self.obs_dim + self.n_actions + if self.agent_id { self.n_agents } else { 0 }
    }

    pub fn state_dim(&self) -> usize {
        self.n_agents * self.obs_dim
    }

    pub fn encode_into(&self, out: &mut Vec<f64>, obs: &[f64], last_action: Option<usize>, agent: usize) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        out.extend_from_slice(obs);
        let start = out.len();
        out.resize(start + self.n_actions, 0.0);
        if let Some(a) = last_action {
            out[start + a] = 1.0;
        }
        if self.agent_id {
            let start = out.len();
            out.resize(start + self.n_agents, 0.0);
            out[start + agent] = 1.0;
        }
    }

    /// `[N, dim]` inputs for one joint observation.
    pub fn encode_joint(&self, observations: &[Vec<f64>], last_actions: &[Option<usize>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_agents * self.dim());
        for i in 0..self.n_agents {
            self.encode_into(&mut out, &observations[i], last_actions[i], i);
        }
        out
    }
}

/// A sampled batch laid out for the loss graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub n_agents: usize,
    /// `[N * B, dim]`.
    pub inputs: Tensor,
    pub next_inputs: Tensor,
    /// Taken action per row of `inputs`.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `gamma` for non-terminal samples, 0 for terminal ones.
    pub discounts: Vec<f64>,
    /// `[B, N * obs_dim]` joint observations standing in for the state.
    pub states: Tensor,
    pub next_states: Tensor,
}

impl Batch {
    pub fn from_buffer(buffer: &ReplayBuffer, indices: &[usize], layout: &InputLayout, gamma: f64) -> Self {
        let (n, d, b) = (layout.n_agents, layout.obs_dim, indices.len());
        let dim = layout.dim();
        let mut inputs = Vec::with_capacity(n * b * dim);
        let mut next_inputs = Vec::with_capacity(n * b * dim);
        let mut actions = Vec::with_capacity(n * b);
        for i in 0..n {
            for &t in indices {
                let o = &buffer.obs[(t * n + i) * d..(t * n + i + 1) * d];
                let no = &buffer.next_obs[(t * n + i) * d..(t * n + i + 1) * d];
                let last = buffer.last_actions[t * n + i];
                let act = buffer.actions[t * n + i];
                layout.encode_into(&mut inputs, o, (last != usize::MAX).then_some(last), i);
                layout.encode_into(&mut next_inputs, no, Some(act), i);
                actions.push(act);
            }
        }
        let mut states = Vec::with_capacity(b * n * d);
        let mut next_states = Vec::with_capacity(b * n * d);
        for &t in indices {
            states.extend_from_slice(&buffer.obs[t * n * d..(t + 1) * n * d]);
            next_states.extend_from_slice(&buffer.next_obs[t * n * d..(t + 1) * n * d]);
        }
        Self {
            size: b,
            n_agents: n,
            inputs: Tensor::matrix(n * b, dim, inputs),
            next_inputs: Tensor::matrix(n * b, dim, next_inputs),
            actions,
            rewards: indices.iter().map(|&t| buffer.rewards[t]).collect(),
            discounts: indices.iter().map(|&t| if buffer.terminal[t] { 0.0 } else { gamma }).collect(),
            states: Tensor::matrix(b, n * d, states),
            next_states: Tensor::matrix(b, n * d, next_states),
        }
    }
}

/// Where bootstrap values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// A delayed copy of member 0 under the `target.` prefix.
    TargetNetwork,
    /// Mean of all current members, behind a stop-gradient.
    EnsembleMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSetup {
    pub net: MlpSpec,
    pub mixer: MixerKind,
    pub qmix: Option<QmixSpec>,
    pub targets: TargetKind,
    pub members: usize,
}

pub fn member_prefix(k: usize) -> String {
    format!("q{k}")
}

pub const MIXER_PREFIX: &str = "mixer";
pub const TARGET_PREFIX: &str = "target.";

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: NodeId,
    /// Per member: the TD target, `[N * B, 1]` for independent learners and
    /// `[B, 1]` for decomposed values.
    pub targets: Vec<Tensor>,
    pub member_losses: Vec<NodeId>,
}

fn agent_blocks(g: &mut Graph, column: NodeId, n: usize, b: usize) -> Result<Vec<NodeId>> {
    (0..n).map(|i| g.select_rows(column, (i * b..(i + 1) * b).collect())).collect()
}

fn greedy_values(g: &mut Graph, values: NodeId) -> Result<NodeId> {
    let v = g.value(values)?;
    let idx = (0..v.rows()).map(|r| argmax_first(v.row(r))).collect();
    g.gather(values, idx)
}

/// Bootstrap value per member: `[N * B, A]` values under stop-gradient.
fn target_values(g: &mut Graph, store: &ParamStore, setup: &LossSetup, batches: &[Batch]) -> Result<Vec<NodeId>> {
    match setup.targets {
        TargetKind::TargetNetwork => batches
            .iter()
            .map(|batch| {
                let x = g.input("next_inputs", batch.next_inputs.clone());
                let out = mlp_graph(g, store, &format!("{TARGET_PREFIX}{}", member_prefix(0)), &setup.net, x)?;
                g.stop_gradient(out)
            })
            .collect(),
        TargetKind::EnsembleMean => {
            let parts: Vec<NodeId> = batches.iter().map(|b| g.input("next_inputs", b.next_inputs.clone())).collect();
            let all = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
            let mut total = None;
            for j in 0..setup.members {
                let out = mlp_graph(g, store, &member_prefix(j), &setup.net, all)?;
                total = Some(match total {
                    None => out,
                    Some(t) => g.add(t, out)?,
                });
            }
            let mean = g.scale(total.expect("at least one member"), 1.0 / setup.members as f64)?;
            let mean = g.stop_gradient(mean)?;
            let mut offset = 0;
            let mut out = Vec::with_capacity(batches.len());
            for b in batches {
                let rows = b.inputs.rows();
                out.push(if batches.len() == 1 {
                    mean
                } else {
                    g.select_rows(mean, (offset..offset + rows).collect())?
                });
                offset += rows;
            }
            Ok(out)
        }
    }
}

/// Sum over members of each member's TD loss on its own batch.
///
/// With `frozen_targets`, the given targets replace the computed ones, which
/// makes the loss an ordinary function of the online parameters.
pub fn build_loss(
    g: &mut Graph,
    store: &ParamStore,
    setup: &LossSetup,
    batches: &[Batch],
    frozen_targets: Option<&[Tensor]>,
) -> Result<LossOutput> {
    let expected = match setup.targets {
        TargetKind::TargetNetwork => 1,
        TargetKind::EnsembleMean => setup.members,
    };
    if batches.len() != expected || batches.iter().any(|b| b.size == 0) {
        return Err(TensorError::InvalidArgument(format!(
            "expected {expected} non-empty batches, got {}",
            batches.len()
        )));
    }
    if setup.mixer == MixerKind::Qmix && setup.qmix.is_none() {
        return Err(TensorError::InvalidArgument("qmix loss needs a mixer spec".into()));
    }
    let bootstrap = match frozen_targets {
        Some(_) => Vec::new(),
        None => target_values(g, store, setup, batches)?,
    };

    let mut member_losses = Vec::with_capacity(batches.len());
    let mut targets = Vec::with_capacity(batches.len());
    for (k, batch) in batches.iter().enumerate() {
        let (n, b) = (batch.n_agents, batch.size);
        let online = match setup.targets {
            TargetKind::TargetNetwork => member_prefix(0),
            TargetKind::EnsembleMean => member_prefix(k),
        };
        let x = g.input("inputs", batch.inputs.clone());
        let q_all = mlp_graph(g, store, &online, &setup.net, x)?;
        let q_taken = g.gather(q_all, batch.actions.clone())?;

        let (rewards, discounts) = match setup.mixer {
            MixerKind::None => (
                batch.rewards.repeat(n),
                batch.discounts.repeat(n),
            ),
            _ => (batch.rewards.clone(), batch.discounts.clone()),
        };
        let rows = rewards.len();

        let y = if let Some(frozen) = frozen_targets {
            g.constant(frozen[k].clone())
        } else {
            let best = greedy_values(g, bootstrap[k])?;
            let next = match setup.mixer {
                MixerKind::None => best,
                MixerKind::Vdn => {
                    let blocks = agent_blocks(g, best, n, b)?;
                    let qs = g.concat(&blocks, 1)?;
                    g.sum_axis(qs, 1)?
                }
                MixerKind::Qmix => {
                    let spec = setup.qmix.as_ref().expect("checked above");
                    let blocks = agent_blocks(g, best, n, b)?;
                    let qs = g.concat(&blocks, 1)?;
                    let s = g.input("next_states", batch.next_states.clone());
                    let mixed = spec.graph(g, store, &format!("{TARGET_PREFIX}{MIXER_PREFIX}"), qs, s)?;
                    g.stop_gradient(mixed)?
                }
            };
            let r = g.constant(Tensor::matrix(rows, 1, rewards));
            let d = g.constant(Tensor::matrix(rows, 1, discounts));
            let disc = g.mul(d, next)?;
            let y = g.add(r, disc)?;
            g.stop_gradient(y)?
        };
        targets.push(g.value(y)?.clone());

        let prediction = match setup.mixer {
            MixerKind::None => q_taken,
            MixerKind::Vdn => {
                let blocks = agent_blocks(g, q_taken, n, b)?;
                let qs = g.concat(&blocks, 1)?;
                g.sum_axis(qs, 1)?
            }
            MixerKind::Qmix => {
                let spec = setup.qmix.as_ref().expect("checked above");
                let blocks = agent_blocks(g, q_taken, n, b)?;
                let qs = g.concat(&blocks, 1)?;
                let s = g.input("states", batch.states.clone());
                spec.graph(g, store, MIXER_PREFIX, qs, s)?
            }
        };
        let err = g.sub(prediction, y)?;
        let sq = g.square(err)?;
        let total = g.sum(sq)?;
        // Mean over the batch; for independent learners this also sums over agents.
        member_losses.push(g.scale(total, 1.0 / b as f64)?);
    }
    let mut loss = member_losses[0];
    for &l in &member_losses[1..] {
        loss = g.add(loss, l)?;
    }
    Ok(LossOutput {
        loss,
        targets,
        member_losses,
    })
}
