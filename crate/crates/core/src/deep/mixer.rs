//! Value aggregation across agents: additive (VDN) and the state-conditioned
//! monotonic mixer (QMIX).
//!
//! The QMIX mixer feeds agent values through one elu hidden layer whose
//! weights come from hypernetworks on the state. Weights pass through `abs`,
//! so the joint value never decreases when an agent's value increases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{init_mlp, mlp_graph, MlpSpec};
use crate::tensor::{Graph, NodeId, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    None,
    Vdn,
    Qmix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QmixSpec {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed: usize,
    pub hyper_embed: usize,
}

impl QmixSpec {
    fn hyper_w1(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim, &[self.hyper_embed], self.n_agents * self.embed)
    }

    fn hyper_b1(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim, &[], self.embed)
    }

    fn hyper_w2(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim, &[self.hyper_embed], self.embed)
    }

    fn value(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim, &[self.embed], 1)
    }

    pub fn init<R: Rng + ?Sized>(&self, prefix: &str, rng: &mut R, store: &mut ParamStore) {
        init_mlp(&self.hyper_w1(), &format!("{prefix}.hyper_w1"), rng, store);
        init_mlp(&self.hyper_b1(), &format!("{prefix}.hyper_b1"), rng, store);
        init_mlp(&self.hyper_w2(), &format!("{prefix}.hyper_w2"), rng, store);
        init_mlp(&self.value(), &format!("{prefix}.value"), rng, store);
    }

    /// `Q_tot` (`[B, 1]`) from agent values `qs` (`[B, N]`) and `states` (`[B, S]`).
    pub fn graph(&self, g: &mut Graph, store: &ParamStore, prefix: &str, qs: NodeId, states: NodeId) -> Result<NodeId> {
        let e = self.embed;
        let w1_raw = mlp_graph(g, store, &format!("{prefix}.hyper_w1"), &self.hyper_w1(), states)?;
        let w1 = g.abs(w1_raw)?;
        let mut hidden = mlp_graph(g, store, &format!("{prefix}.hyper_b1"), &self.hyper_b1(), states)?;
        for i in 0..self.n_agents {
            let q_i = g.select_cols(qs, i, 1)?;
            let w_i = g.select_cols(w1, i * e, e)?;
            let term = g.mul(q_i, w_i)?;
            hidden = g.add(hidden, term)?;
        }
        let hidden = g.elu(hidden)?;
        let w2_raw = mlp_graph(g, store, &format!("{prefix}.hyper_w2"), &self.hyper_w2(), states)?;
        let w2 = g.abs(w2_raw)?;
        let weighted = g.mul(hidden, w2)?;
        let mixed = g.sum_axis(weighted, 1)?;
        let v = mlp_graph(g, store, &format!("{prefix}.value"), &self.value(), states)?;
        g.add(mixed, v)
    }

    /// Evaluates the mixer on plain arrays.
    pub fn eval(&self, store: &ParamStore, prefix: &str, qs: &[f64], states: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let q = g.input("qs", Tensor::new(vec![rows, self.n_agents], qs.to_vec())?);
        let s = g.input("states", Tensor::new(vec![rows, self.state_dim], states.to_vec())?);
        let out = self.graph(&mut g, store, prefix, q, s)?;
        Ok(g.value(out)?.data().to_vec())
    }
}

/// Row-wise sum of `[B, N]` agent values into `[B, 1]`.
pub fn vdn_graph(g: &mut Graph, qs: NodeId) -> Result<NodeId> {
    g.sum_axis(qs, 1)
}
