use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Result, Tensor, TensorError};

/// Named parameter tensors. Names are the keys used by [`Gradients`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore(BTreeMap<String, Tensor>);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    /// Like [`ParamStore::get`] but as a `Result`.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.0.get(name).ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Copies every entry whose name starts with `from` into `dst`, renamed
    /// to start with `to`.
    pub fn copy_prefix(&self, from: &str, to: &str, dst: &mut ParamStore) {
        for (name, t) in self.0.range(from.to_string()..) {
            let Some(rest) = name.strip_prefix(from) else { break };
            dst.insert(format!("{to}{rest}"), t.clone());
        }
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor> {
        self.0
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily per parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: ParamStore::new(),
            second: ParamStore::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ParamStore {
        &self.first
    }

    pub fn second_moment(&self) -> &ParamStore {
        &self.second
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, first: ParamStore, second: ParamStore) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    /// Applies one update to every parameter that has a gradient.
    ///
    /// Nothing is mutated if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(TensorError::InvalidArgument(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self.first.0.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.0.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &Gradients) -> f64 {
    grads.iter().map(|(_, g)| g.squared_norm()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
///
/// Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(TensorError::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(TensorError::NonFiniteGradient(name.clone()));
        }
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    Ok(norm)
}
