//! Feedforward networks stored as named tensors in a [`ParamStore`].
//!
//! Layer `l` of a network with prefix `p` owns `p.w{l}` (`[fan_in, fan_out]`)
//! and `p.b{l}` (`[fan_out]`). Hidden layers use relu, the output is linear.

use rand::Rng;

use crate::tensor::kernels::dense;
use crate::tensor::{Graph, NodeId, ParamStore, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
        }
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input];
        dims.extend(&self.hidden);
        dims.push(self.output);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
pub fn init_mlp<R: Rng + ?Sized>(spec: &MlpSpec, prefix: &str, rng: &mut R, store: &mut ParamStore) {
    for (l, (fan_in, fan_out)) in spec.layers().into_iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out));
        let b = Tensor::vector(draw(fan_out));
        store.insert(format!("{prefix}.w{l}"), w);
        store.insert(format!("{prefix}.b{l}"), b);
    }
}

/// Records the network on `g` applied to `x` (`[rows, input]`).
pub fn mlp_graph(g: &mut Graph, store: &ParamStore, prefix: &str, spec: &MlpSpec, x: NodeId) -> Result<NodeId> {
    let layers = spec.layers();
    let mut h = x;
    for l in 0..layers.len() {
        let wn = format!("{prefix}.w{l}");
        let bn = format!("{prefix}.b{l}");
        let w = g.parameter(&wn, store.require(&wn)?);
        let b = g.parameter(&bn, store.require(&bn)?);
        let z = g.matmul(h, w)?;
        h = g.add(z, b)?;
        if l + 1 < layers.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Same arithmetic as [`mlp_graph`] without recording anything.
pub fn mlp_forward(store: &ParamStore, prefix: &str, spec: &MlpSpec, x: &[f64], rows: usize) -> Result<Vec<f64>> {
    let layers = spec.layers();
    let mut h = x.to_vec();
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = store.require(&format!("{prefix}.w{l}"))?;
        let b = store.require(&format!("{prefix}.b{l}"))?;
        h = dense(&h, rows, w.data(), fan_in, fan_out, b.data(), l + 1 < layers.len());
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn graph_and_inference_agree_bitwise() {
        let spec = MlpSpec::new(5, &[7, 6], 3);
        let mut store = ParamStore::new();
        init_mlp(&spec, "net", &mut stream(0, "init"), &mut store);
        assert_eq!(store.num_elements(), spec.num_parameters());
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new();
        let xi = g.input("x", Tensor::matrix(4, 5, x.clone()));
        let out = mlp_graph(&mut g, &store, "net", &spec, xi).unwrap();
        let fast = mlp_forward(&store, "net", &spec, &x, 4).unwrap();
        assert_eq!(g.value(out).unwrap().data(), fast.as_slice());
        assert_eq!(g.shape(out).unwrap(), &[4, 3]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = MlpSpec::new(16, &[128], 4);
        let mut store = ParamStore::new();
        init_mlp(&spec, "q", &mut stream(1, "init"), &mut store);
        let w0 = store.get("q.w0").unwrap();
        assert!(w0.data().iter().all(|v| v.abs() < 0.25));
        let w1 = store.get("q.w1").unwrap();
        assert!(w1.data().iter().all(|v| v.abs() < 1.0 / 128f64.sqrt()));
    }
}
