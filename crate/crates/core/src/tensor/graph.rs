use std::collections::BTreeMap;

use super::kernels::gemm;
use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Parameter,
    Input,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Abs,
    Elu,
    Square,
    Sum,
    Mean,
    Scale,
    Concat,
    SelectRows,
    SelectCols,
    Gather,
    StopGradient,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Parameter => "parameter",
            OpKind::Input => "input",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Abs => "abs",
            OpKind::Elu => "elu",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Scale => "scale",
            OpKind::Concat => "concat",
            OpKind::SelectRows => "select_rows",
            OpKind::SelectCols => "select_cols",
            OpKind::Gather => "gather",
            OpKind::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Parameter(String),
    Input(String),
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Elu(NodeId),
    Square(NodeId),
    Sum { input: NodeId, axis: Option<usize> },
    Mean(NodeId),
    Scale(NodeId, f64),
    Concat { inputs: Vec<NodeId>, axis: usize },
    SelectRows { input: NodeId, indices: Vec<usize> },
    SelectCols { input: NodeId, start: usize, len: usize },
    Gather { input: NodeId, indices: Vec<usize> },
    StopGradient(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Parameter(_) => OpKind::Parameter,
            Op::Input(_) => OpKind::Input,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Relu(_) => OpKind::Relu,
            Op::Abs(_) => OpKind::Abs,
            Op::Elu(_) => OpKind::Elu,
            Op::Square(_) => OpKind::Square,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Scale(..) => OpKind::Scale,
            Op::Concat { .. } => OpKind::Concat,
            Op::SelectRows { .. } => OpKind::SelectRows,
            Op::SelectCols { .. } => OpKind::SelectCols,
            Op::Gather { .. } => OpKind::Gather,
            Op::StopGradient(_) => OpKind::StopGradient,
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Parameter(_) | Op::Input(_) | Op::Constant => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Relu(a) | Op::Abs(a) | Op::Elu(a) | Op::Square(a) | Op::Mean(a) | Op::StopGradient(a) => vec![*a],
            Op::Scale(a, _) => vec![*a],
            Op::Sum { input, .. }
            | Op::SelectRows { input, .. }
            | Op::SelectCols { input, .. }
            | Op::Gather { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter node, by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn new(map: BTreeMap<String, Tensor>) -> Self {
        Self(map)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
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

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.0.insert(name.into(), grad);
    }

    /// Keeps only entries whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.0.retain(|k, _| keep(k));
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor> {
        self.0
    }
}

/// A recorded computation.
///
/// Nodes are evaluated eagerly as they are recorded whenever all of their
/// inputs hold values. Leaves created with [`Graph::placeholder`] have no
/// value until [`Graph::forward`] binds them, which re-evaluates every node
/// in recording order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf. Registering the same name twice returns
    /// the first node, so a network applied to several inputs shares one
    /// gradient accumulator.
    pub fn parameter(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(id) = self.params.get(name) {
            return *id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Parameter(name.to_string()),
            shape: value.shape().to_vec(),
            value: Some(value.clone()),
            requires_grad: true,
        });
        self.params.insert(name.to_string(), id);
        id
    }

    /// Named non-trainable leaf with a value.
    pub fn input(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Input(name.to_string()),
            shape: value.shape().to_vec(),
            value: Some(value),
            requires_grad: false,
        });
        id
    }

    /// Named non-trainable leaf whose value is supplied by [`Graph::forward`].
    pub fn placeholder(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Input(name.to_string()),
            shape: shape.to_vec(),
            value: None,
            requires_grad: false,
        });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Constant,
            shape: value.shape().to_vec(),
            value: Some(value),
            requires_grad: false,
        });
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    /// Elementwise sum with numpy-style broadcasting (a bias row broadcasts
    /// over the leading axis).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }

    pub fn elu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Elu(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }

    /// Sum of all elements (scalar result).
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum { input: a, axis: None })
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::Sum { input: a, axis: Some(axis) })
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.push(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    /// Rows of `a` (indices may repeat).
    pub fn select_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::SelectRows { input: a, indices })
    }

    /// Contiguous column block `[start, start + len)` of a matrix.
    pub fn select_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SelectCols { input: a, start, len })
    }

    /// Picks entry `indices[r]` from row `r`; result is `[rows, 1]`.
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Gather { input: a, indices })
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::StopGradient(a))
    }

    pub fn kind(&self, id: NodeId) -> Result<OpKind> {
        self.node(id).map(|n| n.op.kind())
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        self.node(id).map(|n| n.shape.as_slice())
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.node(id)?
            .value
            .as_ref()
            .ok_or(TensorError::NotEvaluated { node: id.0 })
    }

    pub fn parameter_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Rebinds named leaves and re-evaluates every node in recording order.
    ///
    /// Leaves absent from `bindings` keep their current values; a leaf with
    /// no value at all is an error.
    pub fn forward(&mut self, bindings: &BTreeMap<String, Tensor>) -> Result<()> {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            match &op {
                Op::Parameter(name) | Op::Input(name) => {
                    if let Some(t) = bindings.get(name) {
                        if t.shape() != self.nodes[i].shape.as_slice() {
                            return Err(TensorError::ShapeMismatch {
                                node: i,
                                op: op.kind().name(),
                                detail: format!(
                                    "binding `{name}` has shape {:?}, expected {:?}",
                                    t.shape(),
                                    self.nodes[i].shape
                                ),
                            });
                        }
                        self.nodes[i].value = Some(t.clone());
                    } else if self.nodes[i].value.is_none() {
                        return Err(TensorError::Unbound(name.clone()));
                    }
                }
                Op::Constant => {}
                _ => {
                    let v = self.compute(i, &op)?;
                    self.nodes[i].value = Some(v);
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// parameter node. Parameters off the path to `loss` (or only reachable
    /// through a stop-gradient) receive zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = self.node(loss)?;
        let loss_value = loss_node
            .value
            .as_ref()
            .ok_or(TensorError::NotEvaluated { node: loss.0 })?;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                node: loss.0,
                shape: loss_node.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(&loss_node.shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Parameter(_) = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = grads
                .get(id.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(&self.nodes[id.0].shape));
            out.insert(name.clone(), g);
        }
        Ok(Gradients(out))
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode(id.0))
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let index = self.nodes.len();
        let kind = op.kind();
        let inputs = op.inputs();
        for input in &inputs {
            if input.0 >= index {
                return Err(TensorError::UnknownNode(input.0));
            }
        }
        let shape = self.infer_shape(&op).map_err(|detail| TensorError::ShapeMismatch {
            node: index,
            op: kind.name(),
            detail,
        })?;
        let requires_grad = kind != OpKind::StopGradient && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let value = if inputs.iter().all(|i| self.nodes[i.0].value.is_some()) {
            Some(self.compute(index, &op)?)
        } else {
            None
        };
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Ok(NodeId(index))
    }

    fn infer_shape(&self, op: &Op) -> std::result::Result<Vec<usize>, String> {
        let s = |id: &NodeId| self.nodes[id.0].shape.clone();
        match op {
            Op::Parameter(_) | Op::Input(_) | Op::Constant => unreachable!("leaves are not pushed"),
            Op::MatMul(a, b) => {
                let (sa, sb) = (s(a), s(b));
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(format!("cannot multiply {sa:?} by {sb:?}"));
                }
                Ok(vec![sa[0], sb[1]])
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => broadcast_shape(&s(a), &s(b)),
            Op::Relu(a) | Op::Abs(a) | Op::Elu(a) | Op::Square(a) | Op::Scale(a, _) | Op::StopGradient(a) => Ok(s(a)),
            Op::Sum { input, axis } => {
                let si = s(input);
                match axis {
                    None => Ok(Vec::new()),
                    Some(ax) if *ax < si.len() => {
                        let mut out = si;
                        out[*ax] = 1;
                        Ok(out)
                    }
                    Some(ax) => Err(format!("axis {ax} out of range for {si:?}")),
                }
            }
            Op::Mean(_) => Ok(Vec::new()),
            Op::Concat { inputs, axis } => {
                let first = inputs.first().ok_or("concat of zero tensors")?;
                let mut out = s(first);
                if *axis >= out.len() {
                    return Err(format!("axis {axis} out of range for {out:?}"));
                }
                for other in &inputs[1..] {
                    let so = s(other);
                    if so.len() != out.len() || (0..so.len()).any(|d| d != *axis && so[d] != out[d]) {
                        return Err(format!("cannot concat {so:?} onto {out:?} along axis {axis}"));
                    }
                    out[*axis] += so[*axis];
                }
                Ok(out)
            }
            Op::SelectRows { input, indices } => {
                let mut si = s(input);
                if si.is_empty() {
                    return Err("select_rows on a scalar".into());
                }
                if let Some(bad) = indices.iter().find(|&&r| r >= si[0]) {
                    return Err(format!("row {bad} out of range for {si:?}"));
                }
                si[0] = indices.len();
                Ok(si)
            }
            Op::SelectCols { input, start, len } => {
                let si = s(input);
                if si.len() != 2 || start + len > si[1] {
                    return Err(format!("columns {start}..{} out of range for {si:?}", start + len));
                }
                Ok(vec![si[0], *len])
            }
            Op::Gather { input, indices } => {
                let si = s(input);
                if si.len() != 2 || indices.len() != si[0] {
                    return Err(format!("gather of {} indices from {si:?}", indices.len()));
                }
                if let Some(bad) = indices.iter().find(|&&c| c >= si[1]) {
                    return Err(format!("column {bad} out of range for {si:?}"));
                }
                Ok(vec![si[0], 1])
            }
        }
    }

    fn val(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or(TensorError::NotEvaluated { node: id.0 })
    }

    fn compute(&self, index: usize, op: &Op) -> Result<Tensor> {
        let out = match op {
            Op::Parameter(_) | Op::Input(_) | Op::Constant => unreachable!("leaves are not computed"),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a)?, self.val(*b)?);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut data = vec![0.0; m * n];
                gemm(m, k, n, ta.data(), false, tb.data(), false, &mut data);
                Tensor::matrix(m, n, data)
            }
            Op::Add(a, b) => broadcast_binary(self.val(*a)?, self.val(*b)?, |x, y| x + y),
            Op::Sub(a, b) => broadcast_binary(self.val(*a)?, self.val(*b)?, |x, y| x - y),
            Op::Mul(a, b) => broadcast_binary(self.val(*a)?, self.val(*b)?, |x, y| x * y),
            Op::Relu(a) => self.val(*a)?.map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Abs(a) => self.val(*a)?.map(f64::abs),
            Op::Elu(a) => self.val(*a)?.map(|x| if x > 0.0 { x } else { x.exp_m1() }),
            Op::Square(a) => self.val(*a)?.map(|x| x * x),
            Op::Scale(a, c) => {
                let c = *c;
                self.val(*a)?.map(|x| x * c)
            }
            Op::StopGradient(a) => self.val(*a)?.clone(),
            Op::Sum { input, axis } => {
                let t = self.val(*input)?;
                match axis {
                    None => Tensor::scalar(t.sum()),
                    Some(ax) => sum_axis(t, *ax),
                }
            }
            Op::Mean(a) => {
                let t = self.val(*a)?;
                let n = t.len().max(1) as f64;
                Tensor::scalar(t.sum() / n)
            }
            Op::Concat { inputs, axis } => {
                let parts = inputs.iter().map(|i| self.val(*i)).collect::<Result<Vec<_>>>()?;
                let mut shape = parts[0].shape().to_vec();
                shape[*axis] = parts.iter().map(|p| p.shape()[*axis]).sum();
                concat(&parts, *axis, &shape)
            }
            Op::SelectRows { input, indices } => {
                let t = self.val(*input)?;
                let width: usize = t.shape()[1..].iter().product();
                let mut data = Vec::with_capacity(indices.len() * width);
                for &r in indices {
                    data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
                }
                let mut shape = t.shape().to_vec();
                shape[0] = indices.len();
                Tensor::new(shape, data)?
            }
            Op::SelectCols { input, start, len } => {
                let t = self.val(*input)?;
                let (rows, cols) = (t.shape()[0], t.shape()[1]);
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
                }
                Tensor::matrix(rows, *len, data)
            }
            Op::Gather { input, indices } => {
                let t = self.val(*input)?;
                let cols = t.shape()[1];
                let data = indices.iter().enumerate().map(|(r, &c)| t.data()[r * cols + c]).collect();
                Tensor::matrix(indices.len(), 1, data)
            }
        };
        if !out.is_finite() {
            return Err(TensorError::NonFinite {
                node: index,
                op: op.kind().name(),
            });
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let wants = |id: &NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Parameter(_) | Op::Input(_) | Op::Constant | Op::StopGradient(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a)?, self.val(*b)?);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da);
                    accumulate(grads, *a, Tensor::matrix(m, k, da));
                }
                if wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db);
                    accumulate(grads, *b, Tensor::matrix(k, n, db));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                if wants(a) {
                    accumulate(grads, *a, reduce_to(g, &self.nodes[a.0].shape));
                }
                if wants(b) {
                    let mut gb = reduce_to(g, &self.nodes[b.0].shape);
                    if negate {
                        gb.data_mut().iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a)?, self.val(*b)?);
                if wants(a) {
                    let prod = broadcast_binary(g, tb, |x, y| x * y);
                    accumulate(grads, *a, reduce_to(&prod, ta.shape()));
                }
                if wants(b) {
                    let prod = broadcast_binary(g, ta, |x, y| x * y);
                    accumulate(grads, *b, reduce_to(&prod, tb.shape()));
                }
            }
            Op::Relu(a) => {
                let x = self.val(*a)?;
                accumulate(grads, *a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Abs(a) => {
                let x = self.val(*a)?;
                let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                accumulate(grads, *a, zip_map(g, x, |gv, xv| gv * sign(xv)));
            }
            Op::Elu(a) => {
                let x = self.val(*a)?;
                accumulate(grads, *a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { gv * xv.exp() }));
            }
            Op::Square(a) => {
                let x = self.val(*a)?;
                accumulate(grads, *a, zip_map(g, x, |gv, xv| 2.0 * gv * xv));
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::Sum { input, axis } => {
                let shape = &self.nodes[input.0].shape;
                let expanded = match axis {
                    None => Tensor::full(shape, g.data()[0]),
                    Some(_) => broadcast_binary(&Tensor::zeros(shape), g, |_, y| y),
                };
                accumulate(grads, *input, expanded);
            }
            Op::Mean(a) => {
                let shape = &self.nodes[a.0].shape;
                let n = shape.iter().product::<usize>().max(1) as f64;
                accumulate(grads, *a, Tensor::full(shape, g.data()[0] / n));
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for input in inputs {
                    let shape = &self.nodes[input.0].shape;
                    let width = shape[*axis];
                    if wants(input) {
                        accumulate(grads, *input, slice_axis(g, *axis, offset, width));
                    }
                    offset += width;
                }
            }
            Op::SelectRows { input, indices } => {
                let shape = &self.nodes[input.0].shape;
                let width: usize = shape[1..].iter().product();
                let mut dx = Tensor::zeros(shape);
                for (k, &r) in indices.iter().enumerate() {
                    let src = &g.data()[k * width..(k + 1) * width];
                    for (d, s) in dx.data_mut()[r * width..(r + 1) * width].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                accumulate(grads, *input, dx);
            }
            Op::SelectCols { input, start, len } => {
                let shape = &self.nodes[input.0].shape;
                let cols = shape[1];
                let mut dx = Tensor::zeros(shape);
                for r in 0..shape[0] {
                    dx.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *input, dx);
            }
            Op::Gather { input, indices } => {
                let shape = &self.nodes[input.0].shape;
                let cols = shape[1];
                let mut dx = Tensor::zeros(shape);
                for (r, &c) in indices.iter().enumerate() {
                    dx.data_mut()[r * cols + c] += g.data()[r];
                }
                accumulate(grads, *input, dx);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map of equal shapes")
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> std::result::Result<Vec<usize>, String> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` laid against `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        let od = d + rank - shape.len();
        strides[od] = if shape[d] == 1 && out[od] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Flat index into the broadcast operand for every flat output index.
fn broadcast_offsets(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let total: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    for _ in 0..total {
        offsets.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    offsets
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return zip_map(a, b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape()).expect("shapes checked at record time");
    let (ad, bd) = (a.data(), b.data());
    let total: usize = out.iter().product();
    // Fast path: `b` is a trailing block of `a` (bias rows).
    if out == a.shape() && a.shape().ends_with(b.shape()) && !b.is_empty() {
        let w = b.len();
        let data = (0..total).map(|i| f(ad[i], bd[i % w])).collect();
        return Tensor::new(out, data).expect("broadcast length");
    }
    let oa = broadcast_offsets(a.shape(), &out);
    let ob = broadcast_offsets(b.shape(), &out);
    let data = (0..total).map(|i| f(ad[oa[i]], bd[ob[i]])).collect();
    Tensor::new(out, data).expect("broadcast length")
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let n = out.len();
    if g.shape().ends_with(shape) && n > 0 {
        for (i, v) in g.data().iter().enumerate() {
            out.data_mut()[i % n] += v;
        }
        return out;
    }
    let offsets = broadcast_offsets(shape, g.shape());
    for (i, v) in g.data().iter().enumerate() {
        out.data_mut()[offsets[i]] += v;
    }
    out
}

fn sum_axis(t: &Tensor, axis: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                data[o * inner + i] += t.data()[(o * n + k) * inner + i];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    Tensor::new(out_shape, data).expect("sum_axis length")
}

fn concat(parts: &[&Tensor], axis: usize, out_shape: &[usize]) -> Tensor {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(out_shape.to_vec(), data).expect("concat length")
}

fn slice_axis(t: &Tensor, axis: usize, start: usize, width: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut data = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let base = o * n * inner;
        data.extend_from_slice(&t.data()[base + start * inner..base + (start + width) * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = width;
    Tensor::new(out_shape, data).expect("slice length")
}
