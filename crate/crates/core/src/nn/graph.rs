//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op evaluates eagerly and records its inputs, so the node list is
//! always in topological order. [`Graph::backward`] walks it in reverse.
//! Nodes that cannot influence any input or parameter (constants, values
//! behind [`Graph::stop_gradient`]) are skipped during the reverse sweep.

use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Index of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Smallest `|x|` used in the derivative of `sign(x)·sqrt(|x|)`, which is
/// unbounded at zero.
pub const SIGNED_SQRT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Transpose(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    SignedSqrt(NodeId),
    Abs(NodeId),
    SumAll(NodeId),
    SumCols(NodeId),
    MeanAll(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a node (typically an input).
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Drops all recorded nodes. Previously issued ids become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(op, v, rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: node {} and node {} differ in shape",
            a.0,
            b.0
        );
    }

    /// A leaf whose gradient is tracked (see [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.get(id).clone(), true)
    }

    /// Copy of a parameter that does not receive gradient.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.constant(store.get(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(
            sa[1], sb[0],
            "matmul: node {} {:?} · node {} {:?}",
            a.0, sa, b.0, sb
        );
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul(a, b), v, rg)
    }

    /// `a · bᵀ`, the natural form for `x · Wᵀ` with `W` stored as `out × in`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(
            sa[1], sb[1],
            "matmul_t: node {} {:?} · node {} {:?}ᵀ",
            a.0, sa, b.0, sb
        );
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMulT(a, b), v, rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(Op::Transpose(a), v, rg)
    }

    /// Adds the `1 × n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, r: NodeId) -> NodeId {
        let (sa, sr) = (self.shape(a), self.shape(r));
        assert!(
            sr[0] == 1 && sr[1] == sa[1],
            "add_row: node {} {:?} + row node {} {:?}",
            a.0,
            sa,
            r.0,
            sr
        );
        let mut v = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..sa[0] {
            for (x, b) in v.row_mut(i).iter_mut().zip(&row) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, r]);
        self.push(Op::AddRow(a, r), v, rg)
    }

    /// Multiplies every row of `a` elementwise by the `1 × n` row `r`.
    pub fn mul_row(&mut self, a: NodeId, r: NodeId) -> NodeId {
        let (sa, sr) = (self.shape(a), self.shape(r));
        assert!(
            sr[0] == 1 && sr[1] == sa[1],
            "mul_row: node {} {:?} * row node {} {:?}",
            a.0,
            sa,
            r.0,
            sr
        );
        let mut v = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..sa[0] {
            for (x, b) in v.row_mut(i).iter_mut().zip(&row) {
                *x *= b;
            }
        }
        let rg = self.rg(&[a, r]);
        self.push(Op::MulRow(a, r), v, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// `1[x > 0]`, treated as a constant with respect to differentiation.
    pub fn step(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.constant(v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// `sign(x)·sqrt(|x|)`.
    pub fn signed_sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::SignedSqrt(a), crate::sim::signed_sqrt)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Passes the value through and blocks gradient flow into `a`.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.constant(v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::SumAll(a), v, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(Op::MeanAll(a), v, rg)
    }

    /// Row sums as an `n × 1` column.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let v = Tensor::new(t.rows(), 1, sums).expect("row sums");
        let rg = self.rg(&[a]);
        self.push(Op::SumCols(a), v, rg)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let t = self.value(a);
        assert!(
            start < end && end <= t.cols(),
            "slice_cols: {start}..{end} of node {} {:?}",
            a.0,
            t.shape()
        );
        let w = end - start;
        let mut data = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let v = Tensor::new(t.rows(), w, data).expect("slice");
        let rg = self.rg(&[a]);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0])[0];
        for p in parts {
            assert_eq!(
                self.shape(*p)[0],
                rows,
                "concat_cols: node {} has wrong row count",
                p.0
            );
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor::new(rows, cols, data).expect("concat");
        let rg = self.rg(parts);
        self.push(Op::ConcatCols(parts.to_vec()), v, rg)
    }

    /// Rows of `a` selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let t = self.value(a);
        assert!(
            idx.iter().all(|&i| i < t.rows()),
            "gather_rows: index out of range for node {}",
            a.0
        );
        let v = t.select_rows(idx);
        let rg = self.rg(&[a]);
        self.push(Op::GatherRows(a, idx.to_vec()), v, rg)
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check_node(loss)?;
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::shape(
                format!("backward from node {}", loss.0),
                &[1, 1],
                &shape,
            ));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Reverse sweep seeded with an arbitrary cotangent on `output`
    /// (a vector-Jacobian product).
    pub fn backward_with(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        self.check_node(output)?;
        let shape = self.shape(output);
        if seed.shape() != shape {
            return Err(Error::shape(
                format!("cotangent for node {}", output.0),
                &shape,
                &seed.shape(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        let mut params = ParamGrads::default();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Param(pid) = node.op {
                params.accumulate(pid, &g);
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::GraphState(format!(
                "node {} has not been evaluated (graph holds {} nodes)",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut send = |target: NodeId, contrib: Tensor| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Input | Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                send(*a, g.matmul_t(val(*b)));
                send(*b, val(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                send(*a, g.matmul(val(*b)));
                send(*b, g.t_matmul(val(*a)));
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::AddRow(a, r) => {
                send(*a, g.clone());
                send(*r, column_sums(g));
            }
            Op::MulRow(a, r) => {
                let row = val(*r).data();
                let mut ga = g.clone();
                for k in 0..ga.rows() {
                    for (x, s) in ga.row_mut(k).iter_mut().zip(row) {
                        *x *= s;
                    }
                }
                send(*a, ga);
                send(*r, column_sums(&g.zip_map(val(*a), |p, q| p * q)));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |p, q| p * q));
                send(*b, g.zip_map(val(*a), |p, q| p * q));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Tanh(a) => send(*a, g.zip_map(y, |p, t| p * (1.0 - t * t))),
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |p, s| p * s * (1.0 - s))),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |p, x| if x > 0.0 { p } else { 0.0 })),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |p, x| p * sigmoid(x))),
            Op::Exp(a) => send(*a, g.zip_map(y, |p, e| p * e)),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |p, x| p / x)),
            Op::Square(a) => send(*a, g.zip_map(val(*a), |p, x| 2.0 * p * x)),
            Op::Sin(a) => send(*a, g.zip_map(val(*a), |p, x| p * x.cos())),
            Op::Cos(a) => send(*a, g.zip_map(val(*a), |p, x| -p * x.sin())),
            Op::SignedSqrt(a) => send(
                *a,
                g.zip_map(val(*a), |p, x| {
                    p * 0.5 / x.abs().max(SIGNED_SQRT_FLOOR).sqrt()
                }),
            ),
            Op::Abs(a) => send(*a, g.zip_map(val(*a), |p, x| p * sign(x))),
            Op::SumAll(a) => {
                let s = val(*a).shape();
                send(*a, Tensor::filled(s[0], s[1], g.data()[0]));
            }
            Op::MeanAll(a) => {
                let s = val(*a).shape();
                send(
                    *a,
                    Tensor::filled(s[0], s[1], g.data()[0] / (s[0] * s[1]) as f64),
                );
            }
            Op::SumCols(a) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    ga.row_mut(r).iter_mut().for_each(|v| *v = g.data()[r]);
                }
                send(*a, ga);
            }
            Op::SliceCols(a, start, end) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    ga.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                }
                send(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let s = val(*p).shape();
                    let mut gp = Tensor::zeros(s[0], s[1]);
                    for r in 0..s[0] {
                        gp.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + s[1]]);
                    }
                    offset += s[1];
                    send(*p, gp);
                }
            }
            Op::GatherRows(a, idx) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s[0], s[1]);
                for (k, &r) in idx.iter().enumerate() {
                    for (x, v) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                        *x += v;
                    }
                }
                send(*a, ga);
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(&out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
