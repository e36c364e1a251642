use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{sigmoid, softplus};
use super::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn node(self, g: &mut Graph, a: NodeId) -> NodeId {
        match self {
            Activation::Identity => a,
            Activation::Tanh => g.tanh(a),
            Activation::Relu => g.relu(a),
            Activation::Sigmoid => g.sigmoid(a),
            Activation::Softplus => g.softplus(a),
        }
    }

    /// `σ'(a)` as a differentiable node, given pre-activation `a` and output `y`.
    fn derivative_node(self, g: &mut Graph, a: NodeId, y: NodeId) -> Option<NodeId> {
        match self {
            Activation::Identity => None,
            Activation::Tanh => {
                let y2 = g.square(y);
                let neg = g.scale(y2, -1.0);
                Some(g.add_scalar(neg, 1.0))
            }
            Activation::Relu => Some(g.step(a)),
            Activation::Sigmoid => {
                let neg = g.scale(y, -1.0);
                let one_minus = g.add_scalar(neg, 1.0);
                Some(g.mul(y, one_minus))
            }
            Activation::Softplus => Some(g.sigmoid(a)),
        }
    }
}

/// Fully connected layer `y = σ(x·Wᵀ + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    /// Registers a layer with Glorot-uniform weights and zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        let w = store.add(
            format!("{name}.w"),
            Tensor::new(out_dim, in_dim, data).expect("weight shape"),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
            activation,
        }
    }

    fn pre_activation(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul_t(x, w);
        g.add_row(xw, b)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let a = self.pre_activation(g, store, x);
        self.activation.node(g, a)
    }

    /// Output and its directional derivative along tangent `v`.
    pub fn jvp(&self, g: &mut Graph, store: &ParamStore, x: NodeId, v: NodeId) -> (NodeId, NodeId) {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul_t(x, w);
        let a = g.add_row(xw, b);
        let y = self.activation.node(g, a);
        let va = g.matmul_t(v, w);
        let vy = match self.activation.derivative_node(g, a, y) {
            Some(d) => g.mul(d, va),
            None => va,
        };
        (y, vy)
    }

    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut a = x.matmul_t(store.get(self.w));
        let b = store.get(self.b).data();
        let act = self.activation;
        for r in 0..a.rows() {
            for (v, bias) in a.row_mut(r).iter_mut().zip(b) {
                *v = act.apply(*v + bias);
            }
        }
        a
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes = [in, h1, …, out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(
                    store,
                    &format!("{name}.{i}"),
                    sizes[i],
                    sizes[i + 1],
                    act,
                    rng,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.w, l.b])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::shape("network input", &[self.in_dim()], &[cols]));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        self.check_input(g.shape(x)[1])?;
        Ok(self.layers.iter().fold(x, |h, l| l.forward(g, store, h)))
    }

    /// Forward pass carrying the tangent `v` alongside: returns `(f(x), J_f(x)·v)`
    /// as differentiable nodes.
    pub fn jvp(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        self.check_input(g.shape(x)[1])?;
        if g.shape(v) != g.shape(x) {
            return Err(Error::shape("tangent", &g.shape(x), &g.shape(v)));
        }
        let mut h = (x, v);
        for l in &self.layers {
            h = l.jvp(g, store, h.0, h.1);
        }
        Ok(h)
    }

    /// Inference without recording a graph.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.cols())?;
        let mut h = self.layers[0].eval(store, x);
        for l in &self.layers[1..] {
            h = l.eval(store, &h);
        }
        Ok(h)
    }
}
