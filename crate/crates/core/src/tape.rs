//! Define-by-run reverse-mode differentiation.
//!
//! Every forward operation appends a node to the [`Tape`]; node ids are
//! handed out as [`Var`] handles. Because a node can only reference nodes
//! that already exist, the tape is always in topological order and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Param,
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `mul * x + add`
    Affine(Var, f64),
    /// matrix plus a broadcast row vector
    AddRow(Var, Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    /// Heaviside forward (or sigmoid when `smooth`), sigmoid-shaped derivative.
    Spike { x: Var, slope: f64 },
    LogSoftmax(Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Elementwise operation kinds exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sigmoid,
    Exp,
    Log,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid surrogate `σ(slope·x)` with respect to `x`.
pub fn surrogate_grad(x: f64, slope: f64) -> f64 {
    let s = sigmoid(slope * x);
    slope * s * (1.0 - s)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Param, t)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    /// Copies the current value of `v` into a new constant, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let out = self.value(a).map(|x| mul * x + add);
        self.push(Op::Affine(a, mul), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("input {bad} is not strictly positive"),
            });
        }
        let out = x.map(f64::ln);
        Ok(self.push(Op::Log(a), out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Spike nonlinearity: forward is the step `x >= 0`, backward is the
    /// derivative of `σ(slope·x)`. With `smooth` the forward is `σ(slope·x)`
    /// too, which makes the op exactly differentiable.
    pub fn spike(&mut self, x: Var, slope: f64, smooth: bool) -> Var {
        let out = if smooth {
            self.value(x).map(|v| sigmoid(slope * v))
        } else {
            self.value(x).map(|v| if v >= 0.0 { 1.0 } else { 0.0 })
        };
        self.push(Op::Spike { x, slope }, out)
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = self.value(a).log_softmax_rows();
        self.push(Op::LogSoftmax(a), out)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Arithmetic mean of same-shaped nodes, accumulated left to right.
    pub fn mean_of(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("mean_of needs at least one input".into()))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(self.scale(acc, 1.0 / vars.len() as f64))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let rhs = || b.ok_or_else(|| Error::Contract(format!("{kind:?} needs two operands")));
        match kind {
            Elementwise::Add => self.add(a, rhs()?),
            Elementwise::Sub => self.sub(a, rhs()?),
            Elementwise::Mul => self.mul(a, rhs()?),
            Elementwise::Scale(c) => Ok(self.scale(a, c)),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Exp => Ok(self.exp(a)),
            Elementwise::Log => self.log(a),
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::ones(self.value(root).shape()));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Param | Op::Const => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose()?)?;
                    let db = self.value(a).transpose()?.matmul(&g)?;
                    accumulate(&mut adj, a, da)?;
                    accumulate(&mut adj, b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone())?;
                    accumulate(&mut adj, b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g.clone())?;
                    accumulate(&mut adj, b, g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(b))?;
                    let db = g.mul(self.value(a))?;
                    accumulate(&mut adj, a, da)?;
                    accumulate(&mut adj, b, db)?;
                }
                Op::Affine(a, mul) => accumulate(&mut adj, a, g.scale(mul))?,
                Op::AddRow(a, row) => {
                    let drow = g.sum_rows().reshape(self.value(row).shape())?;
                    accumulate(&mut adj, a, g.clone())?;
                    accumulate(&mut adj, row, drow)?;
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_with(&node.value, "sigmoid", |g, s| g * s * (1.0 - s))?;
                    accumulate(&mut adj, a, d)?;
                }
                Op::Exp(a) => accumulate(&mut adj, a, g.mul(&node.value)?)?,
                Op::Log(a) => {
                    let d = g.zip_with(self.value(a), "log", |g, x| g / x)?;
                    accumulate(&mut adj, a, d)?;
                }
                Op::Relu(a) => {
                    let d = g.zip_with(self.value(a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut adj, a, d)?;
                }
                Op::Spike { x, slope } => {
                    let d = g.zip_with(self.value(x), "spike", |g, v| g * surrogate_grad(v, slope))?;
                    accumulate(&mut adj, x, d)?;
                }
                Op::LogSoftmax(a) => {
                    // dx = dy - softmax * rowsum(dy)
                    let n = node.value.cols();
                    let mut d = g.clone();
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(node.value.data().chunks(n)) {
                        let s: f64 = drow.iter().sum();
                        for (dx, y) in drow.iter_mut().zip(yrow) {
                            *dx -= y.exp() * s;
                        }
                    }
                    accumulate(&mut adj, a, d)?;
                }
                Op::Sum(a) => {
                    let g0 = g.data()[0];
                    accumulate(&mut adj, a, Tensor::full(self.value(a).shape(), g0))?;
                }
            }
            adj[i] = Some(g);
        }

        Ok(Gradients { adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, with zeros of `like`'s shape when unreachable.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
