//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The graph is define-by-run: every operation allocates a fresh node holding
//! its value, its parents, and the rule for its local derivative. The backward
//! pass builds the gradient *as new graph nodes*, so a gradient produced with
//! `create_graph = true` can be differentiated again. That second pass is what
//! the gradient penalty needs: the penalty is a function of `∂D/∂x`, and its
//! own gradient with respect to the discriminator weights must flow through
//! the first backward pass.
//!
//! Non-smooth primitives use fixed subgradient conventions: `relu` takes 0 at
//! the kink, `leaky_relu` takes the negative-slope branch, `abs` takes 0.

mod check;
mod tensor;

pub use check::{finite_difference_check, GradOrder};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MatMul,
    Transpose,
    Exp,
    Ln,
    Sqrt,
    Square,
    Abs,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    AddScalar,
    MulScalar(f64),
    Sum,
    Mean,
    SumAxis(usize),
    BroadcastTo,
    SumTo,
    Reshape,
    Narrow { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::AddScalar => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis(_) => "sum_axis",
            Op::BroadcastTo => "broadcast_to",
            Op::SumTo => "sum_to",
            Op::Reshape => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
        }
    }
}

struct Node {
    id: u64,
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    needs_grad: bool,
}

/// A value in the computation graph. Cheap to clone (shared node).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.op.name())
            .field("shape", &self.0.value.shape())
            .field("needs_grad", &self.0.needs_grad)
            .finish()
    }
}

impl Var {
    /// A differentiable leaf (a parameter or an optimized input).
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: fresh_id(),
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            needs_grad: true,
        }))
    }

    /// A constant: gradients never flow into it.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: fresh_id(),
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            needs_grad: false,
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    /// A constant copy sharing no graph history.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn unary(&self, op: Op, value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: fresh_id(),
            value,
            op,
            parents: vec![self.clone()],
            needs_grad: self.0.needs_grad,
        }))
    }

    fn binary(&self, other: &Var, op: Op, value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: fresh_id(),
            value,
            op,
            parents: vec![self.clone(), other.clone()],
            needs_grad: self.0.needs_grad || other.0.needs_grad,
        }))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_broadcast(other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, Op::Add, v))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_broadcast(other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, Op::Sub, v))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_broadcast(other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, Op::Mul, v))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_broadcast(other.value(), "div", |a, b| a / b)?;
        Ok(self.binary(other, Op::Div, v))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let v = self.value().matmul(other.value())?;
        Ok(self.binary(other, Op::MatMul, v))
    }

    pub fn transpose(&self) -> Result<Var> {
        let v = self.value().transpose2d()?;
        Ok(self.unary(Op::Transpose, v))
    }

    pub fn neg(&self) -> Var {
        self.unary(Op::Neg, self.value().map(|x| -x))
    }

    pub fn exp(&self) -> Var {
        self.unary(Op::Exp, self.value().map(f64::exp))
    }

    pub fn ln(&self) -> Var {
        self.unary(Op::Ln, self.value().map(f64::ln))
    }

    pub fn sqrt(&self) -> Var {
        self.unary(Op::Sqrt, self.value().map(f64::sqrt))
    }

    pub fn square(&self) -> Var {
        self.unary(Op::Square, self.value().map(|x| x * x))
    }

    pub fn abs(&self) -> Var {
        self.unary(Op::Abs, self.value().map(f64::abs))
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh, self.value().map(f64::tanh))
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid, self.value().map(|x| 1.0 / (1.0 + (-x).exp())))
    }

    /// Elementwise max with zero.
    pub fn relu(&self) -> Var {
        self.unary(Op::Relu, self.value().map(|x| x.max(0.0)))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(
            Op::LeakyRelu(slope),
            self.value().map(|x| if x > 0.0 { x } else { slope * x }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(Op::AddScalar, self.value().map(|x| x + c))
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        self.unary(Op::MulScalar(c), self.value().map(|x| x * c))
    }

    /// Sum of all elements, as shape `[1]`.
    pub fn sum(&self) -> Var {
        self.unary(Op::Sum, Tensor::scalar(self.value().sum_all()))
    }

    /// Mean of all elements, as shape `[1]`.
    pub fn mean(&self) -> Var {
        self.unary(Op::Mean, Tensor::scalar(self.value().mean_all()))
    }

    /// Sum of a 2-d tensor along one axis; axis 1 yields per-row sums.
    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 2 || axis > 1 {
            return Err(Error::BadShape {
                op: "sum_axis",
                expected: "a 2-d tensor and axis in {0, 1}".to_string(),
                got: shape.to_vec(),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let data = self.value().data();
        let v = if axis == 1 {
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = data[i * n..(i + 1) * n].iter().sum();
            }
            Tensor::new(&[m], out)?
        } else {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += data[i * n + j];
                }
            }
            Tensor::new(&[n], out)?
        };
        Ok(self.unary(Op::SumAxis(axis), v))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var> {
        let extent = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::BadShape {
                op: "mean_axis",
                expected: "a 2-d tensor and axis in {0, 1}".to_string(),
                got: self.shape().to_vec(),
            })?;
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / extent as f64))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().broadcast_to(shape)?;
        Ok(self.unary(Op::BroadcastTo, v))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().sum_to(shape)?;
        Ok(self.unary(Op::SumTo, v))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(Op::Reshape, v))
    }

    /// Contiguous slice of a 2-d tensor along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 2 || axis > 1 || start + len > shape[axis] {
            return Err(Error::BadShape {
                op: "narrow",
                expected: format!("a 2-d tensor with axis-{axis} extent >= {}", start + len),
                got: shape.to_vec(),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let data = self.value().data();
        let v = if axis == 1 {
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&data[i * n + start..i * n + start + len]);
            }
            Tensor::new(&[m, len], out)?
        } else {
            Tensor::new(&[len, n], data[start * n..(start + len) * n].to_vec())?
        };
        Ok(self.unary(Op::Narrow { axis, start, len }, v))
    }

    /// Concatenates 2-d tensors along `axis`.
    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::BadShape {
                op: "concat",
                expected: "at least one part and axis in {0, 1}".to_string(),
                got: vec![parts.len(), axis],
            });
        }
        let first = parts[0].shape().to_vec();
        if first.len() != 2 {
            return Err(Error::BadShape {
                op: "concat",
                expected: "2-d tensors".to_string(),
                got: first,
            });
        }
        let fixed = 1 - axis;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[fixed] != first[fixed] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let v = if axis == 0 {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(p.value().data());
            }
            Tensor::new(&[total, first[1]], data)?
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    let n = p.shape()[1];
                    data.extend_from_slice(&p.value().data()[i * n..(i + 1) * n]);
                }
            }
            Tensor::new(&[rows, total], data)?
        };
        Ok(Var(Rc::new(Node {
            id: fresh_id(),
            value: v,
            op: Op::Concat { axis },
            parents: parts.to_vec(),
            needs_grad: parts.iter().any(|p| p.0.needs_grad),
        })))
    }

    /// Sum of absolute values.
    pub fn l1_norm(&self) -> Var {
        self.abs().sum()
    }

    /// Euclidean norm of all elements.
    pub fn l2_norm(&self) -> Var {
        self.square().sum().sqrt()
    }

    /// Per-row Euclidean norms of a 2-d tensor.
    pub fn l2_norm_rows(&self) -> Result<Var> {
        Ok(self.square().sum_axis(1)?.sqrt())
    }

    /// Adjoint contributions to each parent, expressed as graph operations so
    /// the result stays differentiable.
    fn backward(&self, adj: &Var) -> Result<Vec<(usize, Var)>> {
        let parents = &self.0.parents;
        let out = match &self.0.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![
                (0, adj.sum_to(parents[0].shape())?),
                (1, adj.sum_to(parents[1].shape())?),
            ],
            Op::Sub => vec![
                (0, adj.sum_to(parents[0].shape())?),
                (1, adj.neg().sum_to(parents[1].shape())?),
            ],
            Op::Mul => vec![
                (0, adj.mul(&parents[1])?.sum_to(parents[0].shape())?),
                (1, adj.mul(&parents[0])?.sum_to(parents[1].shape())?),
            ],
            Op::Div => {
                let da = adj.div(&parents[1])?.sum_to(parents[0].shape())?;
                // d(a/b)/db = -a/b^2 = -(a/b)/b
                let db = adj
                    .mul(self)?
                    .div(&parents[1])?
                    .neg()
                    .sum_to(parents[1].shape())?;
                vec![(0, da), (1, db)]
            }
            Op::Neg => vec![(0, adj.neg())],
            Op::MatMul => vec![
                (0, adj.matmul(&parents[1].transpose()?)?),
                (1, parents[0].transpose()?.matmul(adj)?),
            ],
            Op::Transpose => vec![(0, adj.transpose()?)],
            Op::Exp => vec![(0, adj.mul(self)?)],
            Op::Ln => vec![(0, adj.div(&parents[0])?)],
            Op::Sqrt => vec![(0, adj.div(&self.mul_scalar(2.0))?)],
            Op::Square => vec![(0, adj.mul(&parents[0])?.mul_scalar(2.0))],
            Op::Abs => {
                let sign = Var::constant(parents[0].value().map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }));
                vec![(0, adj.mul(&sign)?)]
            }
            Op::Tanh => {
                let one_minus_sq = self.square().neg().add_scalar(1.0);
                vec![(0, adj.mul(&one_minus_sq)?)]
            }
            Op::Sigmoid => {
                let deriv = self.mul(&self.neg().add_scalar(1.0))?;
                vec![(0, adj.mul(&deriv)?)]
            }
            Op::Relu => {
                let mask = Var::constant(
                    parents[0]
                        .value()
                        .map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
                );
                vec![(0, adj.mul(&mask)?)]
            }
            Op::LeakyRelu(slope) => {
                let s = *slope;
                let mask = Var::constant(
                    parents[0]
                        .value()
                        .map(|x| if x > 0.0 { 1.0 } else { s }),
                );
                vec![(0, adj.mul(&mask)?)]
            }
            Op::AddScalar => vec![(0, adj.clone())],
            Op::MulScalar(c) => vec![(0, adj.mul_scalar(*c))],
            Op::Sum => vec![(0, adj.broadcast_to(parents[0].shape())?)],
            Op::Mean => {
                let n = parents[0].value().numel() as f64;
                vec![(0, adj.broadcast_to(parents[0].shape())?.mul_scalar(1.0 / n))]
            }
            Op::SumAxis(axis) => {
                let pshape = parents[0].shape();
                let lifted = if *axis == 1 {
                    adj.reshape(&[pshape[0], 1])?
                } else {
                    adj.reshape(&[1, pshape[1]])?
                };
                vec![(0, lifted.broadcast_to(pshape)?)]
            }
            Op::BroadcastTo => vec![(0, adj.sum_to(parents[0].shape())?)],
            Op::SumTo => vec![(0, adj.broadcast_to(parents[0].shape())?)],
            Op::Reshape => vec![(0, adj.reshape(parents[0].shape())?)],
            Op::Narrow { axis, start, len } => {
                let pshape = parents[0].shape();
                let before = *start;
                let after = pshape[*axis] - start - len;
                let mut parts = Vec::with_capacity(3);
                if before > 0 {
                    let mut s = pshape.to_vec();
                    s[*axis] = before;
                    parts.push(Var::constant(Tensor::zeros(&s)));
                }
                parts.push(adj.clone());
                if after > 0 {
                    let mut s = pshape.to_vec();
                    s[*axis] = after;
                    parts.push(Var::constant(Tensor::zeros(&s)));
                }
                vec![(0, Var::concat(&parts, *axis)?)]
            }
            Op::Concat { axis } => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parents.len());
                for (i, p) in parents.iter().enumerate() {
                    let extent = p.shape()[*axis];
                    grads.push((i, adj.narrow(*axis, offset, extent)?));
                    offset += extent;
                }
                grads
            }
        };
        Ok(out)
    }
}

/// Gradients of a scalar `output` with respect to each entry of `wrt`.
///
/// With `create_graph = true` the returned values stay attached to the graph
/// and can be differentiated again; otherwise they are detached constants.
/// Entries of `wrt` not reachable from `output` receive zero gradients.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Result<Vec<Var>> {
    if output.value().numel() != 1 {
        return Err(Error::BadShape {
            op: "grad",
            expected: "a scalar output".to_string(),
            got: output.shape().to_vec(),
        });
    }

    let finish = |v: Var| if create_graph { v } else { v.detach() };
    let zero_like = |w: &Var| Var::constant(Tensor::zeros(w.shape()));

    if !output.needs_grad() {
        return Ok(wrt.iter().map(|w| finish(zero_like(w))).collect());
    }

    // Reachable differentiable subgraph. Node ids increase monotonically from
    // parents to children, so sorting by id descending is a reverse
    // topological order.
    let mut stack = vec![output.clone()];
    let mut seen: HashSet<u64> = HashSet::new();
    let mut order: Vec<Var> = Vec::new();
    while let Some(node) = stack.pop() {
        if !seen.insert(node.id()) {
            continue;
        }
        for p in &node.0.parents {
            if p.needs_grad() && !seen.contains(&p.id()) {
                stack.push(p.clone());
            }
        }
        order.push(node);
    }
    order.sort_by_key(|node| std::cmp::Reverse(node.id()));

    let mut adjoints: HashMap<u64, Var> = HashMap::new();
    adjoints.insert(output.id(), Var::constant(Tensor::ones(output.shape())));

    for node in &order {
        let Some(adj) = adjoints.get(&node.id()).cloned() else {
            continue;
        };
        if !adj.value().all_finite() {
            return Err(Error::NonFinite {
                op: format!("backward of {}", node.0.op.name()),
            });
        }
        for (pi, contribution) in node.backward(&adj)? {
            let parent = &node.0.parents[pi];
            if !parent.needs_grad() {
                continue;
            }
            let slot = adjoints.remove(&parent.id());
            let accumulated = match slot {
                Some(existing) => existing.add(&contribution)?,
                None => contribution,
            };
            adjoints.insert(parent.id(), accumulated);
        }
    }

    wrt.iter()
        .map(|w| {
            let g = adjoints.get(&w.id()).cloned().unwrap_or_else(|| zero_like(w));
            if !g.value().all_finite() {
                return Err(Error::NonFinite {
                    op: "gradient result".to_string(),
                });
            }
            Ok(finish(g))
        })
        .collect()
}
