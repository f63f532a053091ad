//! Tape recording and the reverse sweep.
//!
//! A [`Tape`] owns every intermediate tensor of one forward pass. Operations
//! are methods on the [`Var`] handles, which borrow the tape, so a graph
//! cannot outlive the tape that recorded it. Node ids are assigned in
//! creation order, which is a topological order of the graph; the reverse
//! sweep walks the ids backwards and visits each node once.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::autodiff::kernels;
use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

/// Index of a node on its tape.
pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf { trainable: bool },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Reshape(NodeId),
    TileRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Norm(NodeId),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// Some trainable leaf is reachable from this node.
    live: bool,
}

impl<T> Op<T> {
    fn for_each_input(&self, mut f: impl FnMut(NodeId)) {
        match self {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Abs(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Reshape(a)
            | Op::TileRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Norm(a)
            | Op::Slice { input: a, .. } => f(*a),
            Op::Concat { inputs, .. } => inputs.iter().for_each(|&i| f(i)),
        }
    }
}

/// Recorded computation graph of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

/// Gradients of a scalar root with respect to the trainable leaves.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a trainable leaf; `None` for constants and interior nodes.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_leaf.get(&var.id)
    }

    /// Gradient for a trainable leaf, panicking when `var` is not one.
    pub fn wrt(&self, var: Var<'_, T>) -> &Tensor<T> {
        self.get(var)
            .unwrap_or_else(|| panic!("node {} is not a trainable leaf", var.id))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.by_leaf.remove(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Trainable leaf: receives a gradient from [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// Constant leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf { trainable: false })
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let mut live = matches!(op, Op::Leaf { trainable: true });
        op.for_each_input(|i| live |= nodes[i].live);
        nodes.push(Node { value, op, live });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Concatenates `vars` along `axis`. All other dimensions must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, AutodiffError> {
        let first = vars.first().ok_or(AutodiffError::EmptyInput { op: "concat" })?;
        let value = {
            let nodes = self.nodes.borrow();
            let parts: Vec<&Tensor<T>> = vars.iter().map(|v| &nodes[v.id].value).collect();
            kernels::concat(&parts, axis)?
        };
        debug_assert!(vars.iter().all(|v| std::ptr::eq(v.tape, first.tape)));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: vars.iter().map(|v| v.id).collect(),
                axis,
            },
        ))
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Returns a gradient for every trainable leaf on the tape; leaves with no
    /// path to `root` get exact zeros.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(AutodiffError::NotScalar {
                shape: root_value.shape().to_vec(),
            });
        }

        let mut adjoints: Vec<Option<Vec<T>>> = vec![None; root.id + 1];
        adjoints[root.id] = Some(vec![T::one()]);

        for id in (0..=root.id).rev() {
            let Some(upstream) = adjoints[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.live {
                continue;
            }
            match &node.op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        adjoints[id] = Some(upstream);
                    }
                }
                op => propagate(op, &node.value, &upstream, &nodes, &mut adjoints),
            }
        }

        let mut by_leaf = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                let shape = node.value.shape().to_vec();
                let grad = match adjoints.get_mut(id).and_then(Option::take) {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(&shape),
                };
                by_leaf.insert(id, grad);
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn accumulate<T: Scalar>(adjoints: &mut [Option<Vec<T>>], id: NodeId, grad: Vec<T>) {
    match &mut adjoints[id] {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

/// Reduces a broadcast gradient back onto a one-element operand.
fn reduce_if_scalar<T: Scalar>(grad: Vec<T>, operand: &Tensor<T>) -> Vec<T> {
    if operand.len() == 1 && grad.len() != 1 {
        vec![grad.into_iter().sum()]
    } else {
        grad
    }
}

fn propagate<T: Scalar>(
    op: &Op<T>,
    out: &Tensor<T>,
    dy: &[T],
    nodes: &[Node<T>],
    adjoints: &mut [Option<Vec<T>>],
) {
    let val = |id: NodeId| &nodes[id].value;
    // Inputs of a live unary node are live; binary nodes and concat may mix
    // live and constant inputs.
    let live = |id: NodeId| nodes[id].live;
    match op {
        Op::Leaf { .. } => unreachable!("leaves handled by caller"),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if live(*a) {
                accumulate(adjoints, *a, kernels::matmul_nt(dy, bv.data(), m, n, k));
            }
            if live(*b) {
                accumulate(adjoints, *b, kernels::matmul_tn(av.data(), dy, m, k, n));
            }
        }
        Op::Add(a, b) => {
            if live(*a) {
                accumulate(adjoints, *a, reduce_if_scalar(dy.to_vec(), val(*a)));
            }
            if live(*b) {
                accumulate(adjoints, *b, reduce_if_scalar(dy.to_vec(), val(*b)));
            }
        }
        Op::Sub(a, b) => {
            if live(*a) {
                accumulate(adjoints, *a, reduce_if_scalar(dy.to_vec(), val(*a)));
            }
            if live(*b) {
                let neg: Vec<T> = dy.iter().map(|&g| -g).collect();
                accumulate(adjoints, *b, reduce_if_scalar(neg, val(*b)));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let da: Vec<T> = dy
                .iter()
                .enumerate()
                .map(|(i, &g)| g * bv.data()[if bv.len() == 1 { 0 } else { i }])
                .collect();
            let db: Vec<T> = dy
                .iter()
                .enumerate()
                .map(|(i, &g)| g * av.data()[if av.len() == 1 { 0 } else { i }])
                .collect();
            if live(*a) {
                accumulate(adjoints, *a, reduce_if_scalar(da, av));
            }
            if live(*b) {
                accumulate(adjoints, *b, reduce_if_scalar(db, bv));
            }
        }
        Op::Scale(a, c) => {
            accumulate(adjoints, *a, dy.iter().map(|&g| g * *c).collect());
        }
        Op::Sigmoid(a) => {
            let g = dy
                .iter()
                .zip(out.data())
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect();
            accumulate(adjoints, *a, g);
        }
        Op::Tanh(a) => {
            let g = dy
                .iter()
                .zip(out.data())
                .map(|(&g, &y)| g * (T::one() - y * y))
                .collect();
            accumulate(adjoints, *a, g);
        }
        Op::Exp(a) => {
            let g = dy.iter().zip(out.data()).map(|(&g, &y)| g * y).collect();
            accumulate(adjoints, *a, g);
        }
        Op::Ln(a) => {
            let g = dy
                .iter()
                .zip(val(*a).data())
                .map(|(&g, &x)| g / x)
                .collect();
            accumulate(adjoints, *a, g);
        }
        Op::Abs(a) => {
            let g = dy
                .iter()
                .zip(val(*a).data())
                .map(|(&g, &x)| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            accumulate(adjoints, *a, g);
        }
        Op::Softmax(a) => {
            let cols = out.cols();
            let mut g = vec![T::zero(); dy.len()];
            for ((gr, yr), dr) in g
                .chunks_mut(cols)
                .zip(out.data().chunks(cols))
                .zip(dy.chunks(cols))
            {
                // Shifting upstream by its first entry uses sum(y) = 1 and makes a
                // constant upstream map to an exactly zero gradient.
                let shift = dr[0];
                let dot: T = yr.iter().zip(dr).map(|(&y, &d)| y * (d - shift)).sum();
                for ((gi, &y), &d) in gr.iter_mut().zip(yr).zip(dr) {
                    *gi = y * ((d - shift) - dot);
                }
            }
            accumulate(adjoints, *a, g);
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let mut g = vec![T::zero(); dy.len()];
            for ((gr, yr), dr) in g
                .chunks_mut(cols)
                .zip(out.data().chunks(cols))
                .zip(dy.chunks(cols))
            {
                let total: T = dr.iter().copied().sum();
                for ((gi, &y), &d) in gr.iter_mut().zip(yr).zip(dr) {
                    *gi = d - y.exp() * total;
                }
            }
            accumulate(adjoints, *a, g);
        }
        Op::Concat { inputs, axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| val(i).shape()).collect();
            for (id, grad) in inputs.iter().zip(kernels::split(dy, out.shape(), &shapes, *axis)) {
                if live(*id) {
                    accumulate(adjoints, *id, grad);
                }
            }
        }
        Op::Slice { input, axis, start } => {
            let grad = kernels::unslice(dy, out.shape(), val(*input).shape(), *axis, *start);
            accumulate(adjoints, *input, grad);
        }
        Op::Reshape(a) => accumulate(adjoints, *a, dy.to_vec()),
        Op::TileRows(a) => {
            let cols = out.cols();
            let mut g = vec![T::zero(); cols];
            for row in dy.chunks(cols) {
                for (gi, &d) in g.iter_mut().zip(row) {
                    *gi += d;
                }
            }
            accumulate(adjoints, *a, g);
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(adjoints, *a, vec![dy[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(*a).len();
            let g = dy[0] / T::from_usize(n).expect("length fits scalar");
            accumulate(adjoints, *a, vec![g; n]);
        }
        Op::Norm(a) => {
            let av = val(*a);
            let cols = av.cols();
            let mut g = vec![T::zero(); av.len()];
            for (((gr, xr), &n), &d) in g
                .chunks_mut(cols)
                .zip(av.data().chunks(cols))
                .zip(out.data())
                .zip(dy)
            {
                // Subgradient 0 at the origin.
                if n > T::zero() {
                    for (gi, &x) in gr.iter_mut().zip(xr) {
                        *gi = d * x / n;
                    }
                }
            }
            accumulate(adjoints, *a, g);
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Runs `f` on the node's value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Option<T> {
        self.with_value(Tensor::item)
    }

    fn unary(self, op: Op<T>, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>, AutodiffError>) -> Result<Self, AutodiffError> {
        let value = self.with_value(f)?;
        Ok(self.tape.push(value, op))
    }

    fn binary(
        self,
        other: Self,
        op: Op<T>,
        f: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>, AutodiffError>,
    ) -> Result<Self, AutodiffError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.push(value, op))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    pub fn add(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            kernels::elementwise("add", a, b, |x, y| x + y)
        })
    }

    pub fn sub(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            kernels::elementwise("sub", a, b, |x, y| x - y)
        })
    }

    pub fn mul(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            kernels::elementwise("mul", a, b, |x, y| x * y)
        })
    }

    /// Multiplication by a constant.
    pub fn scale(self, factor: T) -> Self {
        let value = self.with_value(|v| v.map(|x| x * factor));
        self.tape.push(value, Op::Scale(self.id, factor))
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    pub fn sigmoid(self) -> Self {
        let value = self.with_value(|v| v.map(kernels::sigmoid));
        self.tape.push(value, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Self {
        let value = self.with_value(|v| v.map(T::tanh));
        self.tape.push(value, Op::Tanh(self.id))
    }

    pub fn exp(self) -> Self {
        let value = self.with_value(|v| v.map(T::exp));
        self.tape.push(value, Op::Exp(self.id))
    }

    /// Natural logarithm; every entry must be positive.
    pub fn ln(self) -> Result<Self, AutodiffError> {
        self.unary(Op::Ln(self.id), |v| {
            if let Some(&bad) = v.data().iter().find(|&&x| !(x > T::zero())) {
                return Err(AutodiffError::Domain {
                    op: "ln",
                    value: bad.as_f64(),
                });
            }
            Ok(v.map(T::ln))
        })
    }

    pub fn abs(self) -> Self {
        let value = self.with_value(|v| v.map(T::abs));
        self.tape.push(value, Op::Abs(self.id))
    }

    /// Softmax over the last axis, computed with the row maximum subtracted.
    pub fn softmax(self) -> Self {
        let value = self.with_value(kernels::softmax_rows);
        self.tape.push(value, Op::Softmax(self.id))
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(self) -> Self {
        let value = self.with_value(kernels::log_softmax_rows);
        self.tape.push(value, Op::LogSoftmax(self.id))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self, AutodiffError> {
        self.unary(Op::Slice { input: self.id, axis, start }, |v| {
            kernels::slice(v, axis, start, end)
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, AutodiffError> {
        self.unary(Op::Reshape(self.id), |v| {
            v.reshaped(shape.to_vec()).map_err(|_| AutodiffError::ShapeMismatch {
                op: "reshape",
                left: v.shape().to_vec(),
                right: shape.to_vec(),
            })
        })
    }

    /// Repeats a `(1, n)` row `count` times into `(count, n)`.
    pub fn tile_rows(self, count: usize) -> Result<Self, AutodiffError> {
        self.unary(Op::TileRows(self.id), |v| kernels::tile_rows(v, count))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(self) -> Self {
        let value = self.with_value(|v| Tensor::scalar(v.data().iter().copied().sum()));
        self.tape.push(value, Op::Sum(self.id))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(self) -> Self {
        let value = self.with_value(|v| {
            let n = T::from_usize(v.len()).expect("length fits scalar");
            Tensor::scalar(v.data().iter().copied().sum::<T>() / n)
        });
        self.tape.push(value, Op::Mean(self.id))
    }

    /// Euclidean norm over the last axis; the last axis is dropped.
    pub fn norm(self) -> Self {
        let value = self.with_value(kernels::norm_last_axis);
        self.tape.push(value, Op::Norm(self.id))
    }

    pub fn backward(self) -> Result<Gradients<T>, AutodiffError> {
        self.tape.backward(self)
    }
}
