//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations are methods on a [`Tape`]; each returns a [`Var`] handle to the
//! recorded result. [`Tape::backward`] walks the records in strict reverse
//! execution order and returns the adjoint of every node that depends on a
//! leaf created with `requires_grad`.
//!
//! ```
//! use gated_reid::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.mean_all(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0 / 3.0, 4.0 / 3.0, 2.0]);
//! ```
//!
//! A tape is single-owner and never shared between threads; data-parallel
//! work uses one tape per worker.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator kind of a tape record, used in reports and by the adjoint
/// corruption hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool,
    Tanh,
    Sigmoid,
    Dense,
    AddVector,
    MulGate,
    Concat,
    StopGradient,
    Add,
    Sub,
    Mul,
    Maximum,
    Affine,
    Relu,
    Norm,
    MeanAll,
    Flatten,
    AddN,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::MaxPool,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Dense,
        OpKind::AddVector,
        OpKind::MulGate,
        OpKind::Concat,
        OpKind::StopGradient,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Maximum,
        OpKind::Affine,
        OpKind::Relu,
        OpKind::Norm,
        OpKind::MeanAll,
        OpKind::Flatten,
        OpKind::AddN,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d_same",
            OpKind::MaxPool => "maxpool_2x2",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Dense => "dense",
            OpKind::AddVector => "add_broadcast_vector",
            OpKind::MulGate => "mul_broadcast_gate",
            OpKind::Concat => "concat_channels",
            OpKind::StopGradient => "stop_gradient",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Maximum => "maximum",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::Norm => "norm",
            OpKind::MeanAll => "mean_all",
            OpKind::Flatten => "flatten",
            OpKind::AddN => "add_n",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<u32> },
    Tanh(Var),
    Sigmoid(Var),
    Dense { input: Var, weight: Var, bias: Option<Var> },
    AddVector { cube: Var, vec: Var },
    MulGate { gate: Var, cube: Var },
    Concat { a: Var, b: Var },
    StopGradient,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    Affine { input: Var, scale: T },
    Relu(Var),
    Norm(Var),
    MeanAll(Var),
    Flatten(Var),
    AddN(Vec<Var>),
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Dense { .. } => OpKind::Dense,
            Op::AddVector { .. } => OpKind::AddVector,
            Op::MulGate { .. } => OpKind::MulGate,
            Op::Concat { .. } => OpKind::Concat,
            Op::StopGradient => OpKind::StopGradient,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Maximum(..) => OpKind::Maximum,
            Op::Affine { .. } => OpKind::Affine,
            Op::Relu(_) => OpKind::Relu,
            Op::Norm(_) => OpKind::Norm,
            Op::MeanAll(_) => OpKind::MeanAll,
            Op::Flatten(_) => OpKind::Flatten,
            Op::AddN(_) => OpKind::AddN,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    corrupt: Option<(OpKind, T)>,
    /// Frozen outputs substituted for `stop_gradient` results, in order.
    replay: Option<std::collections::VecDeque<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    adjoints: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`, or `None` if `v` does not depend on any
    /// gradient-requiring leaf (or was produced after the loss).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.adjoints.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), corrupt: None, replay: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Discards every record from index `len` onward. Handles to discarded
    /// records must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Test hook: scales every adjoint flowing backward out of nodes of
    /// `kind` by `factor`. Used as a negative control for gradient checks.
    #[doc(hidden)]
    pub fn corrupt_adjoint(&mut self, kind: OpKind, factor: f64) {
        self.corrupt = Some((kind, T::c(factor)));
    }

    /// Makes subsequent `stop_gradient` calls return `values` in order
    /// instead of their inputs, holding the stopped expressions constant.
    /// Finite-difference checks use this to differentiate with the stopped
    /// paths frozen at the base point.
    #[doc(hidden)]
    pub fn replay_stopped(&mut self, values: Vec<Tensor<T>>) {
        self.replay = Some(values.into());
    }

    /// Values produced by every `stop_gradient` on this tape, in order.
    pub fn stopped_values(&self) -> Vec<Tensor<T>> {
        self.nodes.iter().filter(|n| matches!(n.op, Op::StopGradient)).map(|n| n.value.clone()).collect()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("operand shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// Same-padded 2-D convolution over an `[H, W, Cin]` input with an odd
    /// `[k, k, Cin, Cout]` kernel and `[Cout]` bias.
    pub fn conv2d_same(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        const OP: &str = "conv2d_same";
        let (h, w, cin) = self.value(input).dims3(OP)?;
        let ks = self.value(kernel).shape();
        let [k, k2, kcin, cout] = ks[..] else {
            return Err(Error::shape(OP, format!("kernel must be [k,k,Cin,Cout], got {ks:?}")));
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(OP, format!("kernel must be square with odd size, got {ks:?}")));
        }
        if kcin != cin {
            return Err(Error::shape(OP, format!("input has {cin} channels, kernel expects {kcin}")));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?} does not match {cout} output channels", self.value(bias).shape()),
            ));
        }
        let geom = ConvGeom { h, w, cin, cout, k };
        let out =
            kernels::conv2d_same(&geom, self.value(input).data(), self.value(kernel).data(), self.value(bias).data());
        let ng = self.ng(input) || self.ng(kernel) || self.ng(bias);
        Ok(self.push(Tensor::new([h, w, cout], out)?, Op::Conv2d { input, kernel, bias }, ng))
    }

    /// 2x2 max pooling with partial trailing windows for odd extents.
    pub fn maxpool_2x2(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.value(input).dims3("maxpool_2x2")?;
        let (out, argmax) = kernels::maxpool_2x2(self.value(input).data(), h, w, c);
        let ng = self.ng(input);
        Ok(self.push(Tensor::new([h.div_ceil(2), w.div_ceil(2), c], out)?, Op::MaxPool { input, argmax }, ng))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.tanh());
        let ng = self.ng(input);
        self.push(v, Op::Tanh(input), ng)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let v = self.value(input).map(kernels::sigmoid);
        let ng = self.ng(input);
        self.push(v, Op::Sigmoid(input), ng)
    }

    /// `weight · input + bias` for a rank-1 input and `[M, N]` weight.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "dense";
        let xs = self.value(input).shape();
        let [n] = xs[..] else {
            return Err(Error::shape(OP, format!("input must be rank 1, got {xs:?}")));
        };
        let ws = self.value(weight).shape();
        let [m, wn] = ws[..] else {
            return Err(Error::shape(OP, format!("weight must be [M,N], got {ws:?}")));
        };
        if wn != n {
            return Err(Error::shape(OP, format!("weight {ws:?} cannot multiply input of length {n}")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [m] {
                return Err(Error::shape(OP, format!("bias {:?} does not match {m} outputs", self.value(b).shape())));
            }
        }
        let out =
            kernels::matvec(self.value(weight).data(), self.value(input).data(), bias.map(|b| self.value(b).data()));
        let ng = self.ng(input) || self.ng(weight) || bias.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new([m], out)?, Op::Dense { input, weight, bias }, ng))
    }

    /// Adds a `[C]` vector at every position of a `[.., C]` tensor.
    pub fn add_broadcast_vector(&mut self, cube: Var, vec: Var) -> Result<Var> {
        const OP: &str = "add_broadcast_vector";
        let cs = self.value(cube).shape();
        let c = *cs.last().ok_or_else(|| Error::shape(OP, "cube must have a channel axis"))?;
        if self.value(vec).shape() != [c] {
            return Err(Error::shape(OP, format!("vector {:?} does not match {c} channels", self.value(vec).shape())));
        }
        let vv = self.value(vec).data();
        let mut out = self.value(cube).clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (o, &b) in px.iter_mut().zip(vv) {
                *o += b;
            }
        }
        let ng = self.ng(cube) || self.ng(vec);
        Ok(self.push(out, Op::AddVector { cube, vec }, ng))
    }

    /// Multiplies every channel of `[H, W, C]` by a `[H, W, 1]` gate.
    pub fn mul_broadcast_gate(&mut self, gate: Var, cube: Var) -> Result<Var> {
        const OP: &str = "mul_broadcast_gate";
        let (gh, gw, gc) = self.value(gate).dims3(OP)?;
        let (h, w, c) = self.value(cube).dims3(OP)?;
        if gc != 1 || (gh, gw) != (h, w) {
            return Err(Error::shape(OP, format!("gate [{gh},{gw},{gc}] cannot gate cube [{h},{w},{c}]")));
        }
        let g = self.value(gate).data();
        let mut out = self.value(cube).clone();
        for (px, &gv) in out.data_mut().chunks_exact_mut(c).zip(g) {
            for o in px {
                *o *= gv;
            }
        }
        let ng = self.ng(gate) || self.ng(cube);
        Ok(self.push(out, Op::MulGate { gate, cube }, ng))
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(OP, format!("cannot concatenate {sa:?} and {sb:?}")));
        }
        let ca = *sa.last().unwrap();
        let cb = *sb.last().unwrap();
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let positions: usize = sa[..sa.len() - 1].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(positions * (ca + cb));
        for p in 0..positions {
            out.extend_from_slice(&da[p * ca..(p + 1) * ca]);
            out.extend_from_slice(&db[p * cb..(p + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { a, b }, ng))
    }

    /// Identity in the forward pass; contributes no adjoint to `input`.
    pub fn stop_gradient(&mut self, input: Var) -> Var {
        let frozen = self.replay.as_mut().and_then(|r| r.pop_front());
        let v = match frozen {
            Some(f) if f.shape() == self.value(input).shape() => f,
            _ => self.value(input).clone(),
        };
        self.push(v, Op::StopGradient, false)
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// Elementwise maximum; ties route the adjoint to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("maximum", a, b, |x, y| if y > x { y } else { x })?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Maximum(a, b), ng))
    }

    /// `scale * input + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::c(scale), T::c(shift));
        let v = self.value(input).map(|x| s * x + t);
        let ng = self.ng(input);
        self.push(v, Op::Affine { input, scale: s }, ng)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.affine(input, factor, 0.0)
    }

    /// `max(x, 0)` with subgradient 0 at the corner.
    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.max(T::zero()));
        let ng = self.ng(input);
        self.push(v, Op::Relu(input), ng)
    }

    /// Euclidean norm over all elements; subgradient 0 at the origin.
    pub fn norm(&mut self, input: Var) -> Var {
        let ss: T = self.value(input).data().iter().map(|&x| x * x).sum();
        let ng = self.ng(input);
        self.push(Tensor::scalar(ss.sqrt()), Op::Norm(input), ng)
    }

    pub fn mean_all(&mut self, input: Var) -> Var {
        let m = self.value(input).mean();
        let ng = self.ng(input);
        self.push(Tensor::scalar(m), Op::MeanAll(input), ng)
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let v = self.value(input).clone();
        let n = v.numel();
        let v = v.reshape([n]).expect("flatten preserves element count");
        let ng = self.ng(input);
        self.push(v, Op::Flatten(input), ng)
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::shape("add_n", "no operands"))?;
        let mut acc = self.value(first).clone();
        for &v in &inputs[1..] {
            self.same_shape("add_n", first, v)?;
            acc.add_assign(self.value(v));
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(acc, Op::AddN(inputs.to_vec()), ng))
    }

    /// Negative log-softmax of `logits[target]` for rank-1 logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let l = self.value(logits);
        if l.rank() != 1 || target >= l.numel() {
            return Err(Error::shape(OP, format!("target {target} invalid for logits of shape {:?}", l.shape())));
        }
        let max = l.data().iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = l.data().iter().map(|&x| (x - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        let loss = z.ln() + max - l.data()[target];
        let probs = exps.into_iter().map(|e| e / z).collect();
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, ng))
    }

    /// Back-propagates from a single-element `loss`, seeding its adjoint
    /// with one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must have one element, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        if self.ng(loss) {
            adj[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(mut up) = adj[i].take() else { continue };
            if let Some((kind, factor)) = self.corrupt {
                if node.op.kind() == kind {
                    up.iter_mut().for_each(|u| *u *= factor);
                }
            }
            self.propagate(node, &up, &mut adj);
            adj[i] = Some(up);
        }
        let adjoints = adj
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let node = &self.nodes[i];
                match a {
                    Some(d) => Some(Tensor::new(node.value.shape().to_vec(), d).expect("adjoint shape")),
                    None if node.needs_grad && matches!(node.op, Op::Leaf) => {
                        Some(Tensor::zeros(node.value.shape().to_vec()))
                    }
                    None => None,
                }
            })
            .collect();
        Ok(Gradients { adjoints })
    }

    /// Takes the adjoint buffer of `v` out of `adj` (zero-filled if absent),
    /// or `None` when `v` needs no gradient.
    fn take_buf(&self, adj: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.ng(v) {
            return None;
        }
        Some(adj[v.0].take().unwrap_or_else(|| vec![T::zero(); self.value(v).numel()]))
    }

    fn with_buf(&self, adj: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut b) = self.take_buf(adj, v) {
            f(&mut b);
            adj[v.0] = Some(b);
        }
    }

    fn propagate(&self, node: &Node<T>, up: &[T], adj: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            &Op::Conv2d { input, kernel, bias } => {
                let (h, w, cin) = self.value(input).dims3("conv2d_same").expect("validated");
                let ks = self.value(kernel).shape();
                let geom = ConvGeom { h, w, cin, cout: ks[3], k: ks[0] };
                let mut di = self.take_buf(adj, input);
                let mut dk = self.take_buf(adj, kernel);
                let mut db = self.take_buf(adj, bias);
                kernels::conv2d_same_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    up,
                    di.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, b) in [(input, di), (kernel, dk), (bias, db)] {
                    if b.is_some() {
                        adj[v.0] = b;
                    }
                }
            }
            Op::MaxPool { input, argmax } => self.with_buf(adj, *input, |d| {
                for (&a, &u) in argmax.iter().zip(up) {
                    d[a as usize] += u;
                }
            }),
            &Op::Tanh(input) => self.with_buf(adj, input, |d| {
                for ((dv, &y), &u) in d.iter_mut().zip(node.value.data()).zip(up) {
                    *dv += u * (T::one() - y * y);
                }
            }),
            &Op::Sigmoid(input) => self.with_buf(adj, input, |d| {
                for ((dv, &y), &u) in d.iter_mut().zip(node.value.data()).zip(up) {
                    *dv += u * y * (T::one() - y);
                }
            }),
            &Op::Dense { input, weight, bias } => {
                let x = self.value(input).data();
                let wv = self.value(weight).data();
                let n = x.len();
                self.with_buf(adj, input, |d| {
                    for (row, &u) in wv.chunks_exact(n).zip(up) {
                        for (dv, &r) in d.iter_mut().zip(row) {
                            *dv += r * u;
                        }
                    }
                });
                self.with_buf(adj, weight, |d| {
                    for (drow, &u) in d.chunks_exact_mut(n).zip(up) {
                        for (dv, &xv) in drow.iter_mut().zip(x) {
                            *dv += u * xv;
                        }
                    }
                });
                if let Some(b) = bias {
                    self.with_buf(adj, b, |d| {
                        for (dv, &u) in d.iter_mut().zip(up) {
                            *dv += u;
                        }
                    });
                }
            }
            &Op::AddVector { cube, vec } => {
                let c = self.value(vec).numel();
                self.with_buf(adj, cube, |d| {
                    for (dv, &u) in d.iter_mut().zip(up) {
                        *dv += u;
                    }
                });
                self.with_buf(adj, vec, |d| {
                    for px in up.chunks_exact(c) {
                        for (dv, &u) in d.iter_mut().zip(px) {
                            *dv += u;
                        }
                    }
                });
            }
            &Op::MulGate { gate, cube } => {
                let g = self.value(gate).data();
                let x = self.value(cube).data();
                let c = x.len() / g.len().max(1);
                self.with_buf(adj, gate, |d| {
                    for ((dv, px), upx) in d.iter_mut().zip(x.chunks_exact(c)).zip(up.chunks_exact(c)) {
                        let mut acc = T::zero();
                        for (&xv, &u) in px.iter().zip(upx) {
                            acc += xv * u;
                        }
                        *dv += acc;
                    }
                });
                self.with_buf(adj, cube, |d| {
                    for ((dpx, upx), &gv) in d.chunks_exact_mut(c).zip(up.chunks_exact(c)).zip(g) {
                        for (dv, &u) in dpx.iter_mut().zip(upx) {
                            *dv += gv * u;
                        }
                    }
                });
            }
            &Op::Concat { a, b } => {
                let ca = *self.value(a).shape().last().unwrap();
                let cb = *self.value(b).shape().last().unwrap();
                let step = ca + cb;
                if step == 0 {
                    return;
                }
                self.with_buf(adj, a, |d| {
                    for (p, upx) in up.chunks_exact(step).enumerate() {
                        for (dv, &u) in d[p * ca..(p + 1) * ca].iter_mut().zip(&upx[..ca]) {
                            *dv += u;
                        }
                    }
                });
                self.with_buf(adj, b, |d| {
                    for (p, upx) in up.chunks_exact(step).enumerate() {
                        for (dv, &u) in d[p * cb..(p + 1) * cb].iter_mut().zip(&upx[ca..]) {
                            *dv += u;
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                self.accumulate(adj, a, up, T::one());
                self.accumulate(adj, b, up, T::one());
            }
            &Op::Sub(a, b) => {
                self.accumulate(adj, a, up, T::one());
                self.accumulate(adj, b, up, -T::one());
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.with_buf(adj, a, |d| {
                    for ((dv, &y), &u) in d.iter_mut().zip(vb).zip(up) {
                        *dv += u * y;
                    }
                });
                self.with_buf(adj, b, |d| {
                    for ((dv, &x), &u) in d.iter_mut().zip(va).zip(up) {
                        *dv += u * x;
                    }
                });
            }
            &Op::Maximum(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.with_buf(adj, a, |d| {
                    for (i, &u) in up.iter().enumerate() {
                        if vb[i] <= va[i] {
                            d[i] += u;
                        }
                    }
                });
                self.with_buf(adj, b, |d| {
                    for (i, &u) in up.iter().enumerate() {
                        if vb[i] > va[i] {
                            d[i] += u;
                        }
                    }
                });
            }
            &Op::Affine { input, scale } => self.accumulate(adj, input, up, scale),
            &Op::Relu(input) => {
                let x = self.value(input).data();
                self.with_buf(adj, input, |d| {
                    for ((dv, &xv), &u) in d.iter_mut().zip(x).zip(up) {
                        if xv > T::zero() {
                            *dv += u;
                        }
                    }
                });
            }
            &Op::Norm(input) => {
                let n = node.value.item();
                if n > T::zero() {
                    let x = self.value(input).data();
                    let s = up[0] / n;
                    self.with_buf(adj, input, |d| {
                        for (dv, &xv) in d.iter_mut().zip(x) {
                            *dv += s * xv;
                        }
                    });
                }
            }
            &Op::MeanAll(input) => {
                let s = up[0] / T::c(self.value(input).numel() as f64);
                self.with_buf(adj, input, |d| d.iter_mut().for_each(|dv| *dv += s));
            }
            &Op::Flatten(input) => self.accumulate(adj, input, up, T::one()),
            Op::AddN(inputs) => {
                for &v in inputs {
                    self.accumulate(adj, v, up, T::one());
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                self.with_buf(adj, *logits, |d| {
                    for (i, (dv, &p)) in d.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *dv += up[0] * (p - onehot);
                    }
                });
            }
        }
    }

    fn accumulate(&self, adj: &mut [Option<Vec<T>>], v: Var, up: &[T], scale: T) {
        self.with_buf(adj, v, |d| {
            for (dv, &u) in d.iter_mut().zip(up) {
                *dv += scale * u;
            }
        });
    }
}
