use super::conv::{self, Conv1dGeometry, Conv2dGeometry};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`]. Only meaningful for the graph
/// that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, T),
    Unary(Unary, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mse(Var, Var),
    Reshape(Var),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    RepeatRows(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Conv2dGeometry,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Conv1dGeometry,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Unary(_, a)
            | Op::Sum(a)
            | Op::Reshape(a)
            | Op::RepeatRows(a)
            | Op::Narrow { input: a, .. } => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Conv1d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A tape of recorded operations.
///
/// Nodes are appended in creation order, so inputs always precede their
/// consumers and reverse insertion order is a valid reverse topological
/// order. After [`Graph::backward`] the intermediate values are dropped and
/// only leaves (with their gradients) survive, unless the graph was created
/// with [`Graph::retaining`].
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    retain: bool,
    consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Mean squared difference of two equally sized slices.
pub(crate) fn mean_squared_error<T: Float>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse"));
    }
    if pred.len() != target.len() {
        return Err(Error::shape("mse", &[pred.len()], &[target.len()]));
    }
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / T::from_usize(pred.len()).unwrap())
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            retain: false,
            consumed: false,
        }
    }

    /// A graph that keeps every value after backward and allows repeated
    /// backward passes (leaf gradients accumulate).
    pub fn retaining() -> Self {
        Graph {
            retain: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input: gradients are collected for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Value of `v`.
    ///
    /// # Panics
    /// If `v` is an intermediate whose value was released by `backward`.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("intermediate value released by backward")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn input(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes[v.0].value.as_ref().ok_or(Error::GraphConsumed)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.input(a)?, self.input(b)?);
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<T> = if av.shape() == bv.shape() {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else if bv.len() == 1 {
            let y = bv.data()[0];
            av.data().iter().map(|&x| f(x, y)).collect()
        } else {
            let name = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(Error::shape(name, av.shape(), bv.shape()));
        };
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Binary(kind, a, b)))
    }

    /// `a + b`; `b` must match `a` exactly or hold a single element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.input(a)?.map(|x| x * s);
        Ok(self.record(value, Op::Scale(a, s)))
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let value = self.input(a)?.map(|x| match kind {
            Unary::Relu => x.max(T::zero()),
            Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Unary::Tanh => x.tanh(),
        });
        Ok(self.record(value, Op::Unary(kind, a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    /// `[p, q] x [q, r] -> [p, r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.input(a)?, self.input(b)?);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); p * r];
        T::gemm(
            p,
            q,
            r,
            T::one(),
            av.data(),
            (q, 1),
            bv.data(),
            (r, 1),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new([p, r], out)?;
        Ok(self.record(value, Op::MatMul(a, b)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.input(a)?.data().iter().copied().sum();
        Ok(self.record(Tensor::scalar(s), Op::Sum(a)))
    }

    /// Mean over all elements of `(pred - target)^2`, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pv, tv) = (self.input(pred)?, self.input(target)?);
        if pv.shape() != tv.shape() {
            return Err(Error::shape("mse", pv.shape(), tv.shape()));
        }
        let m = mean_squared_error(pv.data(), tv.data())?;
        Ok(self.record(Tensor::scalar(m), Op::Mse(pred, target)))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.input(a)?.clone().reshape(shape)?;
        Ok(self.record(value, Op::Reshape(a)))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.input(a)?;
        let shape = av.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "narrow(axis={axis}, start={start}, len={len}) out of range for {shape:?}"
            )));
        }
        let (outer, dim, inner) = axis_split(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.record(
            value,
            Op::Narrow {
                input: a,
                axis,
                start,
            },
        ))
    }

    /// Join tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or(Error::EmptyInput("concat"))
            .and_then(|&v| self.input(v))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Contract(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.input(v)?.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.record(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Stack `rows` copies of a vector `[n]` into `[rows, n]`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let av = self.input(a)?;
        if av.rank() != 1 {
            return Err(Error::shape("repeat_rows", av.shape(), &[av.len()]));
        }
        let n = av.len();
        let data = av.data().repeat(rows);
        let value = Tensor::new([rows, n], data)?;
        Ok(self.record(value, Op::RepeatRows(a)))
    }

    /// `input [B, C, H, W]`, `weight [O, C, kh, kw]`, `bias [O]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: Conv2dGeometry,
    ) -> Result<Var> {
        let value = conv::conv2d_forward(
            self.input(input)?,
            self.input(weight)?,
            self.input(bias)?,
            &geom,
        )?;
        Ok(self.record(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// `input [B, C, L]`, `weight [O, C, k]`, `bias [O]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: Conv1dGeometry,
    ) -> Result<Var> {
        let value = conv::conv1d_forward(
            self.input(input)?,
            self.input(weight)?,
            self.input(bias)?,
            &geom,
        )?;
        Ok(self.record(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `root`.
    ///
    /// Leaf gradients are added to whatever the leaf already holds. Without
    /// [`Graph::retaining`] the graph is consumed: intermediate values are
    /// dropped and a second call fails with [`Error::GraphConsumed`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root_len = self.input(root)?.len();
        if root_len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                let shape = node.value.as_ref().unwrap().shape().to_vec();
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            self.propagate(id, g, &mut grads)?;
        }
        if !self.retain {
            for node in &mut self.nodes {
                if !matches!(node.op, Op::Leaf) {
                    node.value = None;
                    node.op = Op::Leaf;
                    node.requires_grad = false;
                }
            }
            self.consumed = true;
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let out = node.value.as_ref().unwrap();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let broadcast = av.shape() != bv.shape();
                if wants(*a) {
                    let ga = match kind {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul if broadcast => {
                            let y = bv.data()[0];
                            g.iter().map(|&gi| gi * y).collect()
                        }
                        Binary::Mul => g.iter().zip(bv.data()).map(|(&gi, &y)| gi * y).collect(),
                    };
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let gb: Vec<T> = match kind {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.iter().map(|&gi| -gi).collect(),
                        Binary::Mul => g.iter().zip(av.data()).map(|(&gi, &x)| gi * x).collect(),
                    };
                    let gb = if broadcast {
                        vec![gb.into_iter().sum()]
                    } else {
                        gb
                    };
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().map(|&gi| gi * *s).collect());
                }
            }
            Op::Unary(kind, a) => {
                if wants(*a) {
                    let ga = g
                        .iter()
                        .zip(out.data())
                        .map(|(&gi, &y)| match kind {
                            Unary::Relu => {
                                if y > T::zero() {
                                    gi
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => gi * y * (T::one() - y),
                            Unary::Tanh => gi * (T::one() - y * y),
                        })
                        .collect();
                    accumulate(grads, *a, ga);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    // dA = G * B^T
                    let mut ga = vec![T::zero(); p * q];
                    T::gemm(
                        p,
                        r,
                        q,
                        T::one(),
                        &g,
                        (r, 1),
                        bv.data(),
                        (1, r),
                        T::zero(),
                        &mut ga,
                    );
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    // dB = A^T * G
                    let mut gb = vec![T::zero(); q * r];
                    T::gemm(
                        q,
                        p,
                        r,
                        T::one(),
                        av.data(),
                        (1, q),
                        &g,
                        (r, 1),
                        T::zero(),
                        &mut gb,
                    );
                    accumulate(grads, *b, gb);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    accumulate(grads, *a, vec![g[0]; self.value(*a).len()]);
                }
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let k = g[0] * T::from_f64_lossy(2.0) / T::from_usize(pv.len()).unwrap();
                let gp: Vec<T> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(&x, &y)| k * (x - y))
                    .collect();
                if wants(*t) {
                    accumulate(grads, *t, gp.iter().map(|&v| -v).collect());
                }
                if wants(*p) {
                    accumulate(grads, *p, gp);
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Narrow { input, axis, start } => {
                if wants(*input) {
                    let in_shape = self.value(*input).shape();
                    let (outer, dim, inner) = axis_split(in_shape, *axis);
                    let len = out.shape()[*axis];
                    let mut gi = vec![T::zero(); outer * dim * inner];
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        gi[dst..dst + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    accumulate(grads, *input, gi);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.value(v).shape()[*axis];
                    if wants(v) {
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        accumulate(grads, v, gv);
                    }
                    offset += len;
                }
            }
            Op::RepeatRows(a) => {
                if wants(*a) {
                    let n = self.value(*a).len();
                    let mut ga = vec![T::zero(); n];
                    for row in g.chunks_exact(n) {
                        ga.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (wants(*input), wants(*weight), wants(*bias));
                let cg = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    geom,
                    &g,
                    need,
                )?;
                self.scatter_conv(grads, cg, *input, *weight, *bias);
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (wants(*input), wants(*weight), wants(*bias));
                let cg = conv::conv1d_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    geom,
                    &g,
                    need,
                )?;
                self.scatter_conv(grads, cg, *input, *weight, *bias);
            }
        }
        Ok(())
    }

    fn scatter_conv(
        &self,
        grads: &mut [Option<Vec<T>>],
        cg: conv::ConvGrads<T>,
        input: Var,
        weight: Var,
        bias: Var,
    ) {
        if let Some(gx) = cg.input {
            accumulate(grads, input, gx);
        }
        if let Some(gw) = cg.weight {
            accumulate(grads, weight, gw);
        }
        if let Some(gb) = cg.bias {
            accumulate(grads, bias, gb);
        }
    }
}
