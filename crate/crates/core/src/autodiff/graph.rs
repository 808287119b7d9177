use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    None,
    /// left operand is a one-element tensor
    Lhs,
    /// right operand is a one-element tensor
    Rhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    AddRow(Var, Var),
    Scale(Var, f32),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MaxLast(Var, Vec<usize>),
    Concat {
        inputs: Vec<Var>,
        sizes: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Slice {
        a: Var,
        outer: usize,
        inner: usize,
        axis_len: usize,
        start: usize,
        len: usize,
    },
    Softmax(Var, f32),
    LogSoftmax(Var),
    L2Normalize(Var, Vec<f32>, f32),
    GatherRows(Var, Vec<usize>),
    PickLast(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the
/// reverse sweep in `backward` is a fixed, deterministic order.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when nothing reached it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape.clone(), g.to_vec()),
            None => Tensor::zeros(shape),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Whether `v` was produced by an operation (as opposed to a leaf).
    pub fn has_node(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Same values, detached: the result is a leaf that never receives or
    /// forwards gradient.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value, false)
    }

    fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Bcast, Vec<usize>)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok((Bcast::None, sa.to_vec()))
        } else if numel(sb) == 1 {
            Ok((Bcast::Rhs, sa.to_vec()))
        } else if numel(sa) == 1 {
            Ok((Bcast::Lhs, sb.to_vec()))
        } else {
            Err(Self::mismatch(op, sa, sb))
        }
    }

    fn zip_bcast(&self, a: Var, b: Var, bc: Bcast, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
        let da = self.value(a).data();
        let db = self.value(b).data();
        match bc {
            Bcast::None => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Rhs => da.iter().map(|&x| f(x, db[0])).collect(),
            Bcast::Lhs => db.iter().map(|&y| f(da[0], y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, shape) = self.bcast("add", a, b)?;
        let data = self.zip_bcast(a, b, bc, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, shape) = self.bcast("sub", a, b)?;
        let data = self.zip_bcast(a, b, bc, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, shape) = self.bcast("mul", a, b)?;
        let data = self.zip_bcast(a, b, bc, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b, bc), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, shape) = self.bcast("div", a, b)?;
        if let Some(i) = self.value(b).data().iter().position(|&y| y == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: format!("division by zero at element {i}"),
            });
        }
        let data = self.zip_bcast(a, b, bc, |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Div(a, b, bc), rg))
    }

    /// `a[.., n] + b[n]`, the bias broadcast used by dense layers.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let n = *sa.last().unwrap_or(&0);
        if numel(&sb) != n {
            return Err(Self::mismatch("add_row", &sa, &sb));
        }
        let bv = self.value(b).data();
        let data: Vec<f32> = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(sa, data), Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * c).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched matmul `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Self::mismatch("bmm", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            data.extend(kernels::matmul(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![batch, m, n], data),
            Op::Bmm { a, b, batch, m, k, n },
            rg,
        ))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (batch, m, n) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Self::mismatch("transpose", &s, &[])),
        };
        let av = self.value(a).data();
        let mut data = Vec::with_capacity(av.len());
        for i in 0..batch {
            data.extend(kernels::transpose2(&av[i * m * n..(i + 1) * m * n], m, n));
        }
        let shape = if s.len() == 2 { vec![n, m] } else { vec![batch, n, m] };
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::expf)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.value(a).data().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {} at element {i}", self.value(a).data()[i]),
            });
        }
        Ok(self.unary(a, Op::Log(a), math::lnf))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), math::tanhf)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = kernels::sum64(self.value(a).data()) as f32;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = (kernels::sum64(t.data()) / t.numel() as f64) as f32;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    fn reduced_shape(shape: &[usize]) -> Vec<usize> {
        if shape.len() <= 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        }
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let data = t.data().chunks(n).map(|r| kernels::sum64(r) as f32).collect();
        let shape = Self::reduced_shape(t.shape());
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::SumLast(a), rg)
    }

    pub fn mean_last(&mut self, a: Var) -> Var {
        let n = self.value(a).last_dim();
        let s = self.sum_last(a);
        self.scale(s, 1.0 / n as f32)
    }

    /// Max over the last axis; gradient routes to the first maximal entry.
    pub fn max_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.rows());
        let mut arg = Vec::with_capacity(t.rows());
        for r in t.data().chunks(n) {
            let i = math::argmax(r).unwrap_or(0);
            arg.push(i);
            data.push(r[i]);
        }
        let shape = Self::reduced_shape(t.shape());
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::MaxLast(a, arg), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(Error::Empty("concat inputs")),
        };
        if axis >= first.len() {
            return Err(Self::mismatch("concat", &first, &[axis]));
        }
        let mut sizes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Self::mismatch("concat", &first, s));
            }
            sizes.push(s[axis]);
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &sz) in inputs.iter().zip(&sizes) {
                let d = self.value(v).data();
                data.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                sizes,
                outer,
                inner,
            },
            rg,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::OutOfRange(format!(
                "slice axis {axis} [{start}, {}) of shape {s:?}",
                start + len
            )));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let axis_len = s[axis];
        let d = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * axis_len * inner + start * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                a,
                outer,
                inner,
                axis_len,
                start,
                len,
            },
            rg,
        ))
    }

    /// Softmax over the last axis of `x / temperature`, max-subtracted.
    pub fn softmax(&mut self, a: Var, temperature: f32) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Domain {
                op: "softmax",
                detail: format!("temperature must be positive, got {temperature}"),
            });
        }
        let t = self.value(a);
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.numel());
        for r in t.data().chunks(n) {
            softmax_row(r, temperature, &mut data);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(a, temperature), rg))
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.numel());
        for r in t.data().chunks(n) {
            let lse = log_sum_exp(r);
            data.extend(r.iter().map(|&x| (x as f64 - lse) as f32));
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::LogSoftmax(a), rg)
    }

    /// Rows scaled to unit L2 norm; rows with norm below `eps` become zero.
    pub fn l2_normalize(&mut self, a: Var, eps: f32) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.numel());
        let mut norms = Vec::with_capacity(t.rows());
        for r in t.data().chunks(n) {
            let norm = l2_norm(r);
            norms.push(norm);
            if norm < eps {
                data.extend(core::iter::repeat_n(0.0, n));
            } else {
                data.extend(r.iter().map(|&x| x / norm));
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::L2Normalize(a, norms, eps), rg)
    }

    /// Selects rows (first-axis slices) by index; duplicates allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if idx.is_empty() {
            return Err(Error::Empty("gather_rows indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(Error::OutOfRange(format!("gather_rows index {bad} for {} rows", s[0])));
        }
        let inner = numel(&s[1..]);
        let d = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&d[i * inner..(i + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = idx.len();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// `out[i] = a[i, idx[i]]` for a tensor viewed as `[rows, last_dim]`.
    pub fn pick_last(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = t.last_dim();
        if idx.len() != t.rows() {
            return Err(Self::mismatch("pick_last", t.shape(), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange(format!("pick_last index {bad} for last dim {n}")));
        }
        let data: Vec<f32> = idx.iter().enumerate().map(|(r, &i)| t.data()[r * n + i]).collect();
        let shape = vec![idx.len()];
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::PickLast(a, idx.to_vec()), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NotScalar {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut Vec<f32>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn acc_bcast(&self, grads: &mut [Option<Vec<f32>>], v: Var, scalar_side: bool, contrib: impl Iterator<Item = f32>) {
        if let Some(gv) = self.acc(grads, v) {
            if scalar_side {
                let s: f64 = contrib.map(|x| x as f64).sum();
                gv[0] += s as f32;
            } else {
                for (o, c) in gv.iter_mut().zip(contrib) {
                    *o += c;
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b, bc) => {
                self.acc_bcast(grads, a, bc == Bcast::Lhs, g.iter().copied());
                self.acc_bcast(grads, b, bc == Bcast::Rhs, g.iter().copied());
            }
            &Op::Sub(a, b, bc) => {
                self.acc_bcast(grads, a, bc == Bcast::Lhs, g.iter().copied());
                self.acc_bcast(grads, b, bc == Bcast::Rhs, g.iter().map(|x| -x));
            }
            &Op::Mul(a, b, bc) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let at = |j: usize| if bc == Bcast::Lhs { av[0] } else { av[j] };
                let bt = |j: usize| if bc == Bcast::Rhs { bv[0] } else { bv[j] };
                self.acc_bcast(
                    grads,
                    a,
                    bc == Bcast::Lhs,
                    g.iter().enumerate().map(|(j, &x)| x * bt(j)),
                );
                self.acc_bcast(
                    grads,
                    b,
                    bc == Bcast::Rhs,
                    g.iter().enumerate().map(|(j, &x)| x * at(j)),
                );
            }
            &Op::Div(a, b, bc) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let at = |j: usize| if bc == Bcast::Lhs { av[0] } else { av[j] };
                let bt = |j: usize| if bc == Bcast::Rhs { bv[0] } else { bv[j] };
                self.acc_bcast(
                    grads,
                    a,
                    bc == Bcast::Lhs,
                    g.iter().enumerate().map(|(j, &x)| x / bt(j)),
                );
                self.acc_bcast(
                    grads,
                    b,
                    bc == Bcast::Rhs,
                    g.iter().enumerate().map(|(j, &x)| -x * at(j) / (bt(j) * bt(j))),
                );
            }
            &Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    let n = gb.len();
                    let mut sums = vec![0.0f64; n];
                    for row in g.chunks(n) {
                        for (s, &x) in sums.iter_mut().zip(row) {
                            *s += x as f64;
                        }
                    }
                    for (o, s) in gb.iter_mut().zip(sums) {
                        *o += s as f32;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x * c;
                    }
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                if let Some(ga) = self.acc(grads, a) {
                    kernels::acc_a_bt(g, self.value(b).data(), ga, m, k, n);
                }
                if let Some(gb) = self.acc(grads, b) {
                    kernels::acc_at_b(self.value(a).data(), g, gb, m, k, n);
                }
            }
            &Op::Bmm { a, b, batch, m, k, n } => {
                if let Some(ga) = self.acc(grads, a) {
                    let bv = self.value(b).data();
                    for t in 0..batch {
                        kernels::acc_a_bt(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    let av = self.value(a).data();
                    for t in 0..batch {
                        kernels::acc_at_b(
                            &av[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            &Op::Transpose(a) => {
                let s = self.shape(a).to_vec();
                let (batch, m, n) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                if let Some(ga) = self.acc(grads, a) {
                    for t in 0..batch {
                        // g block is [n, m]; transpose back to [m, n]
                        let back = kernels::transpose2(&g[t * m * n..(t + 1) * m * n], n, m);
                        for (o, x) in ga[t * m * n..(t + 1) * m * n].iter_mut().zip(back) {
                            *o += x;
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            &Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                        *o += x * y;
                    }
                }
            }
            &Op::Log(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let av = self.value(a).data();
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(av) {
                        *o += x / y;
                    }
                }
            }
            &Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                        *o += x * (1.0 - y * y);
                    }
                }
            }
            &Op::Relu(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                        if y > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            &Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let s = g[0] / ga.len() as f32;
                    for o in ga.iter_mut() {
                        *o += s;
                    }
                }
            }
            &Op::SumLast(a) => {
                let n = self.value(a).last_dim();
                if let Some(ga) = self.acc(grads, a) {
                    for (row, &x) in ga.chunks_mut(n).zip(g) {
                        for o in row {
                            *o += x;
                        }
                    }
                }
            }
            Op::MaxLast(a, arg) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, (&j, &x)) in arg.iter().zip(g).enumerate() {
                        ga[r * n + j] += x;
                    }
                }
            }
            Op::Concat {
                inputs,
                sizes,
                outer,
                inner,
            } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &sz) in inputs.iter().zip(sizes) {
                    if let Some(gv) = self.acc(grads, v) {
                        for o in 0..*outer {
                            let src = &g[o * total * inner + offset * inner..][..sz * inner];
                            let dst = &mut gv[o * sz * inner..(o + 1) * sz * inner];
                            for (d, &x) in dst.iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    offset += sz;
                }
            }
            &Op::Slice {
                a,
                outer,
                inner,
                axis_len,
                start,
                len,
            } => {
                if let Some(ga) = self.acc(grads, a) {
                    for o in 0..outer {
                        let base = o * axis_len * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &x) in ga[base..base + len * inner].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                }
            }
            &Op::Softmax(a, temp) => {
                let n = self.value(a).last_dim();
                if let Some(ga) = self.acc(grads, a) {
                    for ((grow, yrow), orow) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = grow.iter().zip(yrow).map(|(&x, &y)| x as f64 * y as f64).sum();
                        for ((o, &x), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (x - s as f32) / temp;
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let n = self.value(a).last_dim();
                if let Some(ga) = self.acc(grads, a) {
                    for ((grow, yrow), orow) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s = kernels::sum64(grow) as f32;
                        for ((o, &x), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += x - math::expf(y) * s;
                        }
                    }
                }
            }
            Op::L2Normalize(a, norms, eps) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, ((grow, yrow), orow)) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)).enumerate() {
                        let norm = norms[r];
                        if norm < *eps {
                            continue;
                        }
                        let yg =
                            kernels::sum64(&grow.iter().zip(yrow).map(|(&x, &y)| x * y).collect::<Vec<_>>()) as f32;
                        for ((o, &x), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += (x - y * yg) / norm;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let inner = numel(&self.shape(*a)[1..]);
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g[r * inner..(r + 1) * inner];
                        for (d, &x) in ga[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                }
            }
            Op::PickLast(a, idx) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, (&j, &x)) in idx.iter().zip(g).enumerate() {
                        ga[r * n + j] += x;
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_row(r: &[f32], temperature: f32, out: &mut Vec<f32>) {
    let max = r.iter().fold(f32::NEG_INFINITY, |m, &x| if x > m { x } else { m });
    let t = temperature as f64;
    let exps: Vec<f64> = r.iter().map(|&x| math::exp((x - max) as f64 / t)).collect();
    let z: f64 = exps.iter().sum();
    out.extend(exps.iter().map(|&e| (e / z) as f32));
}

pub(crate) fn log_sum_exp(r: &[f32]) -> f64 {
    let max = r.iter().fold(f32::NEG_INFINITY, |m, &x| if x > m { x } else { m }) as f64;
    let z: f64 = r.iter().map(|&x| math::exp(x as f64 - max)).sum();
    max + math::ln(z)
}

pub(crate) fn l2_norm(r: &[f32]) -> f32 {
    math::sqrt(r.iter().map(|&x| x as f64 * x as f64).sum::<f64>()) as f32
}
