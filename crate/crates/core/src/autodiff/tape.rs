//! Wengert tape over tensors.
//!
//! Nodes are appended in evaluation order, so every node only references
//! earlier nodes and the reverse sweep is a single backwards pass over the
//! node list. The tape is generic over the element type; recording it over
//! [`Dual`](crate::tensor::Dual) numbers turns every gradient into a
//! gradient-plus-directional-derivative pair.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_grad_input, conv2d_grad_weight, Conv2d, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Linear(Var, Var),
    MatMul(Var, Var),
    Conv(Var, Var, Conv2d),
    Relu(Var),
    Reshape(Var),
    Columns(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        softmax: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; gradients flow to it only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds `bias` `(C)` along axis 1 of `x` `(N, C, ...)`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(bias).shape());
        if xs.len() < 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::shape("add_bias", xs, bs));
        }
        let inner: usize = xs[2..].iter().product();
        let channels = xs[1];
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += b[(i / inner) % channels];
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// `x · weightᵀ` for `x` `(N, in)` and `weight` `(out, in)`.
    pub fn linear(&mut self, x: Var, weight: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(weight).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", xs, ws));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        T::gemm(
            (n, din, dout),
            self.value(x).data(),
            (din, 1),
            self.value(weight).data(),
            (1, din),
            &mut out,
            (dout, 1),
            false,
        );
        let rg = self.any_grad(&[x, weight]);
        Ok(self.push(Tensor::from_raw(vec![n, dout], out), Op::Linear(x, weight), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, conv: Conv2d) -> Result<Var> {
        let value = conv2d(self.value(x), self.value(weight), conv)?;
        let rg = self.any_grad(&[x, weight]);
        Ok(self.push(value, Op::Conv(x, weight, conv), rg))
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v.primal() > 0.0 { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Flattens everything after the batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = vec![v.batch(), v.example_len()];
        self.reshape(x, shape)
    }

    /// Selects columns of a 2-D tensor.
    pub fn columns(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || idx.is_empty() || idx.iter().any(|&i| i >= xs[1]) {
            return Err(Error::Argument(format!(
                "column selection {idx:?} invalid for shape {xs:?}"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(xs[0] * idx.len());
        for r in 0..xs[0] {
            for &c in idx {
                out.push(src[r * xs[1] + c]);
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_raw(vec![xs[0], idx.len()], out),
            Op::Columns(x, idx.to_vec()),
            rg,
        ))
    }

    /// Per-example sums: `(N, ...)` to `(N)`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.example_len();
        let out: Vec<T> = v
            .data()
            .chunks(d)
            .map(|row| {
                let mut s = T::zero();
                for &e in row {
                    s += e;
                }
                s
            })
            .collect();
        let n = out.len();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_raw(vec![n], out), Op::SumRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() * T::from_f64(1.0 / v.len() as f64));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// `(N, C, H, W)` to `(N, C)` by spatial averaging.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Argument(format!(
                "global_avg_pool needs NCHW input, got {xs:?}"
            )));
        }
        let hw = xs[2] * xs[3];
        let inv = T::from_f64(1.0 / hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|plane| {
                let mut s = T::zero();
                for &e in plane {
                    s += e;
                }
                s * inv
            })
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_raw(vec![xs[0], xs[1]], out),
            Op::GlobalAvgPool(x),
            rg,
        ))
    }

    /// Per-example softmax cross-entropy `(N, K)` to `(N)`, computed as
    /// `logsumexp(z) - z_y`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let zs = self.value(logits).shape().to_vec();
        if zs.len() != 2 || zs[0] != labels.len() {
            return Err(Error::Argument(format!(
                "cross_entropy: logits {zs:?} with {} labels",
                labels.len()
            )));
        }
        let k = zs[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        let z = self.value(logits).data();
        let mut losses = Vec::with_capacity(zs[0]);
        let mut softmax = Vec::with_capacity(z.len());
        for (row, &y) in z.chunks(k).zip(labels) {
            let mut m = row[0];
            for &v in &row[1..] {
                if v.primal() > m.primal() {
                    m = v;
                }
            }
            let mut s = T::zero();
            for &v in row {
                s += (v - m).exp();
            }
            let lse = m + s.ln();
            for &v in row {
                softmax.push((v - lse).exp());
            }
            losses.push(lse - row[y]);
        }
        let n = losses.len();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::from_raw(vec![n], losses),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax: Tensor::from_raw(zs, softmax),
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let want = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    accumulate(&mut grads[a.0], g.mul(self.value(*b))?);
                }
                if want(b) {
                    accumulate(&mut grads[b.0], g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, f) => {
                if want(a) {
                    accumulate(&mut grads[a.0], g.scale(*f));
                }
            }
            Op::AddBias(x, bias) => {
                if want(x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if want(bias) {
                    let xs = self.value(*x).shape();
                    let inner: usize = xs[2..].iter().product();
                    let channels = xs[1];
                    let mut gb = vec![T::zero(); channels];
                    for (i, &v) in g.data().iter().enumerate() {
                        gb[(i / inner) % channels] += v;
                    }
                    accumulate(&mut grads[bias.0], Tensor::from_raw(vec![channels], gb));
                }
            }
            Op::Linear(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, din, dout) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                if want(x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(
                        (n, dout, din),
                        g.data(),
                        (dout, 1),
                        wv.data(),
                        (din, 1),
                        &mut dx,
                        (din, 1),
                        false,
                    );
                    accumulate(&mut grads[x.0], Tensor::from_raw(vec![n, din], dx));
                }
                if want(w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(
                        (dout, n, din),
                        g.data(),
                        (1, dout),
                        xv.data(),
                        (din, 1),
                        &mut dw,
                        (din, 1),
                        false,
                    );
                    accumulate(&mut grads[w.0], Tensor::from_raw(vec![dout, din], dw));
                }
            }
            Op::MatMul(a, b) => {
                if want(a) {
                    let bt = self.value(*b).transpose()?;
                    accumulate(&mut grads[a.0], g.matmul(&bt)?);
                }
                if want(b) {
                    let at = self.value(*a).transpose()?;
                    accumulate(&mut grads[b.0], at.matmul(g)?);
                }
            }
            Op::Conv(x, w, conv) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if want(x) {
                    accumulate(
                        &mut grads[x.0],
                        conv2d_grad_input(g, wv, xv.shape(), *conv)?,
                    );
                }
                if want(w) {
                    accumulate(
                        &mut grads[w.0],
                        conv2d_grad_weight(xv, g, wv.shape(), *conv)?,
                    );
                }
            }
            Op::Relu(x) => {
                if want(x) {
                    let dx = g.zip_map(out, "relu", |gv, yv| {
                        if yv.primal() > 0.0 {
                            gv
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Reshape(x) => {
                if want(x) {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], g.clone().reshape(shape)?);
                }
            }
            Op::Columns(x, idx) => {
                if want(x) {
                    let xs = self.value(*x).shape();
                    let (rows, cols) = (xs[0], xs[1]);
                    let mut dx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        for (j, &c) in idx.iter().enumerate() {
                            dx[r * cols + c] += g.data()[r * idx.len() + j];
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::from_raw(xs.to_vec(), dx));
                }
            }
            Op::SumRows(x) => {
                if want(x) {
                    let xv = self.value(*x);
                    let d = xv.example_len();
                    let mut dx = Vec::with_capacity(xv.len());
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat_n(gv, d));
                    }
                    accumulate(&mut grads[x.0], Tensor::from_raw(xv.shape().to_vec(), dx));
                }
            }
            Op::Sum(x) => {
                if want(x) {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], Tensor::full(shape, g.data()[0]));
                }
            }
            Op::Mean(x) => {
                if want(x) {
                    let xv = self.value(*x);
                    let gv = g.data()[0] * T::from_f64(1.0 / xv.len() as f64);
                    accumulate(&mut grads[x.0], Tensor::full(xv.shape().to_vec(), gv));
                }
            }
            Op::GlobalAvgPool(x) => {
                if want(x) {
                    let xs = self.value(*x).shape().to_vec();
                    let hw = xs[2] * xs[3];
                    let inv = T::from_f64(1.0 / hw as f64);
                    let mut dx = Vec::with_capacity(xs.iter().product());
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat_n(gv * inv, hw));
                    }
                    accumulate(&mut grads[x.0], Tensor::from_raw(xs, dx));
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                if want(logits) {
                    let k = softmax.shape()[1];
                    let mut dz = softmax.data().to_vec();
                    for (r, &y) in labels.iter().enumerate() {
                        dz[r * k + y] -= T::one();
                        let gr = g.data()[r];
                        for v in &mut dz[r * k..(r + 1) * k] {
                            *v *= gr;
                        }
                    }
                    accumulate(
                        &mut grads[logits.0],
                        Tensor::from_raw(softmax.shape().to_vec(), dz),
                    );
                }
            }
        }
        Ok(())
    }
}
