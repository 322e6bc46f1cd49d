//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] is a Wengert list: every operation appends its output tensor
//! to an arena and records a node describing how to push gradients back to
//! its inputs. [`Tape::backward`] walks the nodes once in reverse. Gradients
//! only flow into subgraphs that can reach a differentiation target, so a
//! constant-detached branch always reads back a zero gradient.
//!
//! The op set is exactly what the Q-network needs: dense and convolutional
//! linear maps, the transposed convolution for the decoder, and a handful of
//! elementwise / reduction primitives for the four-part loss.

pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon inside `log` for the cross-entropy loss.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A named trainable tensor. The optimizer and the gradient clipper work on
/// slices of these; the tape reads them in via [`Tape::param`].
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Parameter {
        let mut tensor = tensor;
        tensor.set_requires_grad(true);
        Parameter {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Matmul { a: usize, b: usize, out: usize },
    Conv2d { x: usize, k: usize, stride: usize, out: usize },
    Deconv2d { x: usize, k: usize, stride: usize, out: usize },
    Relu { x: usize, out: usize },
    SoftmaxRows { x: usize, out: usize },
    Dot { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Scale { x: usize, factor: f64, out: usize },
    MseSum { a: usize, b: usize, out: usize },
    CrossEntropy { target: usize, pred: usize, out: usize },
    Frobenius { x: usize, out: usize },
    Transpose { x: usize, out: usize },
    Reshape { x: usize, out: usize },
    StackRows { rows: Vec<usize>, out: usize },
}

impl Node {
    fn out(&self) -> usize {
        match self {
            Node::Matmul { out, .. }
            | Node::Conv2d { out, .. }
            | Node::Deconv2d { out, .. }
            | Node::Relu { out, .. }
            | Node::SoftmaxRows { out, .. }
            | Node::Dot { out, .. }
            | Node::Add { out, .. }
            | Node::Scale { out, .. }
            | Node::MseSum { out, .. }
            | Node::CrossEntropy { out, .. }
            | Node::Frobenius { out, .. }
            | Node::Transpose { out, .. }
            | Node::Reshape { out, .. }
            | Node::StackRows { out, .. } => *out,
        }
    }
}

/// Recorded computation. Create one per forward pass; they are cheap.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    needs: Vec<bool>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, t: Tensor, needs: bool) -> usize {
        let n = t.numel();
        self.vals.push(t);
        self.grads.push(vec![0.0; n]);
        self.needs.push(needs);
        self.vals.len() - 1
    }

    /// Records a tensor as-is; it is a differentiation target iff it has
    /// `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        Var(self.push(t, needs))
    }

    /// Records a tensor with gradients disabled, detaching it from whatever
    /// produced it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        Var(self.push(t, false))
    }

    /// Records a trainable parameter's current value.
    pub fn param(&mut self, p: &Parameter) -> Var {
        let mut t = p.tensor.clone();
        t.set_requires_grad(true);
        Var(self.push(t, true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.vals[v.0].data()
    }

    /// Value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.vals[v.0].numel(), 1);
        self.vals[v.0].data()[0]
    }

    /// Gradient accumulated for `v` by [`Tape::backward`] (zeros before).
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn needs_any(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.needs[v])
    }

    // ── Operations ───────────────────────────────────────────────────────

    /// `[m x k] . [k x n] -> [m x n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.vals[a.0].shape(), self.vals[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.vals[a.0].data(), self.vals[b.0].data(), m, k, n, &mut out);
        let needs = self.needs_any(&[a.0, b.0]);
        let id = self.push(Tensor::new(vec![m, n], out)?, needs);
        self.nodes.push(Node::Matmul { a: a.0, b: b.0, out: id });
        Ok(Var(id))
    }

    /// Valid cross-correlation: `[c x h x w]` with kernels `[f x c x kh x kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.vals[x.0].shape(), self.vals[k.0].shape());
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be at least 1"));
        }
        if sx.len() != 3 || sk.len() != 4 || sk[1] != sx[0] || sk[2] > sx[1] || sk[3] > sx[2] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        let (oh, ow) = (kernels::conv_out(h, kh, stride), kernels::conv_out(w, kw, stride));
        let mut out = vec![0.0; f * oh * ow];
        kernels::conv2d(
            self.vals[x.0].data(),
            self.vals[k.0].data(),
            c, h, w, f, kh, kw, stride,
            &mut out,
        );
        let needs = self.needs_any(&[x.0, k.0]);
        let id = self.push(Tensor::new(vec![f, oh, ow], out)?, needs);
        self.nodes.push(Node::Conv2d { x: x.0, k: k.0, stride, out: id });
        Ok(Var(id))
    }

    /// Transposed convolution, the exact adjoint of [`Tape::conv2d`]:
    /// `[f x h x w]` with kernels `[f x c x kh x kw]` -> `[c x oh x ow]`.
    pub fn deconv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.vals[x.0].shape(), self.vals[k.0].shape());
        if stride == 0 {
            return Err(Error::contract("deconv2d: stride must be at least 1"));
        }
        if sx.len() != 3 || sk.len() != 4 || sk[0] != sx[0] {
            return Err(Error::Dimension {
                op: "deconv2d",
                lhs: sx.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        let (f, h, w) = (sx[0], sx[1], sx[2]);
        let (c, kh, kw) = (sk[1], sk[2], sk[3]);
        let (oh, ow) = (kernels::deconv_out(h, kh, stride), kernels::deconv_out(w, kw, stride));
        let mut out = vec![0.0; c * oh * ow];
        kernels::deconv2d(
            self.vals[x.0].data(),
            self.vals[k.0].data(),
            f, h, w, c, kh, kw, stride,
            &mut out,
        );
        let needs = self.needs_any(&[x.0, k.0]);
        let id = self.push(Tensor::new(vec![c, oh, ow], out)?, needs);
        self.nodes.push(Node::Deconv2d { x: x.0, k: k.0, stride, out: id });
        Ok(Var(id))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = &self.vals[x.0];
        let out: Vec<f64> = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs[x.0];
        let id = self.push(Tensor::new(shape, out)?, needs);
        self.nodes.push(Node::Relu { x: x.0, out: id });
        Ok(Var(id))
    }

    /// Softmax over the last axis, numerically stabilized per row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = &self.vals[x.0];
        let shape = t.shape().to_vec();
        if shape.is_empty() || *shape.last().unwrap() == 0 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                lhs: shape,
                rhs: vec![],
            });
        }
        let n = *shape.last().unwrap();
        let mut out = vec![0.0; t.numel()];
        for (row, orow) in t.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_row(row, orow);
        }
        let needs = self.needs[x.0];
        let id = self.push(Tensor::new(shape, out)?, needs);
        self.nodes.push(Node::SoftmaxRows { x: x.0, out: id });
        Ok(Var(id))
    }

    /// Inner product of two same-shape tensors; scalar output.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::Dimension {
                op: "dot",
                lhs: self.vals[a.0].shape().to_vec(),
                rhs: self.vals[b.0].shape().to_vec(),
            });
        }
        let s: f64 = self.vals[a.0]
            .data()
            .iter()
            .zip(self.vals[b.0].data())
            .map(|(x, y)| x * y)
            .sum();
        let needs = self.needs_any(&[a.0, b.0]);
        let id = self.push(Tensor::scalar(s), needs);
        self.nodes.push(Node::Dot { a: a.0, b: b.0, out: id });
        Ok(Var(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::Dimension {
                op: "add",
                lhs: self.vals[a.0].shape().to_vec(),
                rhs: self.vals[b.0].shape().to_vec(),
            });
        }
        let out: Vec<f64> = self.vals[a.0]
            .data()
            .iter()
            .zip(self.vals[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.vals[a.0].shape().to_vec();
        let needs = self.needs_any(&[a.0, b.0]);
        let id = self.push(Tensor::new(shape, out)?, needs);
        self.nodes.push(Node::Add { a: a.0, b: b.0, out: id });
        Ok(Var(id))
    }

    /// `a - b`, composed from `add` and `scale`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = &self.vals[x.0];
        let out: Vec<f64> = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs[x.0];
        let id = self.push(Tensor::new(shape, out)?, needs);
        self.nodes.push(Node::Scale { x: x.0, factor, out: id });
        Ok(Var(id))
    }

    /// Sum of squared differences (no averaging); scalar output.
    pub fn mse_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::Dimension {
                op: "mse_sum",
                lhs: self.vals[a.0].shape().to_vec(),
                rhs: self.vals[b.0].shape().to_vec(),
            });
        }
        let s: f64 = self.vals[a.0]
            .data()
            .iter()
            .zip(self.vals[b.0].data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs_any(&[a.0, b.0]);
        let id = self.push(Tensor::scalar(s), needs);
        self.nodes.push(Node::MseSum { a: a.0, b: b.0, out: id });
        Ok(Var(id))
    }

    /// `-sum(target * ln(pred + eps))` with `eps = 1e-12`.
    ///
    /// `target` must be a distribution (sums to 1 within 1e-6) and is treated
    /// as a constant: no gradient flows into it.
    pub fn cross_entropy(&mut self, target: Var, pred: Var) -> Result<Var> {
        if self.vals[target.0].shape() != self.vals[pred.0].shape() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: self.vals[target.0].shape().to_vec(),
                rhs: self.vals[pred.0].shape().to_vec(),
            });
        }
        let tsum: f64 = self.vals[target.0].data().iter().sum();
        if (tsum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "cross_entropy: target must sum to 1 (got {})",
                tsum
            )));
        }
        let s: f64 = self.vals[target.0]
            .data()
            .iter()
            .zip(self.vals[pred.0].data())
            .map(|(t, p)| -t * (p + CROSS_ENTROPY_EPS).ln())
            .sum();
        let needs = self.needs[pred.0];
        let id = self.push(Tensor::scalar(s), needs);
        self.nodes.push(Node::CrossEntropy { target: target.0, pred: pred.0, out: id });
        Ok(Var(id))
    }

    /// Squared Frobenius norm (sum of squared entries); scalar output.
    pub fn l2_frobenius(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.vals[x.0].data().iter().map(|&v| v * v).sum();
        let needs = self.needs[x.0];
        let id = self.push(Tensor::scalar(s), needs);
        self.nodes.push(Node::Frobenius { x: x.0, out: id });
        Ok(Var(id))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.vals[x.0];
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs[x.0];
        let id = self.push(Tensor::new(vec![c, r], out)?, needs);
        self.nodes.push(Node::Transpose { x: x.0, out: id });
        Ok(Var(id))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = &self.vals[x.0];
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = t.data().to_vec();
        let needs = self.needs[x.0];
        let id = self.push(Tensor::new(shape, out)?, needs);
        self.nodes.push(Node::Reshape { x: x.0, out: id });
        Ok(Var(id))
    }

    /// Stacks same-length vectors into a `[rows x n]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("stack_rows: need at least one row"));
        }
        let n = self.vals[rows[0].0].numel();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = &self.vals[r.0];
            if t.shape().len() != 1 || t.numel() != n {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    lhs: self.vals[rows[0].0].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            out.extend_from_slice(t.data());
        }
        let needs = self.needs_any(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        let id = self.push(Tensor::new(vec![rows.len(), n], out)?, needs);
        self.nodes.push(Node::StackRows { rows: rows.iter().map(|r| r.0).collect(), out: id });
        Ok(Var(id))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Accumulates `d loss / d v` into every recorded tensor that can reach
    /// a differentiation target. `loss` must be scalar.
    ///
    /// Each call propagates through a fresh workspace and then adds its
    /// result onto the persistent buffers, so repeated calls accumulate
    /// cleanly; call [`Tape::zero_grads`] between training steps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.vals[loss.0].numel() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.vals[loss.0].shape()
            )));
        }
        let mut local: Vec<Vec<f64>> = self.vals.iter().map(|t| vec![0.0; t.numel()]).collect();
        local[loss.0][0] = 1.0;

        for ni in (0..self.nodes.len()).rev() {
            let out = self.nodes[ni].out();
            if !self.needs[out] {
                continue;
            }
            // The tape is in SSA form and consumers always sit later on it,
            // so by this point `out`'s gradient is final: take the buffer
            // instead of cloning it (the drained slot is skipped by the
            // leaf merge below because it is empty).
            let g = std::mem::take(&mut local[out]);

            match &self.nodes[ni] {
                Node::Matmul { a, b, out: _ } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.vals[a].shape()[0], self.vals[a].shape()[1]);
                    let n = self.vals[b].shape()[1];
                    if self.needs[a] {
                        kernels::matmul_nt(&g, self.vals[b].data(), m, n, k, &mut local[a]);
                    }
                    if self.needs[b] {
                        kernels::matmul_tn(self.vals[a].data(), &g, m, k, n, &mut local[b]);
                    }
                }
                Node::Conv2d { x, k, stride, out: _ } => {
                    let (x, k, stride) = (*x, *k, *stride);
                    let (sx, sk) = (self.vals[x].shape(), self.vals[k].shape());
                    let (c, h, w) = (sx[0], sx[1], sx[2]);
                    let (f, kh, kw) = (sk[0], sk[2], sk[3]);
                    if self.needs[x] {
                        kernels::conv2d_grad_input(
                            &g, self.vals[k].data(), c, h, w, f, kh, kw, stride, &mut local[x],
                        );
                    }
                    if self.needs[k] {
                        kernels::conv2d_grad_kernels(
                            &g, self.vals[x].data(), c, h, w, f, kh, kw, stride, &mut local[k],
                        );
                    }
                }
                Node::Deconv2d { x, k, stride, out: _ } => {
                    let (x, k, stride) = (*x, *k, *stride);
                    let (sx, sk) = (self.vals[x].shape(), self.vals[k].shape());
                    let (f, h, w) = (sx[0], sx[1], sx[2]);
                    let (c, kh, kw) = (sk[1], sk[2], sk[3]);
                    if self.needs[x] {
                        kernels::deconv2d_grad_input(
                            &g, self.vals[k].data(), f, h, w, c, kh, kw, stride, &mut local[x],
                        );
                    }
                    if self.needs[k] {
                        kernels::deconv2d_grad_kernels(
                            &g, self.vals[x].data(), f, h, w, c, kh, kw, stride, &mut local[k],
                        );
                    }
                }
                Node::Relu { x, out: _ } => {
                    if self.needs[*x] {
                        let xd = self.vals[*x].data();
                        for ((gx, &gi), &xv) in local[*x].iter_mut().zip(&g).zip(xd) {
                            if xv > 0.0 {
                                *gx += gi;
                            }
                        }
                    }
                }
                Node::SoftmaxRows { x, out } => {
                    if self.needs[*x] {
                        let y = self.vals[*out].data();
                        let n = *self.vals[*out].shape().last().unwrap();
                        for r in 0..y.len() / n {
                            let base = r * n;
                            let yrow = &y[base..base + n];
                            let grow = &g[base..base + n];
                            let s: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                            for ((gx, &yi), &gi) in
                                local[*x][base..base + n].iter_mut().zip(yrow).zip(grow)
                            {
                                *gx += yi * (gi - s);
                            }
                        }
                    }
                }
                Node::Dot { a, b, out: _ } => {
                    let gs = g[0];
                    if self.needs[*a] {
                        for (ga, bv) in local[*a].iter_mut().zip(self.vals[*b].data()) {
                            *ga += gs * bv;
                        }
                    }
                    if self.needs[*b] {
                        for (gb, av) in local[*b].iter_mut().zip(self.vals[*a].data()) {
                            *gb += gs * av;
                        }
                    }
                }
                Node::Add { a, b, out: _ } => {
                    if self.needs[*a] {
                        for (ga, gi) in local[*a].iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                    if self.needs[*b] {
                        for (gb, gi) in local[*b].iter_mut().zip(&g) {
                            *gb += gi;
                        }
                    }
                }
                Node::Scale { x, factor, out: _ } => {
                    if self.needs[*x] {
                        for (gx, gi) in local[*x].iter_mut().zip(&g) {
                            *gx += factor * gi;
                        }
                    }
                }
                Node::MseSum { a, b, out: _ } => {
                    let gs = g[0];
                    if self.needs[*a] {
                        let it = self.vals[*a].data().iter().zip(self.vals[*b].data());
                        for (ga, (x, y)) in local[*a].iter_mut().zip(it) {
                            *ga += 2.0 * gs * (x - y);
                        }
                    }
                    if self.needs[*b] {
                        let it = self.vals[*a].data().iter().zip(self.vals[*b].data());
                        for (gb, (x, y)) in local[*b].iter_mut().zip(it) {
                            *gb -= 2.0 * gs * (x - y);
                        }
                    }
                }
                Node::CrossEntropy { target, pred, out: _ } => {
                    // target is constant by contract; only pred gets gradient
                    if self.needs[*pred] {
                        let gs = g[0];
                        let it = self.vals[*target].data().iter().zip(self.vals[*pred].data());
                        for (gp, (t, p)) in local[*pred].iter_mut().zip(it) {
                            *gp -= gs * t / (p + CROSS_ENTROPY_EPS);
                        }
                    }
                }
                Node::Frobenius { x, out: _ } => {
                    if self.needs[*x] {
                        let gs = g[0];
                        for (gx, v) in local[*x].iter_mut().zip(self.vals[*x].data()) {
                            *gx += 2.0 * gs * v;
                        }
                    }
                }
                Node::Transpose { x, out: _ } => {
                    if self.needs[*x] {
                        let s = self.vals[*x].shape();
                        let (r, c) = (s[0], s[1]);
                        let lx = &mut local[*x];
                        for i in 0..r {
                            for j in 0..c {
                                lx[i * c + j] += g[j * r + i];
                            }
                        }
                    }
                }
                Node::Reshape { x, out: _ } => {
                    if self.needs[*x] {
                        for (gx, gi) in local[*x].iter_mut().zip(&g) {
                            *gx += gi;
                        }
                    }
                }
                Node::StackRows { rows, out: _ } => {
                    let n = g.len() / rows.len();
                    for (bi, &r) in rows.iter().enumerate() {
                        if self.needs[r] {
                            for (gr, gi) in local[r].iter_mut().zip(&g[bi * n..(bi + 1) * n]) {
                                *gr += gi;
                            }
                        }
                    }
                }
            }

            // `out` will not be visited again; fold its gradient into the
            // persistent buffer now so the taken slot stays consistent.
            for (p, f) in self.grads[out].iter_mut().zip(&g) {
                *p += f;
            }
        }
        // Merge what remains: leaves and never-reached vars. Slots drained
        // above are empty, so the inner zip is a no-op for them.
        for (persist, fresh) in self.grads.iter_mut().zip(&local) {
            for (p, f) in persist.iter_mut().zip(fresh) {
                *p += f;
            }
        }
        Ok(())
    }
}

/// Scales all parameter gradients so their joint L2 norm is at most
/// `max_norm`; returns the factor applied (1.0 when no clipping happens).
pub fn clip_gradients_by_global_norm(params: &mut [Parameter], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(Error::config(format!(
            "gradient clip norm must be positive, got {}",
            max_norm
        )));
    }
    let mut total = 0.0;
    for p in params.iter() {
        let g = p.tensor.grad().ok_or_else(|| {
            Error::contract(format!("parameter {} has no gradient to clip", p.name))
        })?;
        total += g.iter().map(|x| x * x).sum::<f64>();
    }
    let norm = total.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for p in params.iter_mut() {
        let mut g = p.tensor.grad().unwrap().to_vec();
        g.iter_mut().for_each(|x| *x *= factor);
        p.tensor.set_grad(Some(g))?;
    }
    Ok(factor)
}

/// Central finite-difference check of the analytic gradients produced by
/// `build`, which must construct the same scalar loss from the given
/// parameter leaves every time it is called.
///
/// Returns the worst relative error `|a - n| / max(1, |a|, |n|)` over all
/// parameter elements, with step `h = 1e-5`.
pub fn grad_check<F>(params: &mut [Parameter], build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::contract("grad_check: loss must be scalar"));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let eval = |params: &[Parameter]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = params.iter().map(|p| t.param(p)).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.scalar(l))
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        for ei in 0..params[pi].tensor.numel() {
            let orig = params[pi].tensor.data()[ei];
            params[pi].tensor.data_mut()[ei] = orig + h;
            let fp = eval(params)?;
            params[pi].tensor.data_mut()[ei] = orig - h;
            let fm = eval(params)?;
            params[pi].tensor.data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
