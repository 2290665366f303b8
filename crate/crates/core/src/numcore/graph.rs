//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation of one forward pass as a node in
//! topological order. Parameters are referenced from a borrowed
//! [`ParamStore`] rather than copied, so a forward pass over large weight
//! matrices costs no allocation for the weights themselves. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! the scalar loss with respect to every parameter and every input leaf
//! created with [`Graph::input`].

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Running statistics and hyperparameters of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    AddConst {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    ScaleRows {
        x: NodeId,
        factors: Vec<f64>,
    },
    Relu {
        x: NodeId,
    },
    Square {
        x: NodeId,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    SwapMiddle {
        x: NodeId,
        dims: [usize; 4],
    },
    Softmax {
        x: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        valid: Vec<bool>,
        count: usize,
        train: bool,
    },
    Bce {
        logits: NodeId,
        labels: Vec<f64>,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    RowCosine {
        a: NodeId,
        b: NodeId,
        norms_a: Vec<f64>,
        norms_b: Vec<f64>,
        eps: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    inputs: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn input(&self, id: NodeId) -> Option<&Tensor> {
        self.inputs.iter().find(|(n, _)| *n == id).map(|(_, t)| t)
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.value(*p),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let nid = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        nid
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, ng))
    }

    /// Batched product over the leading axis: `[B,m,k]·[B,k,n]`, or
    /// `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let bad = sa.len() != 3
            || sb.len() != 3
            || sa[0] != sb[0]
            || (!trans_b && sa[2] != sb[1])
            || (trans_b && sa[2] != sb[2]);
        if bad {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub { a, b }, ng))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.len() != vx.cols() || vb.ndim() != 1 {
            return Err(Error::dim("add_bias", vx.shape(), vb.shape()));
        }
        let c = vx.cols();
        let b = vb.data();
        let data = vx.data().iter().enumerate().map(|(i, v)| v + b[i % c]).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, ng))
    }

    /// Adds a constant tensor (e.g. an additive `-inf` attention mask).
    pub fn add_const(&mut self, x: NodeId, c: &Tensor) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.shape() != c.shape() {
            return Err(Error::dim("add_const", vx.shape(), c.shape()));
        }
        let data = vx.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::AddConst { x }, ng))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Scale { x, factor }, ng)
    }

    /// Multiplies row `i` (all axes but the last flattened) by `factors[i]`.
    pub fn scale_rows(&mut self, x: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        let vx = self.value(x);
        if factors.len() != vx.rows() {
            return Err(Error::dim("scale_rows", vx.shape(), &[factors.len()]));
        }
        let c = vx.cols();
        let data = vx.data().iter().enumerate().map(|(i, v)| v * factors[i / c]).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::ScaleRows { x, factors }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Relu { x }, ng)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v * v).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Square { x }, ng)
    }

    /// `x·W + b` with an optional activation.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId, act: Activation) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        let h = self.add_bias(h, b)?;
        Ok(match act {
            Activation::None => h,
            Activation::Relu => self.relu(h),
        })
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        let t = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(t, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    /// Row lookup into a 2-D table (embedding gather).
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let vt = self.value(table);
        if vt.ndim() != 2 {
            return Err(Error::dim("gather_rows", vt.shape(), &[2]));
        }
        let (n, c) = (vt.shape()[0], vt.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Range(format!(
                "gather index {bad} out of range for table of {n} rows"
            )));
        }
        if indices.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            data.extend_from_slice(vt.row(i));
        }
        let t = Tensor::new(vec![indices.len(), c], data)?;
        let ng = self.needs(table);
        Ok(self.push(t, Op::GatherRows { table, indices }, ng))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// `[a,b,c,d] -> [a,c,b,d]`; used to move attention heads ahead of
    /// sequence positions and back.
    pub fn swap_middle(&mut self, x: NodeId, dims: [usize; 4]) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.len() != dims.iter().product::<usize>() {
            return Err(Error::dim("swap_middle", vx.shape(), &dims));
        }
        let out = swap_middle_data(vx.data(), dims);
        let t = Tensor::new(vec![dims[0], dims[2], dims[1], dims[3]], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::SwapMiddle { x, dims }, ng))
    }

    /// Softmax over the last axis. `-inf` entries map to exactly zero; a row
    /// with no finite entry is a masking error.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let c = vx.cols();
        let mut out = vec![0.0; vx.len()];
        for (r, (src, dst)) in vx.data().chunks(c).zip(out.chunks_mut(c)).enumerate() {
            softmax_row(src, dst).map_err(|_| Error::Masking { row: r })?;
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax { x }, ng))
    }

    /// Batch normalization over the rows of a 2-D input.
    ///
    /// Rows flagged invalid are excluded from the batch statistics and produce
    /// all-zero outputs. In train mode the state's running statistics are
    /// updated from the batch mean and population variance.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BatchNormState,
        mode: Mode,
        valid: Option<&[bool]>,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.ndim() != 2 {
            return Err(Error::dim("batch_norm", vx.shape(), &[2]));
        }
        let (rows, d) = (vx.shape()[0], vx.shape()[1]);
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::dim("batch_norm", vx.shape(), self.value(gamma).shape()));
        }
        if state.running_mean.len() != d {
            return Err(Error::dim("batch_norm", vx.shape(), &[state.running_mean.len()]));
        }
        let valid: Vec<bool> = match valid {
            Some(v) if v.len() == rows => v.to_vec(),
            Some(v) => return Err(Error::dim("batch_norm mask", vx.shape(), &[v.len()])),
            None => vec![true; rows],
        };
        let count = valid.iter().filter(|&&v| v).count();
        let train = mode == Mode::Train;
        let xs = vx.data();
        let (mean, var) = if train {
            if count < 2 {
                return Err(Error::BatchSize { rows: count });
            }
            let mut mean = vec![0.0; d];
            for (r, row) in xs.chunks(d).enumerate() {
                if valid[r] {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; d];
            for (r, row) in xs.chunks(d).enumerate() {
                if valid[r] {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
            }
            var.iter_mut().for_each(|s| *s /= count as f64);
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * d];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            if !valid[r] {
                continue;
            }
            for j in 0..d {
                let h = (xs[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        if train {
            state.update(&mean, &var);
        }
        let t = Tensor::new(vec![rows, d], out)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                valid,
                count,
                train,
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy of logits against {0,1} labels, evaluated in
    /// logit space.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.len() != labels.len() {
            return Err(Error::dim("bce_with_logits", vl.shape(), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation(format!("label {bad} is not binary")));
        }
        let n = labels.len() as f64;
        let loss = vl.data().iter().zip(labels).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / n;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, ng)
    }

    /// Row-wise cosine similarity of two `[R,d]` tensors. Norms below `eps`
    /// are shifted up by `eps` so the gradient stays finite.
    pub fn row_cosine(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        self.same_shape("row_cosine", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let d = va.cols();
        let rows = va.rows();
        let guard = |n: f64| if n < eps { n + eps } else { n };
        let mut norms_a = Vec::with_capacity(rows);
        let mut norms_b = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for (ra, rb) in va.data().chunks(d).zip(vb.data().chunks(d)) {
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push(dot / (guard(na) * guard(nb)));
            norms_a.push(na);
            norms_b.push(nb);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::vector(out),
            Op::RowCosine {
                a,
                b,
                norms_a,
                norms_b,
                eps,
            },
            ng,
        ))
    }

    /// Propagates gradients from a scalar `loss` back to every parameter
    /// and input leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            params: vec![None; self.store.len()],
            inputs: Vec::new(),
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match node.value {
                    Value::Param(p) => match &mut out.params[p.0] {
                        // the same parameter may enter the tape through several leaves
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot => {
                            let shape = self.store.value(p).shape().to_vec();
                            *slot = Some(Tensor::new(shape, g)?);
                        }
                    },
                    Value::Owned(ref t) => {
                        out.inputs.push((NodeId(idx), Tensor::new(t.shape().to_vec(), g)?));
                    }
                },
                op => self.backprop(op, NodeId(idx), &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let n = self.value(id).len();
        grads[id.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl Fn(usize) -> f64) {
        if !self.needs(id) {
            return;
        }
        let buf = self.grad_buf(grads, id);
        for (i, v) in buf.iter_mut().enumerate() {
            *v += f(i);
        }
    }

    fn backprop(&self, op: &Op, this: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let buf = self.grad_buf(grads, *a);
                    gemm(m, n, k, g, false, bv, true, buf, 1.0);
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let buf = self.grad_buf(grads, *b);
                    gemm(k, m, n, av, true, g, false, buf, 1.0);
                }
            }
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let buf = self.grad_buf(grads, *a);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let di = &mut buf[i * m * k..(i + 1) * m * k];
                        // dA = dC·Bᵀ, or dC·B when B was already transposed
                        gemm(m, n, k, gi, false, bi, !*trans_b, di, 1.0);
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let buf = self.grad_buf(grads, *b);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let di = &mut buf[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B stored n×k: dB = dCᵀ·A
                            gemm(n, m, k, gi, true, ai, false, di, 1.0);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, di, 1.0);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |i| g[i]);
                self.accumulate(grads, *b, |i| g[i]);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |i| g[i]);
                self.accumulate(grads, *b, |i| -g[i]);
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, |i| g[i]);
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let buf = self.grad_buf(grads, *bias);
                    for (i, v) in g.iter().enumerate() {
                        buf[i % c] += v;
                    }
                }
            }
            Op::AddConst { x } | Op::Reshape { x } => {
                self.accumulate(grads, *x, |i| g[i]);
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, |i| g[i] * factor);
            }
            Op::ScaleRows { x, factors } => {
                let c = self.value(*x).cols();
                self.accumulate(grads, *x, |i| g[i] * factors[i / c]);
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |i| if xv[i] > 0.0 { g[i] } else { 0.0 });
            }
            Op::Square { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |i| 2.0 * xv[i] * g[i]);
            }
            Op::ConcatCols { parts } => {
                let rows = self.value(this).shape()[0];
                let total = self.value(this).shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.needs(p) {
                        let buf = self.grad_buf(grads, p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (d, s) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, indices } => {
                if self.needs(*table) {
                    let c = self.value(*table).cols();
                    let buf = self.grad_buf(grads, *table);
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, s) in buf[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SwapMiddle { x, dims } => {
                if self.needs(*x) {
                    let back = swap_middle_data(g, [dims[0], dims[2], dims[1], dims[3]]);
                    self.accumulate(grads, *x, |i| back[i]);
                }
            }
            Op::Softmax { x } => {
                if self.needs(*x) {
                    let y = self.value(this).data();
                    let c = self.value(this).cols();
                    let buf = self.grad_buf(grads, *x);
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(buf.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                valid,
                count,
                train,
            } => {
                let d = inv_std.len();
                let rows = valid.len();
                let gv = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; d];
                let mut sum_dy_xhat = vec![0.0; d];
                for r in (0..rows).filter(|&r| valid[r]) {
                    for j in 0..d {
                        sum_dy[j] += g[r * d + j];
                        sum_dy_xhat[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                if self.needs(*x) {
                    let buf = self.grad_buf(grads, *x);
                    let c = *count as f64;
                    for r in (0..rows).filter(|&r| valid[r]) {
                        for j in 0..d {
                            let i = r * d + j;
                            buf[i] += if *train {
                                gv[j] * inv_std[j] / c * (c * g[i] - sum_dy[j] - xhat[i] * sum_dy_xhat[j])
                            } else {
                                gv[j] * inv_std[j] * g[i]
                            };
                        }
                    }
                }
                self.accumulate(grads, *gamma, |j| sum_dy_xhat[j]);
                self.accumulate(grads, *beta, |j| sum_dy[j]);
            }
            Op::Bce { logits, labels } => {
                let p = self.value(*logits).data();
                let n = labels.len() as f64;
                self.accumulate(grads, *logits, |i| g[0] * (sigmoid(p[i]) - labels[i]) / n);
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, |_| g[0]);
            }
            Op::Mean { x } => {
                let n = self.value(*x).len() as f64;
                self.accumulate(grads, *x, |_| g[0] / n);
            }
            Op::RowCosine {
                a,
                b,
                norms_a,
                norms_b,
                eps,
            } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let d = self.value(*a).cols();
                let guard = |n: f64| if n < *eps { n + eps } else { n };
                for (src, other, norms, onorms, id) in [(av, bv, norms_a, norms_b, *a), (bv, av, norms_b, norms_a, *b)]
                {
                    if !self.needs(id) {
                        continue;
                    }
                    let buf = self.grad_buf(grads, id);
                    for r in 0..norms.len() {
                        let (s, o) = (&src[r * d..(r + 1) * d], &other[r * d..(r + 1) * d]);
                        let (ns, no) = (norms[r], onorms[r]);
                        let (gs, go) = (guard(ns), guard(no));
                        let dot: f64 = s.iter().zip(o).map(|(x, y)| x * y).sum();
                        // d/ds [dot / (gs·go)] with d gs/ds = s/ns
                        let radial = if ns > 0.0 { dot / (gs * gs * go * ns) } else { 0.0 };
                        for j in 0..d {
                            buf[r * d + j] += g[r] * (o[j] / (gs * go) - radial * s[j]);
                        }
                    }
                }
            }
        }
    }
}

fn swap_middle_data(src: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [a, b, c, d] = dims;
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let s = ((i * b + j) * c + k) * d;
                let t = ((i * c + k) * b + j) * d;
                out[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    out
}

/// Writes the softmax of `src` into `dst`; errors when no entry is finite.
pub(crate) fn softmax_row(src: &[f64], dst: &mut [f64]) -> std::result::Result<(), ()> {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(());
    }
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y·ln σ(p) + (1-y)·ln(1-σ(p))]` without forming σ.
fn bce_term(p: f64, y: f64) -> f64 {
    p.max(0.0) - p * y + (-p.abs()).exp().ln_1p()
}
