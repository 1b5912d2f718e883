//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every kernel application in evaluation order; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every node that requires one. Nodes built only from
//! constants carry no gradient and are skipped during the reverse sweep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, gemm_into, log_sum_exp};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

enum Op<T> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, batch: usize, trans_b: bool },
    SharedLeft { p: Var, h: Var, batch: usize },
    Add(Var, Var),
    AddBias(Var, Var),
    AddTiled(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Scale(Var, T),
    MulScalar(Var, Var),
    ScaleRows(Var, Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanGroups { x: Var, group: usize },
    Reshape(Var),
    L2NormalizeRows { x: Var, norms: Vec<T> },
    Conv2d { x: Var, w: Var, b: Var, spec: Conv2dSpec },
    Embedding { table: Var, ids: Vec<usize> },
    Patchify { x: Var, tokens: usize },
    CrossEntropy { logits: Var, targets: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every trainable parameter leaf, keyed by parameter name.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

fn rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn conv_out(size: usize, spec: Conv2dSpec, k: usize) -> usize {
    (size + 2 * spec.pad - k) / spec.stride + 1
}

/// Unfold one `[C, H, W]` image into `[C*k*k, OH*OW]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    img: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    spec: Conv2dSpec,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        dst[oy * ow + ox] =
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                T::zero()
                            } else {
                                img[(ci * h + iy as usize) * w + ix as usize]
                            };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    spec: Conv2dSpec,
    (oh, ow): (usize, usize),
    img: &mut [T],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let at = (ci * h + iy as usize) * w + ix as usize;
                        img[at] = img[at] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// Reads a parameter from the store. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        let trainable = store.is_trainable(name);
        Ok(self.push_with(value, Op::Param(name.to_string()), trainable))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `batch` independent products of row blocks: `a` is `[batch*m, k]`,
    /// `b` is `[batch*k, n]` (or `[batch*n, k]` with `trans_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, batch: usize, trans_b: bool) -> Result<Var> {
        let (ar, k) = rank2("batch_matmul", self.value(a))?;
        let (br, bc) = rank2("batch_matmul", self.value(b))?;
        let bad = || Error::shape("batch_matmul", self.value(a).shape(), self.value(b).shape());
        if batch == 0 || ar % batch != 0 || br % batch != 0 {
            return Err(bad());
        }
        let m = ar / batch;
        let (kb, n) = if trans_b { (bc, br / batch) } else { (br / batch, bc) };
        if kb != k {
            return Err(bad());
        }
        let mut out = Tensor::zeros(&[batch * m, n]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            for i in 0..batch {
                gemm_into(
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut od[i * m * n..(i + 1) * m * n],
                    (m, k, n),
                    false,
                    trans_b,
                    false,
                );
            }
        }
        Ok(self.push(out, Op::BatchMatMul { a, b, batch, trans_b }, &[a, b]))
    }

    /// Applies one shared `[m, L]` matrix to each of `batch` blocks of `h`
    /// (`[batch*L, d]`), producing `[batch*m, d]`.
    pub fn shared_left_matmul(&mut self, p: Var, h: Var, batch: usize) -> Result<Var> {
        let (m, l) = rank2("shared_left_matmul", self.value(p))?;
        let (hr, d) = rank2("shared_left_matmul", self.value(h))?;
        if hr != batch * l {
            return Err(Error::shape("shared_left_matmul", self.value(p).shape(), self.value(h).shape()));
        }
        let mut out = Tensor::zeros(&[batch * m, d]);
        {
            let (pv, hv) = (self.value(p).data(), self.value(h).data());
            let od = out.data_mut();
            for i in 0..batch {
                gemm_into(
                    pv,
                    &hv[i * l * d..(i + 1) * l * d],
                    &mut od[i * m * d..(i + 1) * m * d],
                    (m, l, d),
                    false,
                    false,
                    false,
                );
            }
        }
        Ok(self.push(out, Op::SharedLeft { p, h, batch }, &[p, h]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o = *o + bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    /// Adds an `[m, d]` block to every consecutive group of `m` rows of `x`.
    pub fn add_tiled(&mut self, x: Var, t: Var) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(t));
        if tv.is_empty() || xv.cols() != tv.cols() || xv.len() % tv.len() != 0 {
            return Err(Error::shape("add_tiled", xv.shape(), tv.shape()));
        }
        let mut out = xv.clone();
        for block in out.data_mut().chunks_mut(tv.len()) {
            for (o, &v) in block.iter_mut().zip(tv.data()) {
                *o = *o + v;
            }
        }
        Ok(self.push(out, Op::AddTiled(x, t), &[x, t]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = kernels::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Multiplies every element by a one-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", self.value(x).shape(), self.value(s).shape()));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * k);
        Ok(self.push(out, Op::MulScalar(x, s), &[x, s]))
    }

    /// Scales row `i` of `x` by `s[i]` (`s` has one value per row).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.len() != xv.rows() {
            return Err(Error::shape("scale_rows", xv.shape(), sv.shape()));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for (row, &k) in out.data_mut().chunks_mut(c).zip(sv.data()) {
            for v in row.iter_mut() {
                *v = *v * k;
            }
        }
        Ok(self.push(out, Op::ScaleRows(x, s), &[x, s]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::SoftmaxRows(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = rank2("slice_cols", xv)?;
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (r, _) = rank2("concat_cols", self.value(*first))?;
        let mut width = 0;
        for &p in parts {
            let (pr, pc) = rank2("concat_cols", self.value(p))?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            width += pc;
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, width], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Averages each consecutive group of `group` rows: `[n*group, d] -> [n, d]`.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, d) = rank2("mean_groups", xv)?;
        if group == 0 || r % group != 0 {
            return Err(Error::shape("mean_groups", xv.shape(), &[group]));
        }
        let n = r / group;
        let inv = T::one() / T::c(group as f64);
        let mut out = Tensor::zeros(&[n, d]);
        for (i, block) in xv.data().chunks(group * d).enumerate() {
            let dst = &mut out.data_mut()[i * d..(i + 1) * d];
            for row in block.chunks(d) {
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            for o in dst.iter_mut() {
                *o = *o * inv;
            }
        }
        Ok(self.push(out, Op::MeanGroups { x, group }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Scales each row to unit Euclidean norm; a zero row is degenerate.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            let n = kernels::dot(row, row).sqrt();
            if n == T::zero() || !n.is_finite() {
                return Err(Error::Degenerate(format!("row {i} has zero norm")));
            }
            for v in row.iter_mut() {
                *v = *v / n;
            }
            norms.push(n);
        }
        Ok(self.push(out, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    /// 2-D convolution: `x` is `[B, C, H, W]`, `w` is `[O, C, k, k]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 4 || wv.rank() != 4 || wv.shape()[1] != xv.shape()[1] || wv.shape()[2] != wv.shape()[3] {
            return Err(Error::shape("conv2d", xv.shape(), wv.shape()));
        }
        let (bsz, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (o, k) = (wv.shape()[0], wv.shape()[2]);
        if bv.len() != o || h + 2 * spec.pad < k || wd + 2 * spec.pad < k || spec.stride == 0 {
            return Err(Error::shape("conv2d", wv.shape(), bv.shape()));
        }
        let (oh, ow) = (conv_out(h, spec, k), conv_out(wd, spec, k));
        let p = oh * ow;
        let ckk = c * k * k;
        let mut cols = vec![T::zero(); ckk * p];
        let mut out = Tensor::zeros(&[bsz, o, oh, ow]);
        for i in 0..bsz {
            im2col(&xv.data()[i * c * h * wd..(i + 1) * c * h * wd], (c, h, wd), k, spec, (oh, ow), &mut cols);
            let dst = &mut out.data_mut()[i * o * p..(i + 1) * o * p];
            gemm_into(wv.data(), &cols, dst, (o, ckk, p), false, false, false);
            for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                let bias = bv.data()[oc];
                for v in chunk.iter_mut() {
                    *v = *v + bias;
                }
            }
        }
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, &[x, w, b]))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = rank2("embedding", tv)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary(format!("token id {id} outside vocabulary of {v}")));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Splits a `[B, C, H, W]` feature map into `tokens` contiguous row-major
    /// groups of spatial positions, giving `[B*tokens, C*(H*W/tokens)]`.
    pub fn patchify(&mut self, x: Var, tokens: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 || tokens == 0 || (xv.shape()[2] * xv.shape()[3]) % tokens != 0 {
            return Err(Error::shape("patchify", xv.shape(), &[tokens]));
        }
        let (b, c, s) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
        let per = s / tokens;
        let mut data = Vec::with_capacity(xv.len());
        for bi in 0..b {
            for t in 0..tokens {
                for ci in 0..c {
                    let base = (bi * c + ci) * s + t * per;
                    data.extend_from_slice(&xv.data()[base..base + per]);
                }
            }
        }
        let out = Tensor::new(vec![b * tokens, c * per], data)?;
        Ok(self.push(out, Op::Patchify { x, tokens }, &[x]))
    }

    /// Mean cross-entropy against per-row target distributions; a 1-element node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let loss = kernels::cross_entropy(self.value(logits), &targets)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets }, &[logits]))
    }

    /// Reverse sweep from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        root.value.ensure_finite("loss")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(name), true) = (&node.op, node.requires_grad) {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(name) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        params.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(a) {
                    let mut da = Tensor::zeros(av.shape());
                    gemm_into(g.data(), bv.data(), da.data_mut(), (m, n, k), false, true, false);
                    acc(a, da)?;
                }
                if self.wants(b) {
                    let mut db = Tensor::zeros(bv.shape());
                    gemm_into(av.data(), g.data(), db.data_mut(), (k, m, n), true, false, false);
                    acc(b, db)?;
                }
            }
            &Op::BatchMatMul { a, b, batch, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let m = av.shape()[0] / batch;
                let k = av.shape()[1];
                let n = g.cols();
                if self.wants(a) {
                    let mut da = Tensor::zeros(av.shape());
                    for i in 0..batch {
                        // dA = dC · Bᵀ, where B is [k, n] (or stored as [n, k]).
                        gemm_into(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                            (m, n, k),
                            false,
                            !trans_b,
                            false,
                        );
                    }
                    acc(a, da)?;
                }
                if self.wants(b) {
                    let mut db = Tensor::zeros(bv.shape());
                    for i in 0..batch {
                        let (ga, aa) = (&g.data()[i * m * n..(i + 1) * m * n], &av.data()[i * m * k..(i + 1) * m * k]);
                        let dst = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // B stored [n, k]: dB = dCᵀ · A.
                            gemm_into(ga, aa, dst, (n, m, k), true, false, false);
                        } else {
                            gemm_into(aa, ga, dst, (k, m, n), true, false, false);
                        }
                    }
                    acc(b, db)?;
                }
            }
            &Op::SharedLeft { p, h, batch } => {
                let (pv, hv) = (self.value(p), self.value(h));
                let (m, l) = (pv.shape()[0], pv.shape()[1]);
                let d = hv.shape()[1];
                if self.wants(p) {
                    let mut dp = Tensor::zeros(pv.shape());
                    for i in 0..batch {
                        gemm_into(
                            &g.data()[i * m * d..(i + 1) * m * d],
                            &hv.data()[i * l * d..(i + 1) * l * d],
                            dp.data_mut(),
                            (m, d, l),
                            false,
                            true,
                            true,
                        );
                    }
                    acc(p, dp)?;
                }
                if self.wants(h) {
                    let mut dh = Tensor::zeros(hv.shape());
                    for i in 0..batch {
                        gemm_into(
                            pv.data(),
                            &g.data()[i * m * d..(i + 1) * m * d],
                            &mut dh.data_mut()[i * l * d..(i + 1) * l * d],
                            (l, m, d),
                            true,
                            false,
                            false,
                        );
                    }
                    acc(h, dh)?;
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    acc(a, g.clone())?;
                }
                if self.wants(b) {
                    acc(b, g.clone())?;
                }
            }
            &Op::AddBias(x, b) => {
                if self.wants(x) {
                    acc(x, g.clone())?;
                }
                if self.wants(b) {
                    let bv = self.value(b);
                    let mut db = vec![T::zero(); bv.len()];
                    for row in g.data().chunks(bv.len()) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    acc(b, Tensor::new(bv.shape().to_vec(), db)?)?;
                }
            }
            &Op::AddTiled(x, t) => {
                if self.wants(x) {
                    acc(x, g.clone())?;
                }
                if self.wants(t) {
                    let tv = self.value(t);
                    let mut dt = Tensor::zeros(tv.shape());
                    for block in g.data().chunks(tv.len()) {
                        for (d, &v) in dt.data_mut().iter_mut().zip(block) {
                            *d = *d + v;
                        }
                    }
                    acc(t, dt)?;
                }
            }
            &Op::Relu(x) => {
                let dx = self.value(x).zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() })?;
                acc(x, dx)?;
            }
            &Op::Sigmoid(x) => {
                let dx = node.value.zip_map(g, |s, gv| gv * s * (T::one() - s))?;
                acc(x, dx)?;
            }
            &Op::Exp(x) => {
                let dx = node.value.zip_map(g, |y, gv| gv * y)?;
                acc(x, dx)?;
            }
            &Op::Scale(x, s) => acc(x, g.map(|v| v * s))?,
            &Op::MulScalar(x, s) => {
                let k = self.value(s).data()[0];
                if self.wants(x) {
                    acc(x, g.map(|v| v * k))?;
                }
                if self.wants(s) {
                    let ds = kernels::dot(g.data(), self.value(x).data());
                    acc(s, Tensor::new(self.value(s).shape().to_vec(), vec![ds])?)?;
                }
            }
            &Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(x), self.value(s));
                let c = xv.cols();
                if self.wants(x) {
                    let mut dx = g.clone();
                    for (row, &k) in dx.data_mut().chunks_mut(c).zip(sv.data()) {
                        for v in row.iter_mut() {
                            *v = *v * k;
                        }
                    }
                    acc(x, dx)?;
                }
                if self.wants(s) {
                    let ds: Vec<T> = g
                        .data()
                        .chunks(c)
                        .zip(xv.data().chunks(c))
                        .map(|(gr, xr)| kernels::dot(gr, xr))
                        .collect();
                    acc(s, Tensor::new(sv.shape().to_vec(), ds)?)?;
                }
            }
            &Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)) {
                    let inner = kernels::dot(drow, yrow);
                    for (d, &y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - inner);
                    }
                }
                acc(x, dx)?;
            }
            &Op::Transpose(x) => acc(x, g.transpose2()?)?,
            &Op::SliceCols { x, start } => {
                let xv = self.value(x);
                let c = xv.cols();
                let len = g.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (drow, grow) in dx.data_mut().chunks_mut(c).zip(g.data().chunks(len)) {
                    drow[start..start + len].copy_from_slice(grow);
                }
                acc(x, dx)?;
            }
            Op::ConcatCols(parts) => {
                let width = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let pc = pv.cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(pv.len());
                        for grow in g.data().chunks(width) {
                            dp.extend_from_slice(&grow[offset..offset + pc]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), dp)?)?;
                    }
                    offset += pc;
                }
            }
            &Op::MeanGroups { x, group } => {
                let d = g.cols();
                let inv = T::one() / T::c(group as f64);
                let mut dx = Tensor::zeros(self.value(x).shape());
                for (i, block) in dx.data_mut().chunks_mut(group * d).enumerate() {
                    let grow = g.row(i);
                    for row in block.chunks_mut(d) {
                        for (o, &v) in row.iter_mut().zip(grow) {
                            *o = v * inv;
                        }
                    }
                }
                acc(x, dx)?;
            }
            &Op::Reshape(x) => acc(x, g.clone().reshape(self.value(x).shape())?)?,
            Op::L2NormalizeRows { x, norms } => {
                let c = node.value.cols();
                let mut dx = g.clone();
                for ((drow, yrow), &n) in dx.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)).zip(norms) {
                    let inner = kernels::dot(drow, yrow);
                    for (d, &y) in drow.iter_mut().zip(yrow) {
                        *d = (*d - y * inner) / n;
                    }
                }
                acc(*x, dx)?;
            }
            &Op::Conv2d { x, w, b, spec } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (bsz, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (o, k) = (wv.shape()[0], wv.shape()[2]);
                let (oh, ow) = (g.shape()[2], g.shape()[3]);
                let p = oh * ow;
                let ckk = c * k * k;
                if self.wants(b) {
                    let mut db = vec![T::zero(); o];
                    for i in 0..bsz {
                        for (oc, chunk) in g.data()[i * o * p..(i + 1) * o * p].chunks(p).enumerate() {
                            db[oc] = db[oc] + chunk.iter().copied().sum::<T>();
                        }
                    }
                    acc(b, Tensor::new(vec![o], db)?)?;
                }
                let (need_w, need_x) = (self.wants(w), self.wants(x));
                if need_w || need_x {
                    let mut cols = vec![T::zero(); ckk * p];
                    let mut dcols = vec![T::zero(); ckk * p];
                    let mut dw = Tensor::zeros(wv.shape());
                    let mut dx = Tensor::zeros(if need_x { xv.shape() } else { &[0] });
                    let img_len = c * h * wd;
                    for i in 0..bsz {
                        let gi = &g.data()[i * o * p..(i + 1) * o * p];
                        if need_w {
                            im2col(&xv.data()[i * img_len..(i + 1) * img_len], (c, h, wd), k, spec, (oh, ow), &mut cols);
                            gemm_into(gi, &cols, dw.data_mut(), (o, p, ckk), false, true, true);
                        }
                        if need_x {
                            gemm_into(wv.data(), gi, &mut dcols, (ckk, o, p), true, false, false);
                            col2im(&dcols, (c, h, wd), k, spec, (oh, ow), &mut dx.data_mut()[i * img_len..(i + 1) * img_len]);
                        }
                    }
                    if need_w {
                        acc(w, dw)?;
                    }
                    if need_x {
                        acc(x, dx)?;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (&id, grow) in ids.iter().zip(g.data().chunks(d)) {
                    for (o, &v) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(grow) {
                        *o = *o + v;
                    }
                }
                acc(*table, dt)?;
            }
            &Op::Patchify { x, tokens } => {
                let xv = self.value(x);
                let (b, c, s) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
                let per = s / tokens;
                let mut dx = Tensor::zeros(xv.shape());
                let mut src = g.data().chunks(per);
                for bi in 0..b {
                    for t in 0..tokens {
                        for ci in 0..c {
                            let base = (bi * c + ci) * s + t * per;
                            let chunk = src.next().expect("patchify gradient length");
                            dx.data_mut()[base..base + per].copy_from_slice(chunk);
                        }
                    }
                }
                acc(x, dx)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.data()[0] / T::c(lv.rows() as f64);
                let mut dl = lv.clone();
                for (row, t) in dl.data_mut().chunks_mut(c).zip(targets.data().chunks(c)) {
                    let lse = log_sum_exp(row);
                    let mass: T = t.iter().copied().sum();
                    for (v, &p) in row.iter_mut().zip(t) {
                        *v = ((*v - lse).exp() * mass - p) * scale;
                    }
                }
                acc(*logits, dl)?;
            }
        }
        Ok(())
    }
}
