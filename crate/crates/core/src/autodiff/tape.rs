//! Reverse-mode tape.
//!
//! Nodes are appended in execution order, so reverse index order is a valid
//! topological order for backpropagation. Leaf gradients accumulate across
//! `backward` calls until [`Tape::zero_grad`]; intermediate gradients are
//! rebuilt on every call.

use super::tensor::{gemm, MatMut, MatRef, Real, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    AddBias(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        tokens: usize,
        heads: Vec<(usize, usize)>,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: T,
        probs: Vec<T>,
    },
    AssembleTokens {
        patches: Var,
        cls: Var,
        pos: Var,
        batch: usize,
    },
    GatherRows(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    layer_norm_eps: T,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), layer_norm_eps: T::from_f64(1e-6) }
    }

    pub fn with_layer_norm_eps(eps: f64) -> Self {
        Self { layer_norm_eps: T::from_f64(eps), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node; outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass; `None` if nothing reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Softmax(x) | Op::Gelu(x) | Op::GatherRows(x, _) => {
                vec![*x]
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::AssembleTokens { patches, cls, pos, .. } => vec![*patches, *cls, *pos],
        }
    }

    fn shape_err(msg: String) -> AutodiffError {
        AutodiffError::Shape(msg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Self::shape_err(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Self::shape_err(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|p| *p * c).collect())?;
        self.push(out, Op::Scale(x, c), "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if bv.len() != n {
            return Err(Self::shape_err(format!("bias of {} for {:?}", bv.len(), xv.shape())));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            add_into(row, bv.data());
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols();
        if g.len() != n || b.len() != n {
            return Err(Self::shape_err(format!(
                "layer_norm affine {}/{} for {:?}",
                g.len(),
                b.len(),
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + self.layer_norm_eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, "layer_norm")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let n = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(out, Op::Softmax(x), "softmax")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (c, a) = (T::from_f64(GELU_C), T::from_f64(GELU_A));
        let half = T::from_f64(0.5);
        let data =
            xv.data().iter().map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh())).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Gelu(x), "gelu")
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * tokens, width]`; `heads` lists the column
    /// range of each head. Scores are scaled by `1/sqrt(head width)`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        tokens: usize,
        heads: &[(usize, usize)],
    ) -> Result<Var, AutodiffError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let width = qv.cols();
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(Self::shape_err(format!(
                "attention q{:?} k{:?} v{:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        if qv.rows() != batch * tokens {
            return Err(Self::shape_err(format!("attention rows {} != {batch} x {tokens}", qv.rows())));
        }
        if heads.iter().any(|&(s, e)| s >= e || e > width) {
            return Err(Self::shape_err(format!("attention head ranges {heads:?} for width {width}")));
        }
        let tt = tokens * tokens;
        let mut probs = vec![T::zero(); batch * heads.len() * tt];
        let mut out = vec![T::zero(); qv.len()];
        for b in 0..batch {
            let base = b * tokens * width;
            for (h, &(s, e)) in heads.iter().enumerate() {
                let w = e - s;
                let scale = T::from_f64(1.0 / (w as f64).sqrt());
                let p = &mut probs[(b * heads.len() + h) * tt..][..tt];
                let qh = head_view(qv.data(), base + s, tokens, w, width);
                let kh = head_view(kv.data(), base + s, tokens, w, width);
                gemm(scale, qh, kh.t(), T::zero(), MatMut::dense(p, tokens, tokens));
                for row in p.chunks_mut(tokens) {
                    softmax_in_place(row);
                }
                let vh = head_view(vv.data(), base + s, tokens, w, width);
                gemm(
                    T::one(),
                    MatRef::dense(p, tokens, tokens),
                    vh,
                    T::zero(),
                    MatMut { data: &mut out, offset: base + s, rows: tokens, cols: w, rs: width, cs: 1 },
                );
            }
        }
        let out = Tensor::new(qv.shape().to_vec(), out)?;
        self.push(out, Op::Attention { q, k, v, batch, tokens, heads: heads.to_vec(), probs }, "attention")
    }

    /// Mean cross-entropy of `[m, classes]` logits against integer labels,
    /// with optional label smoothing.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        smoothing: f64,
    ) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        let (m, c) = (lv.rows(), lv.cols());
        if targets.len() != m {
            return Err(Self::shape_err(format!("{} labels for {m} rows", targets.len())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(AutodiffError::Contract(format!("label {t} out of range for {c} classes")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(AutodiffError::Contract(format!("label smoothing {smoothing} outside [0, 1)")));
        }
        let eps = T::from_f64(smoothing);
        let off = eps / T::from_f64(c as f64);
        let on = T::one() - eps + off;
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0f64;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            let mut row_loss = T::zero();
            for (j, v) in row.iter_mut().enumerate() {
                let logp = *v - lse;
                let target = if j == targets[r] { on } else { off };
                row_loss = row_loss - target * logp;
                *v = logp.exp();
            }
            loss += row_loss.as_f64();
        }
        let out = Tensor::scalar(T::from_f64(loss / m as f64));
        self.push(
            out,
            Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing: eps, probs },
            "cross_entropy",
        )
    }

    /// Builds the `[batch * tokens, e]` token matrix: a class token followed by
    /// the patch embeddings of each sample, plus positional embeddings.
    pub fn assemble_tokens(
        &mut self,
        patches: Var,
        cls: Var,
        pos: Var,
        batch: usize,
    ) -> Result<Var, AutodiffError> {
        let (pv, cv, posv) = (self.value(patches), self.value(cls), self.value(pos));
        let e = pv.cols();
        let tokens = posv.rows();
        let per_sample = tokens - 1;
        if cv.len() != e || posv.cols() != e || pv.rows() != batch * per_sample {
            return Err(Self::shape_err(format!(
                "assemble_tokens patches{:?} cls{:?} pos{:?} batch {batch}",
                pv.shape(),
                cv.shape(),
                posv.shape()
            )));
        }
        let mut out = vec![T::zero(); batch * tokens * e];
        for b in 0..batch {
            for t in 0..tokens {
                let dst = &mut out[(b * tokens + t) * e..][..e];
                let src = if t == 0 { cv.data() } else { &pv.data()[(b * per_sample + t - 1) * e..][..e] };
                let p = &posv.data()[t * e..][..e];
                for j in 0..e {
                    dst[j] = src[j] + p[j];
                }
            }
        }
        let out = Tensor::new(vec![batch * tokens, e], out)?;
        self.push(out, Op::AssembleTokens { patches, cls, pos, batch }, "assemble_tokens")
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let n = xv.cols();
        if let Some(r) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Self::shape_err(format!("row {r} of {:?}", xv.shape())));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&xv.data()[r * n..(r + 1) * n]);
        }
        let out = Tensor::new(vec![rows.len(), n], data)?;
        self.push(out, Op::GatherRows(x, rows.to_vec()), "gather_rows")
    }

    /// Backpropagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NotScalar(lv.shape().to_vec()));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[loss.0] {
            Some(g) => g[0] = g[0] + T::one(),
            slot @ None => *slot = Some(vec![T::one()]),
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Split borrows: node data is read while grads of parents are written.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[i];
        let out = &node.value;
        let mut slot = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let n = nodes[v.0].value.len();
                let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                slot(*a, &mut |da| {
                    gemm(
                        T::one(),
                        MatRef::dense(g, m, n),
                        MatRef::dense(bv.data(), k, n).t(),
                        T::one(),
                        MatMut::dense(da, m, k),
                    )
                });
                slot(*b, &mut |db| {
                    gemm(
                        T::one(),
                        MatRef::dense(av.data(), m, k).t(),
                        MatRef::dense(g, m, n),
                        T::one(),
                        MatMut::dense(db, k, n),
                    )
                });
            }
            Op::Add(a, b) => {
                slot(*a, &mut |da| add_into(da, g));
                slot(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                slot(*a, &mut |da| {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(bv.data()) {
                        *d = *d + *gi * *y;
                    }
                });
                slot(*b, &mut |db| {
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(av.data()) {
                        *d = *d + *gi * *x;
                    }
                });
            }
            Op::Scale(x, c) => {
                slot(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d = *d + *gi * *c;
                    }
                });
            }
            Op::Sum(x) => {
                slot(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                });
            }
            Op::AddBias(x, b) => {
                let n = out.cols();
                slot(*x, &mut |dx| add_into(dx, g));
                slot(*b, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = out.cols();
                let gv = &nodes[gamma.0].value;
                slot(*gamma, &mut |dg| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + grow[j] * hrow[j];
                        }
                    }
                });
                slot(*beta, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
                slot(*x, &mut |dx| {
                    let inv_n = T::from_f64(1.0 / n as f64);
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..n {
                            let d = grow[j] * gv.data()[j];
                            mean_d = mean_d + d;
                            mean_dh = mean_dh + d * hrow[j];
                        }
                        mean_d = mean_d * inv_n;
                        mean_dh = mean_dh * inv_n;
                        let dst = &mut dx[r * n..(r + 1) * n];
                        for j in 0..n {
                            let d = grow[j] * gv.data()[j];
                            dst[j] = dst[j] + rstd[r] * (d - mean_d - hrow[j] * mean_dh);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = out.cols();
                slot(*x, &mut |dx| {
                    for ((grow, yrow), drow) in g.chunks(n).zip(out.data().chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum();
                        for j in 0..n {
                            drow[j] = drow[j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                let (c, a) = (T::from_f64(GELU_C), T::from_f64(GELU_A));
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                slot(*x, &mut |dx| {
                    for ((d, gi), &v) in dx.iter_mut().zip(g).zip(xv.data()) {
                        let th = (c * (v + a * v * v * v)).tanh();
                        let deriv = half * (T::one() + th)
                            + half * v * (T::one() - th * th) * c * (T::one() + three * a * v * v);
                        *d = *d + *gi * deriv;
                    }
                });
            }
            Op::Attention { q, k, v, batch, tokens, heads, probs } => {
                attention_backward(&nodes, &mut self.grads, g, (*q, *k, *v), *batch, *tokens, heads, probs);
            }
            Op::CrossEntropy { logits, targets, smoothing, probs } => {
                let c = out_cols_of(&nodes[logits.0].value);
                let m = targets.len();
                let scale = g[0] / T::from_f64(m as f64);
                let off = *smoothing / T::from_f64(c as f64);
                let on = T::one() - *smoothing + off;
                slot(*logits, &mut |dl| {
                    for (r, (drow, prow)) in dl.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        for j in 0..c {
                            let t = if j == targets[r] { on } else { off };
                            drow[j] = drow[j] + scale * (prow[j] - t);
                        }
                    }
                });
            }
            Op::AssembleTokens { patches, cls, pos, batch } => {
                let e = out.cols();
                let tokens = nodes[pos.0].value.rows();
                let per_sample = tokens - 1;
                slot(*cls, &mut |dc| {
                    for b in 0..*batch {
                        add_into(dc, &g[b * tokens * e..][..e]);
                    }
                });
                slot(*pos, &mut |dp| {
                    for b in 0..*batch {
                        add_into(dp, &g[b * tokens * e..][..tokens * e]);
                    }
                });
                slot(*patches, &mut |dpt| {
                    for b in 0..*batch {
                        add_into(
                            &mut dpt[b * per_sample * e..][..per_sample * e],
                            &g[(b * tokens + 1) * e..][..per_sample * e],
                        );
                    }
                });
            }
            Op::GatherRows(x, rows) => {
                let n = out.cols();
                slot(*x, &mut |dx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut dx[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                    }
                });
            }
        }
        self.nodes = nodes;
    }
}

fn out_cols_of<T: Real>(t: &Tensor<T>) -> usize {
    t.cols()
}

fn head_view<T>(data: &[T], offset: usize, tokens: usize, w: usize, width: usize) -> MatRef<'_, T> {
    MatRef { data, offset, rows: tokens, cols: w, rs: width, cs: 1 }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    (q, k, v): (Var, Var, Var),
    batch: usize,
    tokens: usize,
    heads: &[(usize, usize)],
    probs: &[T],
) {
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let width = qv.cols();
    let len = qv.len();
    let tt = tokens * tokens;
    let mut take = |var: Var| -> Option<Vec<T>> {
        nodes[var.0].requires_grad.then(|| grads[var.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    };
    let (mut dq, mut dk, mut dv) = (take(q), take(k), take(v));
    let mut dp = vec![T::zero(); tt];
    for b in 0..batch {
        let base = b * tokens * width;
        for (h, &(s, e)) in heads.iter().enumerate() {
            let w = e - s;
            let scale = T::from_f64(1.0 / (w as f64).sqrt());
            let p = &probs[(b * heads.len() + h) * tt..][..tt];
            let gh = head_view(g, base + s, tokens, w, width);
            // dP = dO V^T
            gemm(
                T::one(),
                gh,
                head_view(vv.data(), base + s, tokens, w, width).t(),
                T::zero(),
                MatMut::dense(&mut dp, tokens, tokens),
            );
            if let Some(dv) = dv.as_mut() {
                gemm(
                    T::one(),
                    MatRef::dense(p, tokens, tokens).t(),
                    gh,
                    T::one(),
                    MatMut { data: dv, offset: base + s, rows: tokens, cols: w, rs: width, cs: 1 },
                );
            }
            // dS = P * (dP - rowsum(dP * P)), stored in dp
            for (drow, prow) in dp.chunks_mut(tokens).zip(p.chunks(tokens)) {
                let dot: T = drow.iter().zip(prow).map(|(a, b)| *a * *b).sum();
                for j in 0..tokens {
                    drow[j] = prow[j] * (drow[j] - dot);
                }
            }
            if let Some(dq) = dq.as_mut() {
                gemm(
                    scale,
                    MatRef::dense(&dp, tokens, tokens),
                    head_view(kv.data(), base + s, tokens, w, width),
                    T::one(),
                    MatMut { data: dq, offset: base + s, rows: tokens, cols: w, rs: width, cs: 1 },
                );
            }
            if let Some(dk) = dk.as_mut() {
                gemm(
                    scale,
                    MatRef::dense(&dp, tokens, tokens).t(),
                    head_view(qv.data(), base + s, tokens, w, width),
                    T::one(),
                    MatMut { data: dk, offset: base + s, rows: tokens, cols: w, rs: width, cs: 1 },
                );
            }
        }
    }
    // q, k and v may be the same node; fold the parts back in that case.
    let mut put = |var: Var, part: Option<Vec<T>>| {
        if let Some(part) = part {
            match &mut grads[var.0] {
                Some(existing) => add_into(existing, &part),
                slot @ None => *slot = Some(part),
            }
        }
    };
    put(q, dq);
    put(k, dk);
    put(v, dv);
}
