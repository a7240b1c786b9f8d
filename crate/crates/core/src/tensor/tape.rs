use std::sync::Arc;

use super::kernels::{gelu, gelu_grad, gemm, gemm_nt, gemm_tn, inverse_axes, permute};
use super::{Scalar, Tensor, NORM_EPS};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    AddSuffix(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var),
    RmsNorm(Var, Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Relu(Var),
    Gelu(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of primitive applications. Nodes are appended in execution
/// order, so every node's inputs precede it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.shared_leaf(Arc::new(value), requires_grad)
    }

    /// Leaf that borrows an existing allocation (model parameters).
    pub fn shared_leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(Tensor { shape, data }),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product `[B×m×k] · [B×k×n] -> [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err(format!("bmm {sa:?} x {sb:?}"));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(vec![batch, m, n], out, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b]))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s; `b` repeats
    /// over the leading dimensions.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(format!("broadcast {sb:?} onto {sa:?}"));
        }
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks(bd.len())
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(sa.to_vec(), data, Op::AddSuffix(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("mul {:?} * {:?}", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), data, Op::Scale(a, c), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return shape_err(format!("reshape {:?} to {shape:?}", self.shape(a)));
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true))
        {
            return shape_err(format!("permute {:?} by {axes:?}", self.shape(a)));
        }
        let (data, shape) = permute(self.value(a).data(), self.shape(a), axes);
        Ok(self.push(shape, data, Op::Permute(a, axes.to_vec()), &[a]))
    }

    /// Numerically stabilized softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = match shape.last() {
            Some(&d) => d,
            None => return shape_err("softmax of a scalar"),
        };
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(d) {
            softmax_in_place(row);
        }
        Ok(self.push(shape, data, Op::Softmax(a), &[a]))
    }

    /// Scales each trailing vector by `1/sqrt(mean(x²) + ε)` then by `gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] {
            return shape_err(format!("rms_norm {shape:?} with gain {:?}", self.shape(gain)));
        }
        let g = self.value(gain).data();
        let eps = T::of(NORM_EPS);
        let dn = T::of(d as f64);
        let mut data = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let inv = (ms + eps).sqrt().recip();
            data.extend(row.iter().zip(g).map(|(&v, &w)| v * inv * w));
        }
        Ok(self.push(shape, data, Op::RmsNorm(x, gain), &[x, gain]))
    }

    /// Gathers rows of a `[rows×d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return shape_err(format!("embedding table {shape:?}"));
        }
        let (rows, d) = (shape[0], shape[1]);
        if ids.is_empty() {
            return shape_err("embedding lookup with no ids");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return shape_err(format!("embedding id {bad} >= {rows}"));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(vec![ids.len(), d], data, op, &[table]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(T::zero())).collect();
        self.push(self.shape(a).to_vec(), data, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        self.push(self.shape(a).to_vec(), data, Op::Gelu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    /// Mean negative log-likelihood of `targets` under `logits[n×V]`.
    /// Positions whose target equals `ignore_id` contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore_id: u32) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return shape_err(format!("cross_entropy logits {shape:?} vs {} targets", targets.len()));
        }
        let vocab = shape[1];
        let mut resolved = Vec::with_capacity(targets.len());
        for &t in targets {
            if t == ignore_id {
                resolved.push(None);
            } else if (t as usize) < vocab {
                resolved.push(Some(t as usize));
            } else {
                return Err(Error::TokenOutOfRange { id: t, size: vocab });
            }
        }
        let count = resolved.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0f64;
        for (row, target) in probs.chunks_mut(vocab).zip(&resolved) {
            let lse = log_sum_exp(row);
            if let Some(t) = target {
                total += (lse - row[*t]).to_f64().unwrap_or(f64::NAN);
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = T::of(total / count as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        let op = Op::CrossEntropy {
            logits,
            targets: resolved,
            probs,
            count,
        };
        Ok(self.push(Vec::new(), vec![loss], op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(self.value(*a).data(), g, gb, k, m, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if let Some(ga) = self.slot(grads, *a) {
                    let db = self.value(*b).data();
                    for p in 0..batch {
                        gemm_nt(
                            &g[p * m * n..(p + 1) * m * n],
                            &db[p * k * n..(p + 1) * k * n],
                            &mut ga[p * m * k..(p + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let da = self.value(*a).data();
                    for p in 0..batch {
                        gemm_tn(
                            &da[p * m * k..(p + 1) * m * k],
                            &g[p * m * n..(p + 1) * m * n],
                            &mut gb[p * k * n..(p + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        accumulate(gv, g);
                    }
                }
            }
            Op::AddSuffix(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    accumulate(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let len = gb.len();
                    for chunk in g.chunks(len) {
                        accumulate(gb, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if let Some(ga) = self.slot(grads, a) {
                    for ((o, &gi), &bv) in ga.iter_mut().zip(g).zip(self.value(b).data()) {
                        *o = *o + gi * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((o, &gi), &av) in gb.iter_mut().zip(g).zip(self.value(a).data()) {
                        *o = *o + gi * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o = *o + gi * *c;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    accumulate(ga, g);
                }
            }
            Op::Permute(a, axes) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let (back, _) = permute(g, node.value.shape(), &inverse_axes(axes));
                    accumulate(ga, &back);
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let d = *node.value.shape().last().unwrap();
                    for ((gx, gy), y) in ga.chunks_mut(d).zip(g.chunks(d)).zip(out.chunks(d)) {
                        let dot: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((o, &gi), &yi) in gx.iter_mut().zip(gy).zip(y) {
                            *o = *o + yi * (gi - dot);
                        }
                    }
                }
            }
            Op::RmsNorm(x, gain) => self.rms_norm_backward(*x, *gain, g, grads),
            Op::Embedding { table, ids } => {
                if let Some(gt) = self.slot(grads, *table) {
                    let d = self.shape(*table)[1];
                    for (row, &id) in g.chunks(d).zip(ids) {
                        accumulate(&mut gt[id * d..(id + 1) * d], row);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(self.value(*a).data()) {
                        if x > T::zero() {
                            *o = *o + gi;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *o = *o + gi * gelu_grad(x);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for o in ga.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if let Some(gl) = self.slot(grads, *logits) {
                    let vocab = self.shape(*logits)[1];
                    let w = g[0] / T::of(*count as f64);
                    for ((gr, pr), t) in gl.chunks_mut(vocab).zip(probs.chunks(vocab)).zip(targets) {
                        let Some(t) = t else { continue };
                        for (o, &p) in gr.iter_mut().zip(pr) {
                            *o = *o + w * p;
                        }
                        gr[*t] = gr[*t] - w;
                    }
                }
            }
        }
    }

    fn rms_norm_backward(&self, x: Var, gain: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let gw = self.value(gain).data();
        let d = gw.len();
        let dn = T::of(d as f64);
        let eps = T::of(NORM_EPS);
        let xd = self.value(x).data();
        let mut dgain = vec![T::zero(); d];
        let mut dx = vec![T::zero(); xd.len()];
        for ((row, gr), dxr) in xd.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let inv = (ms + eps).sqrt().recip();
            let mut dot = T::zero();
            for j in 0..d {
                let xhat = row[j] * inv;
                dgain[j] = dgain[j] + gr[j] * xhat;
                dot = dot + gr[j] * gw[j] * xhat;
            }
            let mean = dot / dn;
            for j in 0..d {
                let xhat = row[j] * inv;
                dxr[j] = inv * (gr[j] * gw[j] - xhat * mean);
            }
        }
        if let Some(gx) = self.slot(grads, x) {
            accumulate(gx, &dx);
        }
        if let Some(gg) = self.slot(grads, gain) {
            accumulate(gg, &dgain);
        }
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v`
    /// does not require a gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }
}

/// Gradients of leaf values with `requires_grad`, produced by
/// [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` is unreachable from the loss or is not a trainable leaf.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
