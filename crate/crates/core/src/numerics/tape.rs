//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its adjoint. [`Tape::backward`] walks the nodes in reverse
//! and deposits `∂loss/∂leaf` on every leaf created with [`Tape::leaf`].

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::{gemm_new, gemm_view, layer_norm_forward, sigmoid, softmax_in_place, Tensor, View};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How [`Tape::backward`] treats gradients left by an earlier call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardMode {
    Reset,
    Accumulate,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Silu { x: Var, sig: Vec<T> },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    RepeatRows { x: Var, times: usize },
    SliceCols { x: Var, start: usize },
    Attention { qkv: Var, seq: usize, heads: usize, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
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
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input; receives a gradient on every backward pass.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient deposited on a leaf by the last backward pass(es).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads[v.0].take()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: shape {sb:?} does not broadcast onto {sa:?} (trailing dimensions only)"
            )))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.numel());
        for chunk in av.data().chunks_exact(bv.len()) {
            out.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        Tensor::new(av.shape().to_vec(), out).expect("same shape")
    }

    /// `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "add")?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "sub")?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "mul")?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v + s);
        let rg = self.needs(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sig: Vec<T> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = x.data().iter().zip(&sig).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Silu { x: a, sig }, rg)
    }

    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let (out, inv_std) = layer_norm_forward(self.value(a), eps)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::LayerNorm { x: a, inv_std }, rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::tensor::softmax_rows(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.numel()).expect("usize fits");
        let total = v.data().iter().copied().sum::<T>() / n;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Repeats each row of `a` (viewed as a matrix over its last axis)
    /// `times` times consecutively: `[r, d] -> [r * times, d]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Parameter("repeat_rows needs times >= 1".into()));
        }
        let v = self.value(a);
        let d = v.cols();
        let mut out = Vec::with_capacity(v.numel() * times);
        for row in v.data().chunks_exact(d) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let out = Tensor::new(vec![v.rows() * times, d], out)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::RepeatRows { x: a, times }, rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        let (rows, cols) = v.expect_matrix("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(Error::Dimension(format!(
                "slice_cols {start}..{} out of {cols} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(rows * len);
        for row in v.data().chunks_exact(cols) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], out)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::SliceCols { x: a, start }, rg))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[batch * seq, 3 * d]` holding queries, keys and values side
    /// by side; each group of `seq` consecutive rows is one sequence. Returns
    /// `[batch * seq, d]` with heads concatenated along columns.
    pub fn attention(&mut self, qkv: Var, seq: usize, heads: usize) -> Result<Var> {
        let v = self.value(qkv);
        let (rows, cols) = v.expect_matrix("attention")?;
        if cols % 3 != 0 || seq == 0 || rows % seq != 0 || heads == 0 || (cols / 3) % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention: shape {:?} incompatible with seq {seq}, heads {heads}",
                v.shape()
            )));
        }
        let d = cols / 3;
        let hd = d / heads;
        let batch = rows / seq;
        let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); rows * d];
        let src = v.data();
        for b in 0..batch {
            let base = b * seq * cols;
            for h in 0..heads {
                let po = (b * heads + h) * seq * seq;
                // P = softmax(scale · Q Kᵀ), O = P V
                gemm_view(
                    seq,
                    hd,
                    seq,
                    scale,
                    src,
                    View::rows(base + h * hd, cols),
                    src,
                    View::transposed(base + d + h * hd, cols),
                    T::zero(),
                    &mut probs,
                    View::rows(po, seq),
                );
                for prow in probs[po..po + seq * seq].chunks_exact_mut(seq) {
                    softmax_in_place(prow);
                }
                gemm_view(
                    seq,
                    seq,
                    hd,
                    T::one(),
                    &probs,
                    View::rows(po, seq),
                    src,
                    View::rows(base + 2 * d + h * hd, cols),
                    T::zero(),
                    &mut out,
                    View::rows(b * seq * d + h * hd, d),
                );
            }
        }
        let out = Tensor::new(vec![rows, d], out)?;
        let rg = self.needs(&[qkv]);
        Ok(self.push(
            out,
            Op::Attention {
                qkv,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Propagates `∂loss/∂·` to every trainable leaf.
    ///
    /// With [`BackwardMode::Reset`] leaf gradients are overwritten; with
    /// [`BackwardMode::Accumulate`] they are added to what earlier passes left.
    /// Leaves that the loss does not depend on receive zeros.
    pub fn backward(&mut self, loss: Var, mode: BackwardMode) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match (mode, &mut self.leaf_grads[i]) {
                    (BackwardMode::Accumulate, Some(existing)) => existing.add_assign(&g),
                    (_, slot) => *slot = Some(g),
                }
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.adjoint(i, &g, &mut grads);
        }
        // Leaves created after the loss cannot influence it.
        for i in loss.0 + 1..self.nodes.len() {
            let node = &self.nodes[i];
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let zeros = Tensor::zeros(node.value.shape());
                if mode == BackwardMode::Reset || self.leaf_grads[i].is_none() {
                    self.leaf_grads[i] = Some(zeros);
                }
            }
        }
        Ok(())
    }

    fn adjoint(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let da = gemm_new(g.data(), m, n, false, bv.data(), k, n, true);
                    accumulate(grads, *a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if self.requires_grad(*b) {
                    let db = gemm_new(av.data(), m, k, true, g.data(), m, n, false);
                    accumulate(grads, *b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                if self.requires_grad(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.requires_grad(*b) {
                    let mut db = reduce_broadcast(g.data(), self.value(*b));
                    if negate {
                        db = db.map(|v| -v);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let r = bv.numel();
                if self.requires_grad(*a) {
                    let mut da = Vec::with_capacity(g.numel());
                    for chunk in g.data().chunks_exact(r) {
                        da.extend(chunk.iter().zip(bv.data()).map(|(&gv, &bb)| gv * bb));
                    }
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da).expect("shape"));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); r];
                    for (gc, ac) in g.data().chunks_exact(r).zip(av.data().chunks_exact(r)) {
                        for ((acc, &gv), &aa) in db.iter_mut().zip(gc).zip(ac) {
                            *acc = *acc + gv * aa;
                        }
                    }
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Silu { x: a, sig } => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(sig)
                    .map(|((&gv, &xv), &s)| gv * s * (T::one() + xv * (T::one() - s)))
                    .collect();
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data).expect("shape"));
            }
            Op::LayerNorm { x, inv_std } => {
                let d = y.cols();
                let inv_d = T::one() / T::from_usize(d).expect("usize fits");
                let mut dx = Vec::with_capacity(y.numel());
                for ((gr, yr), &r) in g
                    .data()
                    .chunks_exact(d)
                    .zip(y.data().chunks_exact(d))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().copied().sum::<T>() * inv_d;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                    dx.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(&gv, &yv)| r * (gv - mean_g - yv * mean_gy)),
                    );
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx).expect("shape"));
            }
            Op::Softmax(a) => {
                let d = y.cols();
                let mut dx = Vec::with_capacity(y.numel());
                for (gr, yr) in g.data().chunks_exact(d).zip(y.data().chunks_exact(d)) {
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
                }
                accumulate(grads, *a, Tensor::new(y.shape().to_vec(), dx).expect("shape"));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                accumulate(grads, *a, Tensor::full(shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let n = T::from_usize(v.numel()).expect("usize fits");
                accumulate(grads, *a, Tensor::full(v.shape(), g.data()[0] / n));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape();
                accumulate(grads, *a, g.reshape(shape).expect("same numel"));
            }
            Op::RepeatRows { x, times } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![T::zero(); xv.numel()];
                for (r, out_row) in dx.chunks_exact_mut(d).enumerate() {
                    for rep in g.data()[r * times * d..(r + 1) * times * d].chunks_exact(d) {
                        for (o, &gv) in out_row.iter_mut().zip(rep) {
                            *o = *o + gv;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let len = y.cols();
                let mut dx = vec![T::zero(); xv.numel()];
                for (drow, grow) in dx.chunks_exact_mut(cols).zip(g.data().chunks_exact(len)) {
                    drow[*start..start + len].copy_from_slice(grow);
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::Attention {
                qkv,
                seq,
                heads,
                probs,
            } => {
                let dqkv = attention_adjoint(self.value(*qkv), g, *seq, *heads, probs);
                accumulate(grads, *qkv, dqkv);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Sums `g` over the leading axes that broadcasting expanded `target` along.
fn reduce_broadcast<T: Scalar>(g: &[T], target: &Tensor<T>) -> Tensor<T> {
    let r = target.numel();
    if g.len() == r {
        return Tensor::new(target.shape().to_vec(), g.to_vec()).expect("shape");
    }
    let mut out = vec![T::zero(); r];
    for chunk in g.chunks_exact(r) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    Tensor::new(target.shape().to_vec(), out).expect("shape")
}

fn attention_adjoint<T: Scalar>(
    qkv: &Tensor<T>,
    g: &Tensor<T>,
    seq: usize,
    heads: usize,
    probs: &[T],
) -> Tensor<T> {
    let (rows, cols) = (qkv.shape()[0], qkv.shape()[1]);
    let d = cols / 3;
    let hd = d / heads;
    let batch = rows / seq;
    let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
    let src = qkv.data();
    let gd = g.data();
    let mut dqkv = vec![T::zero(); rows * cols];
    let mut ds = vec![T::zero(); seq * seq];
    let one = T::one();
    for b in 0..batch {
        let base = b * seq * cols;
        let gbase = b * seq * d;
        for h in 0..heads {
            let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
            let (qo, ko, vo) = (base + h * hd, base + d + h * hd, base + 2 * d + h * hd);
            let go = View::rows(gbase + h * hd, d);
            // dV += Pᵀ dO
            gemm_view(seq, seq, hd, one, p, View::transposed(0, seq), gd, go, one, &mut dqkv, View::rows(vo, cols));
            // dP = dO Vᵀ, then through the softmax
            gemm_view(seq, hd, seq, one, gd, go, src, View::transposed(vo, cols), T::zero(), &mut ds, View::rows(0, seq));
            for (drow, prow) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                for (dv, &pv) in drow.iter_mut().zip(prow) {
                    *dv = pv * (*dv - dot) * scale;
                }
            }
            // dQ += dS K, dK += dSᵀ Q
            gemm_view(seq, seq, hd, one, &ds, View::rows(0, seq), src, View::rows(ko, cols), one, &mut dqkv, View::rows(qo, cols));
            gemm_view(seq, seq, hd, one, &ds, View::transposed(0, seq), src, View::rows(qo, cols), one, &mut dqkv, View::rows(ko, cols));
        }
    }
    Tensor::new(vec![rows, cols], dqkv).expect("shape")
}
