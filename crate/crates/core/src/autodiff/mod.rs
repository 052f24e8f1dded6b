//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to its variables, together
//! with the forward value. [`Tape::backward`] walks the record in reverse
//! and accumulates vector-Jacobian products into every variable that
//! depends on a leaf created with `requires_grad`.

mod broadcast;
pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::freq;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

use kernels::AttnDims;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Silu { a: Var },
    RmsNorm { a: Var, eps: T },
    Softmax { a: Var },
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, scale: T, probs: Vec<T> },
    Rope { a: Var, cos: Vec<T>, sin: Vec<T>, tokens: usize },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Sum { a: Var },
    Mean { a: Var },
    Gather { table: Var, indices: Vec<usize> },
    BlockDct { a: Var, block: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Silu { .. } => "silu",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Softmax { .. } => "softmax",
            Op::Attention { .. } => "attention",
            Op::Rope { .. } => "rope",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Gather { .. } => "gather",
            Op::BlockDct { .. } => "block_dct",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// The computation record: an append-only list of primitive applications.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Takes the gradient of `var`, or zeros shaped like `shape` when `var`
    /// did not influence the output.
    pub fn take_or_zeros(&mut self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
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

    /// Names of the primitives applied so far, in order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// `a[..., k] · b[k, n] → [..., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(sa) / k.max(1);
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), n, 1, T::zero(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul { a, b }, needs))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = broadcast::binary(op.name(), self.value(a), self.value(b), f)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let factor = T::lit(factor);
        let value = self.value(a).scale(factor);
        let needs = self.needs(a);
        self.push(value, Op::Scale { a, factor }, needs)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::silu);
        let needs = self.needs(a);
        self.push(value, Op::Silu { a }, needs)
    }

    /// `x / sqrt(mean(x²) + eps)` over the last axis, without learned gain.
    pub fn rms_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("rms_norm", "scalar input"))?;
        let eps = T::lit(eps);
        let out = kernels::rms_norm_forward(self.value(a).data(), d, eps);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::RmsNorm { a, eps }, needs))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("softmax", "scalar input"))?;
        let mut out = self.value(a).data().to_vec();
        kernels::softmax_rows(&mut out, d);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a }, needs))
    }

    /// Scaled dot-product attention over full token sets.
    /// `q: [..., Tq, Dh]`, `k, v: [..., Tk, Dh]` with equal leading axes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        let r = sq.len();
        if r < 2 || sk.len() != r || sk != sv || sq[..r - 2] != sk[..r - 2] || sq[r - 1] != sk[r - 1] {
            return Err(Error::shape("attention", sq, sk));
        }
        let dims = AttnDims {
            heads: numel(&sq[..r - 2]),
            tq: sq[r - 2],
            tk: sk[r - 2],
            dh: sq[r - 1],
        };
        let shape = sq.to_vec();
        let scale = T::one() / T::from_usize(dims.dh).unwrap().sqrt();
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            dims,
            scale,
        );
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Attention { q, k, v, dims, scale, probs },
            needs,
        ))
    }

    /// Rotary position encoding on `[..., tokens, Dh]`; `cos`/`sin` are
    /// `[tokens, Dh/2]` tables applied to consecutive channel pairs.
    pub fn rope(&mut self, a: Var, cos: &Tensor<T>, sin: &Tensor<T>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 || !shape[r - 1].is_multiple_of(2) || cos.shape() != [shape[r - 2], shape[r - 1] / 2] || cos.shape() != sin.shape() {
            return Err(Error::shape("rope", &shape, cos.shape()));
        }
        let (tokens, dh) = (shape[r - 2], shape[r - 1]);
        let out = kernels::rotate_pairs(self.value(a).data(), cos.data(), sin.data(), tokens, dh, false);
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Rope {
                a,
                cos: cos.data().to_vec(),
                sin: sin.data().to_vec(),
                tokens,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape { a }, needs))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(a).permute(perm)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Permute { a, perm: perm.to_vec() }, needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// `a[..., start..start+len, ...]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if axis >= src.len() || start + len > src[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {src:?}", start + len),
            ));
        }
        let outer = numel(&src[..axis]);
        let inner = numel(&src[axis + 1..]);
        let mut shape = src.clone();
        shape[axis] = len;
        let mut out = Vec::with_capacity(numel(&shape));
        let data = self.value(a).data();
        for o in 0..outer {
            let base = (o * src[axis] + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum { a }, needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let needs = self.needs(a);
        self.push(value, Op::Mean { a }, needs)
    }

    /// Row lookup: `table[V, D]` at `indices` → `[len, D]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::invalid("gather", format!("table must be 2-D, got {s:?}")));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("gather", format!("index {bad} out of range for {rows} rows")));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::Gather { table, indices: indices.to_vec() },
            needs,
        ))
    }

    /// Orthonormal block DCT over the spatial axes of `[B, H, W, C]`.
    pub fn block_dct(&mut self, a: Var, block: usize) -> Result<Var> {
        let value = freq::block_dct_nhwc(self.value(a), block, false)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::BlockDct { a, block }, needs))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_shape = self.shape(output);
        if !out_shape.is_empty() {
            return Err(Error::NonScalarOutput(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// `∂output/∂v` for each `v` in `wrt`; zeros for variables that do not
    /// influence `output`.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mut grads = self.backward(output)?;
        Ok(wrt.iter().map(|&v| grads.take_or_zeros(v, self.shape(v))).collect())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Like [`Self::accumulate`], reducing broadcast axes first and reusing
    /// `g` when no reduction is needed.
    fn accumulate_reduced(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if g.shape() == self.shape(v) {
            self.accumulate(grads, v, g);
        } else {
            let r = broadcast::reduce_to(&g, self.shape(v), None);
            self.accumulate(grads, v, r);
        }
    }

    fn propagate(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k.max(1);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), n, 1, bv.data(), 1, n, T::zero(), &mut da);
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, av.data(), 1, k, g.data(), n, 1, T::zero(), &mut db);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*b) {
                    self.accumulate(grads, *b, broadcast::reduce_to(&g, self.shape(*b), None));
                }
                if self.needs(*a) {
                    self.accumulate_reduced(grads, *a, g);
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*b) {
                    let neg = g.scale(-T::one());
                    self.accumulate(grads, *b, broadcast::reduce_to(&neg, self.shape(*b), None));
                }
                if self.needs(*a) {
                    self.accumulate_reduced(grads, *a, g);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da = broadcast::reduce_to(&g, self.shape(*a), Some(self.value(*b)));
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = broadcast::reduce_to(&g, self.shape(*b), Some(self.value(*a)));
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale { a, factor } => self.accumulate(grads, *a, g.scale(*factor)),
            Op::Silu { a } => {
                let mut da = g;
                for ((d, &x), &y) in da.data_mut().iter_mut().zip(self.value(*a).data()).zip(node.value.data()) {
                    *d *= kernels::silu_grad_from_output(x, y);
                }
                self.accumulate(grads, *a, da);
            }
            Op::RmsNorm { a, eps } => {
                let x = self.value(*a);
                let d = *x.shape().last().unwrap();
                let dx = kernels::rms_norm_backward(x.data(), node.value.data(), g.data(), d, *eps);
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::Softmax { a } => {
                let d = *node.value.shape().last().unwrap();
                let dx = kernels::softmax_backward(node.value.data(), g.data(), d);
                self.accumulate(grads, *a, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::Attention { q, k, v, dims, scale, probs } => {
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g.data(),
                    *dims,
                    *scale,
                );
                self.accumulate(grads, *q, Tensor::new(self.shape(*q).to_vec(), dq)?);
                self.accumulate(grads, *k, Tensor::new(self.shape(*k).to_vec(), dk)?);
                self.accumulate(grads, *v, Tensor::new(self.shape(*v).to_vec(), dv)?);
            }
            Op::Rope { a, cos, sin, tokens } => {
                let dh = *g.shape().last().unwrap();
                let dx = kernels::rotate_pairs(g.data(), cos, sin, *tokens, dh, true);
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Reshape { a } => {
                let da = g.reshape(self.shape(*a).to_vec())?;
                self.accumulate(grads, *a, da);
            }
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(grads, *a, g.permute(&inverse)?);
            }
            Op::Concat { parts, axis } => {
                let shape = g.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[*axis + 1..]);
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let chunk = ps[*axis] * inner;
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(numel(&ps));
                        for o in 0..outer {
                            dp.extend_from_slice(&g.data()[o * row + offset..o * row + offset + chunk]);
                        }
                        self.accumulate(grads, p, Tensor::new(ps, dp)?);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { a, axis, start } => {
                if !self.needs(*a) {
                    return Ok(());
                }
                let src = self.shape(*a).to_vec();
                let len = g.shape()[*axis];
                let outer = numel(&src[..*axis]);
                let inner = numel(&src[*axis + 1..]);
                let da = grads[a.0].get_or_insert_with(|| Tensor::zeros(src.clone()));
                let dd = da.data_mut();
                for o in 0..outer {
                    let base = (o * src[*axis] + start) * inner;
                    for (d, &v) in dd[base..base + len * inner].iter_mut().zip(&g.data()[o * len * inner..(o + 1) * len * inner]) {
                        *d += v;
                    }
                }
            }
            Op::Sum { a } => {
                let da = Tensor::full(self.shape(*a).to_vec(), g.item());
                self.accumulate(grads, *a, da);
            }
            Op::Mean { a } => {
                let n = T::from_usize(self.value(*a).len().max(1)).unwrap();
                let da = Tensor::full(self.shape(*a).to_vec(), g.item() / n);
                self.accumulate(grads, *a, da);
            }
            Op::Gather { table, indices } => {
                let ts = self.shape(*table).to_vec();
                let d = ts[1];
                let mut dt = Tensor::zeros(ts);
                let dd = dt.data_mut();
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dd[i * d + j] += g.data()[row * d + j];
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::BlockDct { a, block } => {
                // orthonormal: the adjoint is the inverse transform
                self.accumulate(grads, *a, freq::block_dct_nhwc(&g, *block, true)?);
            }
        }
        Ok(())
    }
}
