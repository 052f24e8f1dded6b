//! Forward/backward kernels for the row-wise and fused primitives.

use crate::scalar::Scalar;

pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// d/dx [x·σ(x)] = σ(x)·(1 + x·(1 − σ(x)))
pub(crate) fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// [`silu_grad`] given the forward output `y = silu(x)`, recovering σ(x)
/// as `y/x` away from zero.
pub(crate) fn silu_grad_from_output<T: Scalar>(x: T, y: T) -> T {
    if x.abs() > T::lit(1e-20) {
        let s = y / x;
        s + y * (T::one() - s)
    } else {
        silu_grad(x)
    }
}

pub(crate) fn rms_norm_forward<T: Scalar>(x: &[T], d: usize, eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let inv_d = T::one() / T::from_usize(d).unwrap();
    for (row, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
        let inv = T::one() / (ms + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = v * inv;
        }
    }
    out
}

/// dx = (dy − y·mean(dy·y)) / rms
pub(crate) fn rms_norm_backward<T: Scalar>(x: &[T], y: &[T], dy: &[T], d: usize, eps: T) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    let inv_d = T::one() / T::from_usize(d).unwrap();
    for (((xr, yr), gr), dst) in x
        .chunks_exact(d)
        .zip(y.chunks_exact(d))
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        let ms = xr.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
        let inv = T::one() / (ms + eps).sqrt();
        let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (&g, &v)| acc + g * v) * inv_d;
        for ((o, &g), &v) in dst.iter_mut().zip(gr).zip(yr) {
            *o = (g - v * dot) * inv;
        }
    }
    dx
}

pub(crate) fn softmax_rows<T: Scalar>(x: &mut [T], d: usize) {
    for row in x.chunks_exact_mut(d) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::one() / total;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// dx = y ⊙ (dy − Σ dy·y), row-wise.
pub(crate) fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], d: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dst) in y.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
        let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for ((o, &a), &g) in dst.iter_mut().zip(yr).zip(gr) {
            *o = a * (g - dot);
        }
    }
    dx
}

/// Geometry of a batched attention call: `heads` independent problems.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnDims {
    pub heads: usize,
    pub tq: usize,
    pub tk: usize,
    pub dh: usize,
}

/// Returns `(output, probabilities)`.
pub(crate) fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], dims: AttnDims, scale: T) -> (Vec<T>, Vec<T>) {
    let AttnDims { heads, tq, tk, dh } = dims;
    let mut out = vec![T::zero(); heads * tq * dh];
    let mut probs = vec![T::zero(); heads * tq * tk];
    for h in 0..heads {
        let qh = &q[h * tq * dh..(h + 1) * tq * dh];
        let kh = &k[h * tk * dh..(h + 1) * tk * dh];
        let vh = &v[h * tk * dh..(h + 1) * tk * dh];
        let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        T::gemm(tq, dh, tk, qh, dh, 1, kh, 1, dh, T::zero(), p);
        p.iter_mut().for_each(|s| *s *= scale);
        softmax_rows(p, tk);
        T::gemm(tq, tk, dh, p, tk, 1, vh, dh, 1, T::zero(), &mut out[h * tq * dh..(h + 1) * tq * dh]);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    dims: AttnDims,
    scale: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnDims { heads, tq, tk, dh } = dims;
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); tq * tk];
    for h in 0..heads {
        let qs = h * tq * dh..(h + 1) * tq * dh;
        let ks = h * tk * dh..(h + 1) * tk * dh;
        let p = &probs[h * tq * tk..(h + 1) * tq * tk];
        let go = &dout[qs.clone()];
        // dP = dO·Vᵀ, dV = Pᵀ·dO
        T::gemm(tq, dh, tk, go, dh, 1, &v[ks.clone()], 1, dh, T::zero(), &mut dp);
        T::gemm(tk, tq, dh, p, 1, tk, go, dh, 1, T::zero(), &mut dv[ks.clone()]);
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
        for (pr, dr) in p.chunks_exact(tk).zip(dp.chunks_exact_mut(tk)) {
            let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            for (d, &a) in dr.iter_mut().zip(pr) {
                *d = a * (*d - dot) * scale;
            }
        }
        T::gemm(tq, tk, dh, &dp, tk, 1, &k[ks.clone()], dh, 1, T::zero(), &mut dq[qs.clone()]);
        T::gemm(tk, tq, dh, &dp, 1, tk, &q[qs], dh, 1, T::zero(), &mut dk[ks]);
    }
    (dq, dk, dv)
}

/// Rotates consecutive pairs `(2i, 2i+1)` of each row by the angle whose
/// cosine/sine are `cos[t, i]`/`sin[t, i]`. `inverse` applies the transpose.
pub(crate) fn rotate_pairs<T: Scalar>(x: &[T], cos: &[T], sin: &[T], tokens: usize, dh: usize, inverse: bool) -> Vec<T> {
    let half = dh / 2;
    let mut out = vec![T::zero(); x.len()];
    for (r, (src, dst)) in x.chunks_exact(dh).zip(out.chunks_exact_mut(dh)).enumerate() {
        let t = r % tokens;
        let (c, s) = (&cos[t * half..(t + 1) * half], &sin[t * half..(t + 1) * half]);
        for i in 0..half {
            let (a, b) = (src[2 * i], src[2 * i + 1]);
            let si = if inverse { -s[i] } else { s[i] };
            dst[2 * i] = a * c[i] - b * si;
            dst[2 * i + 1] = a * si + b * c[i];
        }
    }
    out
}
