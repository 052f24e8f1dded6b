//! Numpy-style broadcasting for elementwise binary primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (0 along broadcast axes).
fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let own = strides(shape);
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Iteration plan over a dense output, tracking offsets into two operands.
/// Axes of extent 1 are dropped and compatible neighbours merged.
pub(crate) struct Plan {
    dims: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

impl Plan {
    pub(crate) fn new(out: &[usize], a: &[usize], b: &[usize]) -> Self {
        let va = view_strides(a, out);
        let vb = view_strides(b, out);
        let mut dims: Vec<usize> = Vec::new();
        let mut sa: Vec<usize> = Vec::new();
        let mut sb: Vec<usize> = Vec::new();
        // walk inner to outer, building groups in reverse
        for i in (0..out.len()).rev() {
            if out[i] == 1 {
                continue;
            }
            if let (Some(&d), Some(&ga), Some(&gb)) = (dims.last(), sa.last(), sb.last()) {
                if va[i] == ga * d && vb[i] == gb * d {
                    *dims.last_mut().unwrap() *= out[i];
                    continue;
                }
            }
            dims.push(out[i]);
            sa.push(va[i]);
            sb.push(vb[i]);
        }
        dims.reverse();
        sa.reverse();
        sb.reverse();
        if dims.is_empty() {
            dims.push(1);
            sa.push(0);
            sb.push(0);
        }
        Plan { dims, sa, sb }
    }

    pub(crate) fn inner_len(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub(crate) fn inner_strides(&self) -> (usize, usize) {
        (*self.sa.last().unwrap(), *self.sb.last().unwrap())
    }

    /// Calls `f(out_offset, a_offset, b_offset)` at the start of every inner run.
    pub(crate) fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let outer = self.dims.len() - 1;
        let total: usize = self.dims.iter().product();
        if total == 0 {
            return;
        }
        let inner = self.inner_len();
        let mut index = vec![0usize; outer];
        let (mut oa, mut ob, mut oo) = (0usize, 0usize, 0usize);
        loop {
            f(oo, oa, ob);
            oo += inner;
            let mut axis = outer;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                index[axis] += 1;
                oa += self.sa[axis];
                ob += self.sb[axis];
                if index[axis] < self.dims[axis] {
                    break;
                }
                oa -= self.sa[axis] * self.dims[axis];
                ob -= self.sb[axis] * self.dims[axis];
                index[axis] = 0;
            }
        }
    }
}

pub(crate) fn binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, op, f);
    }
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let plan = Plan::new(&out_shape, a.shape(), b.shape());
    let mut out = vec![T::zero(); numel(&out_shape)];
    let (ad, bd) = (a.data(), b.data());
    let n = plan.inner_len();
    let (sa, sb) = plan.inner_strides();
    plan.for_each_run(|oo, oa, ob| {
        let dst = &mut out[oo..oo + n];
        match (sa, sb) {
            (1, 1) => {
                for ((o, &x), &y) in dst.iter_mut().zip(&ad[oa..oa + n]).zip(&bd[ob..ob + n]) {
                    *o = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ob];
                for (o, &x) in dst.iter_mut().zip(&ad[oa..oa + n]) {
                    *o = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[oa];
                for (o, &y) in dst.iter_mut().zip(&bd[ob..ob + n]) {
                    *o = f(x, y);
                }
            }
            _ => {
                for (j, o) in dst.iter_mut().enumerate() {
                    *o = f(ad[oa + j * sa], bd[ob + j * sb]);
                }
            }
        }
    });
    Tensor::new(out_shape, out)
}

/// Sums `grad` (shaped like the broadcast output) down to `target` shape,
/// optionally multiplying each term by the matching element of `other`.
pub(crate) fn reduce_to<T: Scalar>(
    grad: &Tensor<T>,
    target: &[usize],
    other: Option<&Tensor<T>>,
) -> Tensor<T> {
    if grad.shape() == target {
        return match other {
            Some(o) if o.shape() == target => grad.zip_map(o, "reduce", |g, v| g * v).unwrap(),
            None => grad.clone(),
            Some(o) => {
                let plan = Plan::new(grad.shape(), target, o.shape());
                accumulate(&plan, grad, target, Some(o))
            }
        };
    }
    let other_shape = other.map(|o| o.shape().to_vec()).unwrap_or_else(|| grad.shape().to_vec());
    let plan = Plan::new(grad.shape(), target, &other_shape);
    accumulate(&plan, grad, target, other)
}

fn accumulate<T: Scalar>(plan: &Plan, grad: &Tensor<T>, target: &[usize], other: Option<&Tensor<T>>) -> Tensor<T> {
    let mut out = vec![T::zero(); numel(target)];
    let g = grad.data();
    let n = plan.inner_len();
    let (st, so) = plan.inner_strides();
    match other {
        Some(o) => {
            let od = o.data();
            plan.for_each_run(|oo, ot, ob| {
                let src = &g[oo..oo + n];
                match (st, so) {
                    (1, 1) => {
                        for ((t, &x), &y) in out[ot..ot + n].iter_mut().zip(src).zip(&od[ob..ob + n]) {
                            *t += x * y;
                        }
                    }
                    (1, 0) => {
                        let y = od[ob];
                        for (t, &x) in out[ot..ot + n].iter_mut().zip(src) {
                            *t += x * y;
                        }
                    }
                    (0, 1) => {
                        let mut acc = T::zero();
                        for (&x, &y) in src.iter().zip(&od[ob..ob + n]) {
                            acc += x * y;
                        }
                        out[ot] += acc;
                    }
                    _ => {
                        for (j, &x) in src.iter().enumerate() {
                            out[ot + j * st] += x * od[ob + j * so];
                        }
                    }
                }
            });
        }
        None => plan.for_each_run(|oo, ot, _| {
            let src = &g[oo..oo + n];
            match st {
                1 => {
                    for (t, &x) in out[ot..ot + n].iter_mut().zip(src) {
                        *t += x;
                    }
                }
                0 => {
                    let mut acc = T::zero();
                    for &x in src {
                        acc += x;
                    }
                    out[ot] += acc;
                }
                _ => {
                    for (j, &x) in src.iter().enumerate() {
                        out[ot + j * st] += x;
                    }
                }
            }
        }),
    }
    Tensor::new(target.to_vec(), out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_broadcast_numpy_style() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[2, 3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[3, 2]).is_err());
    }

    #[test]
    fn middle_axis_broadcast_matches_naive() {
        let a = Tensor::<f64>::from_fn([2, 3, 4], |i| i as f64);
        let b = Tensor::<f64>::from_fn([2, 1, 4], |i| 100.0 * i as f64);
        let out = binary("add", &a, &b, |x, y| x + y).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let expect = (i * 12 + j * 4 + k) as f64 + 100.0 * (i * 4 + k) as f64;
                    assert_eq!(out.data()[i * 12 + j * 4 + k], expect);
                }
            }
        }
        let back = reduce_to(&Tensor::<f64>::ones([2, 3, 4]), &[2, 1, 4], None);
        assert!(back.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn scalar_operand_broadcasts() {
        let a = Tensor::<f64>::from_fn([3], |i| i as f64);
        let s = Tensor::scalar(2.0);
        let out = binary("mul", &a, &s, |x, y| x * y).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0, 4.0]);
        let back = reduce_to(&Tensor::ones([3]), &[], Some(&a));
        assert_eq!(back.item(), 3.0);
    }
}
