//! Same-rank broadcasting: every axis of each operand either matches the
//! output extent or is 1.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{numel, strides, Tensor};

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

/// Strides of `shape` seen through the output shape (0 on broadcast axes).
fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), s)| if d == o { s } else { 0 })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn walk(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = view_strides(a, out);
    let sb = view_strides(b, out);
    let r = out.len();
    let n = numel(out);
    if r == 0 {
        if n == 1 {
            f(0, 0, 0);
        }
        return;
    }
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r];
    let mut o = 0;
    while o < n {
        let base_a: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let base_b: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        for k in 0..last {
            f(o + k, base_a + k * la, base_b + k * lb);
        }
        o += last;
        for ax in (0..r - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let mut out = vec![T::zero(); numel(&shape)];
    let (ad, bd) = (a.data(), b.data());
    walk(a.shape(), b.shape(), &shape, |o, i, j| out[o] = f(ad[i], bd[j]));
    Tensor::new(&shape, out)
}

/// Sums `g` over the axes where `target` has extent 1 and `g` does not.
pub fn sum_to<T: Real>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let mut out = vec![T::zero(); numel(target)];
    let gd = g.data();
    walk(target, target, g.shape(), |o, i, _| out[i] += gd[o]);
    Tensor::new(target, out).expect("sum_to shape")
}

/// Repeats `x` along its unit axes up to `shape`.
pub fn expand<T: Real>(x: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if x.shape() == shape {
        return x.clone();
    }
    let mut out = vec![T::zero(); numel(shape)];
    let xd = x.data();
    walk(x.shape(), x.shape(), shape, |o, i, _| out[o] = xd[i]);
    Tensor::new(shape, out).expect("expand shape")
}
