//! Differentiable operations on [`Var`].

#![allow(clippy::should_implement_trait)]

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::broadcast::{binary, broadcast_shape, expand, sum_to};
use crate::kernels::conv::{conv2d, conv2d_backward, Conv2dParams};
use crate::kernels::dft::dft2_planes;
use crate::kernels::index::{self, IndexMap};
use crate::kernels::matmul::{self, matmul_dims, matmul_raw, MatmulDims};
use crate::kernels::scan::{selective_scan, selective_scan_backward, ScanDims};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

/// Parameter tensors of one selective scan.
#[derive(Clone, Copy)]
pub struct ScanInputs<'t, T: Real> {
    /// `[B, L, D]`
    pub u: Var<'t, T>,
    /// Positive step sizes, `[B, L, D]`.
    pub delta: Var<'t, T>,
    /// State matrix, `[D, N]`.
    pub a: Var<'t, T>,
    /// `[B, L, N]`
    pub b: Var<'t, T>,
    /// `[B, L, N]`
    pub c: Var<'t, T>,
    /// Skip weights, `[D]`.
    pub d: Var<'t, T>,
}

fn axis_check(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::Axis { op, axis, rank });
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    fn binary_op(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: fn(T, T) -> T,
        // partials (d/da, d/db) at (a, b)
        df: fn(T, T) -> (T, T),
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = binary(op, &a, &b, f)?;
        Ok(self.tape.push(out, &[self, other], move |ctx| {
            let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
            let shape = ctx.grad.shape();
            let ea = expand(a, shape);
            let eb = expand(b, shape);
            let mut ga = ctx.needs[0].then(|| Tensor::zeros(shape));
            let mut gb = ctx.needs[1].then(|| Tensor::zeros(shape));
            for (i, &g) in ctx.grad.data().iter().enumerate() {
                let (da, db) = df(ea.data()[i], eb.data()[i]);
                if let Some(ga) = ga.as_mut() {
                    ga.data_mut()[i] = g * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb.data_mut()[i] = g * db;
                }
            }
            vec![ga.map(|g| sum_to(&g, a.shape())), gb.map(|g| sum_to(&g, b.shape()))]
        }))
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = binary("add", &a, &b, |x, y| x + y)?;
        Ok(self.tape.push(out, &[self, other], |ctx| {
            vec![
                ctx.needs[0].then(|| sum_to(ctx.grad, ctx.inputs[0].shape())),
                ctx.needs[1].then(|| sum_to(ctx.grad, ctx.inputs[1].shape())),
            ]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_op(other, "sub", |x, y| x - y, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_op(other, "mul", |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_op(other, "div", |x, y| x / y, |x, y| (T::one() / y, -x / (y * y)))
    }

    fn unary(self, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.push(out, &[self], move |ctx| {
            let x = &ctx.inputs[0];
            let g = Tensor::new(
                x.shape(),
                ctx.grad
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(ctx.output.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect(),
            )
            .expect("unary grad");
            vec![Some(g)]
        })
    }

    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.tape
            .push(out, &[self], move |ctx| vec![Some(ctx.grad.scale(s))])
    }

    pub fn neg(self) -> Var<'t, T> {
        self.mul_scalar(-T::one())
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(
            |x| x.sqrt(),
            |_, y| {
                if y > T::zero() {
                    T::of(0.5) / y
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Absolute value; subgradient 0 at 0.
    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `ln(1 + eˣ)`, computed stably.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(
            |x| {
                if x > T::of(20.0) {
                    x
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, &[self], |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]
        })
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = T::of(self.value().numel() as f64);
        self.sum_all().mul_scalar(T::one() / n)
    }

    /// Sum over `axes`, keeping them with extent 1.
    pub fn sum_axes(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        for &a in axes {
            axis_check("sum_axes", a, x.rank())?;
        }
        let out = sum_to(&x, &reduced_shape(x.shape(), axes));
        Ok(self.tape.push(out, &[self], |ctx| {
            vec![Some(expand(ctx.grad, ctx.inputs[0].shape()))]
        }))
    }

    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        Ok(self.sum_axes(axes)?.mul_scalar(T::one() / T::of(count as f64)))
    }

    /// Maximum over one axis (kept with extent 1). Ties route the gradient
    /// to the first maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        axis_check("max_axis", axis, x.rank())?;
        let shape = x.shape().to_vec();
        let outer = numel(&shape[..axis]);
        let n = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = x.data()[(o * n + k) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = (o * n + k) * inner + i;
                    }
                }
            }
        }
        let out = Tensor::new(&reduced_shape(&shape, &[axis]), out)?;
        Ok(self.tape.push(out, &[self], move |ctx| {
            let mut g = Tensor::zeros(ctx.inputs[0].shape());
            for (&src, &gv) in arg.iter().zip(ctx.grad.data()) {
                g.data_mut()[src] += gv;
            }
            vec![Some(g)]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.tensor().reshape(shape)?;
        Ok(self.tape.push(out, &[self], |ctx| {
            vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape()).expect("reshape grad"))]
        }))
    }

    /// Output element `i` reads input element `map.src[i]`; gradients scatter-add back.
    pub fn gather(self, map: IndexMap) -> Result<Var<'t, T>> {
        let x = self.value();
        let data: Vec<T> = map.src.iter().map(|&s| x.data()[s]).collect();
        let out = Tensor::new(&map.shape, data)?;
        let src = Rc::new(map.src);
        Ok(self.tape.push(out, &[self], move |ctx| {
            let mut g = Tensor::zeros(ctx.inputs[0].shape());
            let gd = g.data_mut();
            for (&s, &gv) in src.iter().zip(ctx.grad.data()) {
                gd[s] += gv;
            }
            vec![Some(g)]
        }))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let map = index::permute(&self.shape(), perm)?;
        self.gather(map)
    }

    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t, T>> {
        let map = index::pixel_shuffle(&self.shape(), r)?;
        self.gather(map)
    }

    pub fn pixel_unshuffle(self, r: usize) -> Result<Var<'t, T>> {
        let map = index::pixel_unshuffle(&self.shape(), r)?;
        self.gather(map)
    }

    pub fn fftshift(self) -> Result<Var<'t, T>> {
        let map = index::fftshift(&self.shape())?;
        self.gather(map)
    }

    pub fn ifftshift(self) -> Result<Var<'t, T>> {
        let map = index::ifftshift(&self.shape())?;
        self.gather(map)
    }

    /// Reflective padding of the last two axes: `[top, bottom, left, right]`.
    pub fn reflect_pad(self, pads: [usize; 4]) -> Result<Var<'t, T>> {
        if pads == [0; 4] {
            return Ok(self);
        }
        let map = index::reflect_pad(&self.shape(), pads)?;
        self.gather(map)
    }

    pub fn crop(self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if y0 == 0 && x0 == 0 && s.len() >= 2 && s[s.len() - 2] == h && s[s.len() - 1] == w {
            return Ok(self);
        }
        let map = index::crop(&s, y0, x0, h, w)?;
        self.gather(map)
    }

    pub fn upsample_nearest(self, f: usize) -> Result<Var<'t, T>> {
        if f == 1 {
            return Ok(self);
        }
        let map = index::upsample_nearest(&self.shape(), f)?;
        self.gather(map)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let map = index::narrow(&self.shape(), axis, start, len)?;
        self.gather(map)
    }

    /// Splits `axis` into `n` equal parts.
    pub fn chunk(self, n: usize, axis: usize) -> Result<Vec<Var<'t, T>>> {
        let shape = self.shape();
        axis_check("chunk", axis, shape.len())?;
        if n == 0 || !shape[axis].is_multiple_of(n) {
            return Err(TensorError::Dimension {
                op: "chunk",
                dim: "split axis",
                expected: format!("a multiple of {n}"),
                got: shape[axis],
            });
        }
        let len = shape[axis] / n;
        (0..n).map(|i| self.narrow(axis, i * len, len)).collect()
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let shape0 = first.shape();
        axis_check("concat", axis, shape0.len())?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let mut extents = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let same = s.len() == shape0.len()
                && s.iter().zip(&shape0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: shape0.clone(),
                    rhs: s.to_vec(),
                });
            }
            extents.push(s[axis]);
        }
        let outer = numel(&shape0[..axis]);
        let inner = numel(&shape0[axis + 1..]);
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = shape0.clone();
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(first.tape.push(out, parts, move |ctx| {
            let gd = ctx.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(extents.len());
            for (k, &e) in extents.iter().enumerate() {
                if !ctx.needs[k] {
                    grads.push(None);
                    offset += e;
                    continue;
                }
                let mut g = Vec::with_capacity(outer * e * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    g.extend_from_slice(&gd[start..start + e * inner]);
                }
                grads.push(Some(Tensor::new(ctx.inputs[k].shape(), g).expect("concat grad")));
                offset += e;
            }
            grads
        }))
    }

    pub fn conv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, p: Conv2dParams) -> Result<Var<'t, T>> {
        let (xv, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let out = conv2d(&xv, &wv, bv.as_deref(), p)?;
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape.push(out, &parents, move |ctx| {
            let need_b = ctx.needs.get(2).copied().unwrap_or(false);
            let g = conv2d_backward(
                &ctx.inputs[0],
                &ctx.inputs[1],
                ctx.grad,
                p,
                [ctx.needs[0], ctx.needs[1], need_b],
            )
            .expect("conv2d backward");
            let mut out = vec![g.x, g.w];
            if ctx.inputs.len() == 3 {
                out.push(g.b);
            }
            out
        }))
    }

    /// Batched matrix product, see [`matmul::matmul_dims`].
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = matmul::matmul(&a, &b)?;
        let (d, _) = matmul_dims(a.shape(), b.shape())?;
        Ok(self.tape.push(out, &[self, other], move |ctx| {
            let (a, b, g) = (&ctx.inputs[0], &ctx.inputs[1], ctx.grad);
            let (m, k, n) = (d.m, d.k, d.n);
            let ga = ctx.needs[0].then(|| {
                // ga = g · bᵀ
                let mut ga = Tensor::zeros(a.shape());
                for i in 0..d.batch {
                    let bo = if d.shared_rhs { 0 } else { i * k * n };
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        &b.data()[bo..bo + k * n],
                        1,
                        n as isize,
                        T::zero(),
                        &mut ga.data_mut()[i * m * k..(i + 1) * m * k],
                        k as isize,
                        1,
                    );
                }
                ga
            });
            let gb = ctx.needs[1].then(|| {
                // gb = aᵀ · g, accumulated over the batch when b is shared
                let mut gb = Tensor::zeros(b.shape());
                for i in 0..d.batch {
                    let bo = if d.shared_rhs { 0 } else { i * k * n };
                    let beta = if d.shared_rhs && i > 0 { T::one() } else { T::zero() };
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &a.data()[i * m * k..(i + 1) * m * k],
                        1,
                        k as isize,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        beta,
                        &mut gb.data_mut()[bo..bo + k * n],
                        n as isize,
                        1,
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// `x[..., K] · wᵀ + b` with `w: [N, K]`, `b: [N]`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let (xv, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let out = matmul::linear(&xv, &wv, bv.as_deref())?;
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape.push(out, &parents, move |ctx| {
            let (x, w, g) = (&ctx.inputs[0], &ctx.inputs[1], ctx.grad);
            let (n, k) = (w.shape()[0], w.shape()[1]);
            let rows = x.numel() / k.max(1);
            let gx = ctx.needs[0].then(|| {
                let mut gx = Tensor::zeros(x.shape());
                let d = MatmulDims {
                    batch: 1,
                    m: rows,
                    k: n,
                    n: k,
                    shared_rhs: true,
                };
                matmul_raw(d, g.data(), w.data(), false, gx.data_mut(), T::zero());
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let mut gw = Tensor::zeros(w.shape());
                T::gemm(
                    n,
                    rows,
                    k,
                    T::one(),
                    g.data(),
                    1,
                    n as isize,
                    x.data(),
                    k as isize,
                    1,
                    T::zero(),
                    gw.data_mut(),
                    k as isize,
                    1,
                );
                gw
            });
            let mut out = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                out.push(ctx.needs[2].then(|| {
                    let mut gb = Tensor::zeros(&[n]);
                    for row in g.data().chunks_exact(n.max(1)) {
                        for (b, &v) in gb.data_mut().iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    gb
                }));
            }
            out
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = *x.shape().last().ok_or(TensorError::Axis {
            op: "softmax",
            axis: 0,
            rank: 0,
        })?;
        let mut out = x.as_ref().clone();
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(self.tape.push(out, &[self], move |ctx| {
            let y = ctx.output;
            let mut g = ctx.grad.clone();
            for (gr, yr) in g.data_mut().chunks_exact_mut(n.max(1)).zip(y.data().chunks_exact(n.max(1))) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in gr.iter_mut().zip(yr) {
                    *gv = yv * (*gv - dot);
                }
            }
            vec![Some(g)]
        }))
    }

    /// Non-overlapping `k×k` average pooling of `[B, C, H, W]`; H, W must be multiples of k.
    pub fn avg_pool(self, k: usize) -> Result<Var<'t, T>> {
        if k == 1 {
            return Ok(self);
        }
        let x = self.value();
        let [b, c, h, w] = x.dims4("avg_pool")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::Dimension {
                op: "avg_pool",
                dim: if k != 0 && h % k != 0 { "height" } else { "width" },
                expected: format!("a multiple of {k}"),
                got: if k != 0 && h % k != 0 { h } else { w },
            });
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::of((k * k) as f64);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        {
            let od = out.data_mut();
            for p in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        od[(p * oh + y / k) * ow + xx / k] += x.data()[(p * h + y) * w + xx] * inv;
                    }
                }
            }
        }
        Ok(self.tape.push(out, &[self], move |ctx| {
            let mut g = Tensor::zeros(&[b, c, h, w]);
            let gd = g.data_mut();
            for p in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        gd[(p * h + y) * w + xx] = ctx.grad.data()[(p * oh + y / k) * ow + xx / k] * inv;
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Normalizes `[B, C, H, W]` over the channel axis at every position,
    /// then applies per-channel `weight`/`bias` of shape `[C]`.
    pub fn layer_norm_channels(self, weight: Var<'t, T>, bias: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let [_, c, _, _] = self.value().dims4("layer_norm")?;
        let mu = self.mean_axes(&[1])?;
        let d = self.sub(mu)?;
        let var = d.square().mean_axes(&[1])?;
        let y = d.div(var.add_scalar(eps).sqrt())?;
        y.mul(weight.reshape(&[1, c, 1, 1])?)?.add(bias.reshape(&[1, c, 1, 1])?)
    }

    /// Complex 2-D DFT over the last two axes. `im = None` means a real input.
    /// The inverse applies the `1/(H·W)` normalization.
    pub fn dft2(self, im: Option<Var<'t, T>>, inverse: bool) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(TensorError::Rank {
                op: "dft2",
                expected: 2,
                shape,
            });
        }
        if let Some(im) = im {
            if im.shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "dft2",
                    lhs: shape,
                    rhs: im.shape(),
                });
            }
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut re = self.tensor().into_data();
        let mut imd = match im {
            Some(v) => v.tensor().into_data(),
            None => vec![T::zero(); re.len()],
        };
        dft2_planes(&mut re, &mut imd, h, w, inverse);
        let n = re.len();
        re.extend(imd);
        let mut stacked_shape = vec![2];
        stacked_shape.extend_from_slice(&shape);
        let stacked = Tensor::new(&stacked_shape, re)?;
        let mut parents = vec![self];
        parents.extend(im);
        let hw = T::of((h * w) as f64);
        let stacked = self.tape.push(stacked, &parents, move |ctx| {
            // adjoint of the unnormalized DFT is H·W times the inverse DFT,
            // and the adjoint of the normalized inverse is the DFT over H·W
            let gd = ctx.grad.data();
            let mut gr = gd[..n].to_vec();
            let mut gi = gd[n..].to_vec();
            dft2_planes(&mut gr, &mut gi, h, w, !inverse);
            let s = if inverse { T::one() / hw } else { hw };
            let shape = ctx.inputs[0].shape();
            let g_re = Tensor::new(shape, gr.iter().map(|&v| v * s).collect()).expect("dft grad");
            let mut out = vec![Some(g_re)];
            if ctx.inputs.len() == 2 {
                out.push(Some(
                    Tensor::new(shape, gi.iter().map(|&v| v * s).collect()).expect("dft grad"),
                ));
            }
            out
        });
        let re = stacked.narrow(0, 0, 1)?.reshape(&shape)?;
        let imv = stacked.narrow(0, 1, 1)?.reshape(&shape)?;
        Ok((re, imv))
    }

    /// Runs the selective scan over `[B, L, D]` token sequences.
    pub fn selective_scan(s: ScanInputs<'t, T>) -> Result<Var<'t, T>> {
        let u = s.u.value();
        let [batch, len, inner] = match *u.shape() {
            [b, l, d] => [b, l, d],
            _ => {
                return Err(TensorError::Rank {
                    op: "selective_scan",
                    expected: 3,
                    shape: u.shape().to_vec(),
                })
            }
        };
        let a = s.a.value();
        let state = match *a.shape() {
            [d, n] if d == inner => n,
            _ => {
                return Err(TensorError::Dimension {
                    op: "selective_scan",
                    dim: "state matrix rows",
                    expected: inner.to_string(),
                    got: a.shape().first().copied().unwrap_or(0),
                })
            }
        };
        let check = |v: &Var<'t, T>, want: Vec<usize>, dim: &'static str| -> Result<()> {
            let got = v.shape();
            if got != want {
                return Err(TensorError::ShapeMismatch {
                    op: dim,
                    lhs: want,
                    rhs: got,
                });
            }
            Ok(())
        };
        check(&s.delta, vec![batch, len, inner], "selective_scan delta")?;
        check(&s.b, vec![batch, len, state], "selective_scan B")?;
        check(&s.c, vec![batch, len, state], "selective_scan C")?;
        check(&s.d, vec![inner], "selective_scan D")?;
        let dims = ScanDims {
            batch,
            len,
            inner,
            state,
        };
        let (delta, bm, cm, dskip) = (s.delta.value(), s.b.value(), s.c.value(), s.d.value());
        let res = selective_scan(
            dims,
            u.data(),
            delta.data(),
            a.data(),
            bm.data(),
            cm.data(),
            dskip.data(),
        );
        let out = Tensor::new(&[batch, len, inner], res.y)?;
        let states = res.states;
        Ok(s.u.tape.push(out, &[s.u, s.delta, s.a, s.b, s.c, s.d], move |ctx| {
            let i = ctx.inputs;
            let g = selective_scan_backward(
                dims,
                i[0].data(),
                i[1].data(),
                i[2].data(),
                i[3].data(),
                i[4].data(),
                i[5].data(),
                &states,
                ctx.grad.data(),
            );
            let mk = |k: usize, v: Vec<T>| Some(Tensor::new(i[k].shape(), v).expect("scan grad"));
            vec![
                mk(0, g.u),
                mk(1, g.delta),
                mk(2, g.a),
                mk(3, g.bm),
                mk(4, g.cm),
                mk(5, g.dskip),
            ]
        }))
    }

    /// Broadcast-compatible shape check without building a node.
    pub fn broadcast_with(self, other: Var<'t, T>) -> Result<Vec<usize>> {
        broadcast_shape("broadcast", &self.shape(), &other.shape())
    }
}
