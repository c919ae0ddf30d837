//! Shared helpers for the integration tests: random tensors, module
//! construction, gradient checks against parameter subsets and
//! independently coded reference implementations.

#![allow(dead_code)]

use hima_core::params::{Bound, Builder, ParamStore};
use hima_core::CoreError;
use hima_tensor::check::{check_gradients, GradReport};
use hima_tensor::{Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Builds a module with a fresh `f64` store.
pub fn build<M>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> M) -> (M, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let m = f(&mut Builder {
        store: &mut store,
        rng: &mut r,
    });
    (m, store)
}

pub fn to_tensor_err(e: CoreError) -> TensorError {
    TensorError::Invalid {
        op: "module",
        msg: e.to_string(),
    }
}

/// Runs a module forward on constants, returning the output value.
pub fn run<F>(store: &ParamStore<f64>, x: &Tensor<f64>, f: F) -> Tensor<f64>
where
    F: for<'t> Fn(&Bound<'t, f64>, Var<'t, f64>) -> hima_core::Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    f(&bound, tape.constant(x.clone())).unwrap().tensor()
}

/// Finite-difference check of `f` with respect to `x` and the parameters
/// whose indices are in `selected` (all when `None`); the rest are held
/// constant.
pub fn gradcheck<F>(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    selected: Option<&[usize]>,
    max_coords: usize,
    f: F,
) -> GradReport
where
    F: for<'t> Fn(&Bound<'t, f64>, Var<'t, f64>) -> hima_core::Result<Var<'t, f64>>,
{
    let all: Vec<usize> = (0..store.len()).collect();
    let sel = selected.unwrap_or(&all).to_vec();
    let mut inputs = vec![x.clone()];
    inputs.extend(sel.iter().map(|&i| store.tensors()[i].clone()));
    check_gradients(
        &inputs,
        |tape, vars| {
            let mut bound = Vec::with_capacity(store.len());
            let mut k = 1;
            for i in 0..store.len() {
                if sel.get(k - 1) == Some(&i) {
                    bound.push(vars[k]);
                    k += 1;
                } else {
                    bound.push(tape.constant(store.tensors()[i].clone()));
                }
            }
            f(&Bound::from_vars(bound), vars[0]).map_err(to_tensor_err)
        },
        1e-5,
        max_coords,
    )
    .unwrap()
}

/// Direct convolution over `[B, Cin, H, W]` with zero padding.
pub fn conv_ref(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    pad: usize,
    dil: usize,
    groups: usize,
) -> Tensor<f64> {
    let s = x.shape();
    let (bn, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, cg, k) = (ws[0], ws[1], ws[2]);
    let oh = h + 2 * pad - dil * (k - 1);
    let ow = wd + 2 * pad - dil * (k - 1);
    let og = cout / groups;
    let mut out = vec![0.0; bn * cout * oh * ow];
    for n in 0..bn {
        for o in 0..cout {
            let g = o / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map(|b| b.data()[o]).unwrap_or(0.0);
                    for ci in 0..cg {
                        let c = g * cg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y + ky * dil) as isize - pad as isize;
                                let ix = (xx + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * cg + ci) * k + ky) * k + kx]
                                    * x.data()[((n * cin + c) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((n * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[bn, cout, oh, ow], out).unwrap()
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.get(store.id(name).unwrap_or_else(|| panic!("no parameter {name}"))).clone()
}

pub fn set_param(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) {
    let id = store.id(name).unwrap();
    *store.get_mut(id) = t;
}

/// Per-token sequential reference of one scan direction of an SS2D branch.
/// `x` is `[1, C, H, W]`; returns the un-permuted `[1, C, H, W]` output.
pub fn ss2d_branch_ref(
    x: &Tensor<f64>,
    order: &[(usize, usize)],
    x_proj: &Tensor<f64>,
    dt_w: &Tensor<f64>,
    dt_b: &Tensor<f64>,
    a_log: &Tensor<f64>,
    d: &Tensor<f64>,
) -> Tensor<f64> {
    let s = x.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let n = a_log.shape()[1];
    let r = dt_w.shape()[1];
    let mut state = vec![0.0; c * n];
    let mut out = vec![0.0; c * h * w];
    for &(y, xx) in order {
        let u: Vec<f64> = (0..c).map(|ch| x.data()[(ch * h + y) * w + xx]).collect();
        let proj: Vec<f64> = (0..r + 2 * n)
            .map(|j| (0..c).map(|ch| x_proj.data()[j * c + ch] * u[ch]).sum())
            .collect();
        for ch in 0..c {
            let z: f64 = dt_b.data()[ch] + (0..r).map(|k| dt_w.data()[ch * r + k] * proj[k]).sum::<f64>();
            let delta = if z > 20.0 { z } else { z.exp().ln_1p() };
            let mut yv = d.data()[ch] * u[ch];
            for k in 0..n {
                let a = -a_log.data()[ch * n + k].exp();
                let hs = &mut state[ch * n + k];
                *hs = (delta * a).exp() * *hs + delta * proj[r + k] * u[ch];
                yv += proj[r + n + k] * *hs;
            }
            out[(ch * h + y) * w + xx] = yv;
        }
    }
    Tensor::new(&[1, c, h, w], out).unwrap()
}

/// Scan orders written out directly: row-major, reversed row-major,
/// column-major, reversed column-major.
pub fn scan_orders(h: usize, w: usize) -> Vec<Vec<(usize, usize)>> {
    let rows: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let cols: Vec<(usize, usize)> = (0..w).flat_map(|x| (0..h).map(move |y| (y, x))).collect();
    vec![
        rows.clone(),
        rows.into_iter().rev().collect(),
        cols.clone(),
        cols.into_iter().rev().collect(),
    ]
}

/// Output of the whole SS2D module by sequential recurrences per direction.
pub fn ss2d_ref(ss: &hima_core::blocks::Ss2d, store: &hima_core::params::ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let orders = scan_orders(h, w);
    let tags = ["row_fwd", "row_bwd", "col_fwd", "col_bwd"];
    let mut acc = Tensor::zeros(x.shape());
    for (order, tag) in orders.iter().zip(tags) {
        let p = |n: &str| param(store, &format!("{}.{tag}.{n}", ss.name));
        let y = ss2d_branch_ref(x, order, &p("x_proj.w"), &p("dt_proj.w"), &p("dt_proj.b"), &p("a_log"), &p("d"));
        acc = acc.zip_map(&y, |a, b| a + b).unwrap();
    }
    conv_ref(&acc, &param(store, &format!("{}.out.w", ss.name)), Some(&param(store, &format!("{}.out.b", ss.name))), 0, 1, 1)
}
