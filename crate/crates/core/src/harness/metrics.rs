use hima_tensor::{Real, Tensor, Var};

use crate::error::{CoreError, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Data(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `α·mean|r̂ − gt_raw| + β·mean|ŝ − gt_srgb|`; the RAW term is skipped
/// when the model has no RAW output. Returns `(total, raw, srgb)`.
pub fn l1_dual_loss<'t, T: Real>(
    raw: Option<(Var<'t, T>, Var<'t, T>)>,
    srgb: (Var<'t, T>, Var<'t, T>),
    alpha: f64,
    beta: f64,
) -> Result<(Var<'t, T>, Option<Var<'t, T>>, Var<'t, T>)> {
    let l1 = |a: Var<'t, T>, b: Var<'t, T>| -> Result<Var<'t, T>> {
        if a.shape() != b.shape() {
            return Err(CoreError::Data(format!(
                "loss operands differ in shape: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(a.sub(b)?.abs().mean_all())
    };
    let ls = l1(srgb.0, srgb.1)?;
    let mut total = ls.mul_scalar(T::of(beta));
    let lr = match raw {
        Some((a, b)) => {
            let lr = l1(a, b)?;
            total = total.add(lr.mul_scalar(T::of(alpha)))?;
            Some(lr)
        }
        None => None,
    };
    Ok((total, lr, ls))
}

/// `10·log10(peak²/MSE)`, reported as [`PSNR_CAP`] when the images match.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps of odd length `n`.
pub fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let g: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one `h×w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all `h×w` planes of `a` and `b` (so channel-averaged),
/// with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`,
/// dynamic range 1 and valid-mode windows. Planes smaller than 11 pixels
/// use the largest odd window that fits.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let s = a.shape();
    if s.len() < 2 {
        return Err(CoreError::Data(format!("ssim needs at least 2 axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = a.numel() / (h * w).max(1);
    let mut n = SSIM_WINDOW.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    if n == 0 {
        return Err(CoreError::Data("ssim of an empty image".into()));
    }
    let g = gaussian_window(n, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for p in 0..planes {
        let pa = &a.data()[p * h * w..(p + 1) * h * w];
        let pb = &b.data()[p * h * w..(p + 1) * h * w];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let (mx, oh, ow) = filter(pa, h, w, &g);
        let (my, _, _) = filter(pb, h, w, &g);
        let (xx, _, _) = filter(&prod(|x, _| x * x), h, w, &g);
        let (yy, _, _) = filter(&prod(|_, y| y * y), h, w, &g);
        let (xy, _, _) = filter(&prod(|x, y| x * y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = xx[i] - ux * ux;
            let vy = yy[i] - uy * uy;
            let cxy = xy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / planes as f64)
}
