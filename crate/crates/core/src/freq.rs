//! Frequency extraction: a centred rectangular low/high split of the 2-D
//! spectrum over the last two axes, and its inverse.

use hima_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreqConfig {
    /// Low-window half-width as a fraction of each extent, truncated.
    pub threshold: f64,
    /// Lower bound on the half-width; 0 keeps plain truncation.
    pub min_low_halfwidth: usize,
}

impl Default for FreqConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            min_low_halfwidth: 0,
        }
    }
}

impl FreqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.threshold) {
            return Err(CoreError::config(
                "fe_threshold",
                format!("must lie in [0, 0.5], got {}", self.threshold),
            ));
        }
        Ok(())
    }

    /// `h' = max(int(h·threshold), min_low_halfwidth)`.
    pub fn halfwidth(&self, n: usize) -> usize {
        ((n as f64 * self.threshold) as usize).max(self.min_low_halfwidth)
    }

    /// Rows (or columns) `n/2 − h' .. n/2 + h'` of the shifted spectrum, clamped.
    pub fn window(&self, n: usize) -> std::ops::Range<usize> {
        let hw = self.halfwidth(n);
        let c = n / 2;
        c.saturating_sub(hw)..(c + hw).min(n)
    }

    /// Low-pass mask of shape `[1, …, 1, h, w]` with `rank` axes.
    pub fn low_mask<T: Real>(&self, rank: usize, h: usize, w: usize) -> Tensor<T> {
        let (rows, cols) = (self.window(h), self.window(w));
        let mut m = vec![T::zero(); h * w];
        for y in rows {
            for x in cols.clone() {
                m[y * w + x] = T::one();
            }
        }
        let mut shape = vec![1; rank.saturating_sub(2)];
        shape.extend([h, w]);
        Tensor::new(&shape, m).expect("mask shape")
    }
}

/// High-frequency real/imaginary parts and the complex low band of a
/// centred spectrum.
#[derive(Clone, Copy)]
pub struct FreqSplit<'t, T: Real> {
    pub hf_re: Var<'t, T>,
    pub hf_im: Var<'t, T>,
    pub lf_re: Var<'t, T>,
    pub lf_im: Var<'t, T>,
}

fn spatial(x: &Var<'_, impl Real>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(CoreError::Data(format!("frequency split needs at least 2 axes, got {s:?}")));
    }
    Ok((s.len(), s[s.len() - 2], s[s.len() - 1]))
}

pub fn fe<'t, T: Real>(x: Var<'t, T>, cfg: &FreqConfig) -> Result<FreqSplit<'t, T>> {
    cfg.validate()?;
    let (rank, h, w) = spatial(&x)?;
    let (re, im) = x.dft2(None, false)?;
    let (re, im) = (re.fftshift()?, im.fftshift()?);
    let tape = x.tape();
    let low = cfg.low_mask::<T>(rank, h, w);
    let high = low.map(|v| T::one() - v);
    let low = tape.constant(low);
    let high = tape.constant(high);
    Ok(FreqSplit {
        hf_re: re.mul(high)?,
        hf_im: im.mul(high)?,
        lf_re: re.mul(low)?,
        lf_im: im.mul(low)?,
    })
}

pub fn ife<'t, T: Real>(s: FreqSplit<'t, T>) -> Result<Var<'t, T>> {
    let re = s.hf_re.add(s.lf_re)?.ifftshift()?;
    let im = s.hf_im.add(s.lf_im)?.ifftshift()?;
    Ok(re.dft2(Some(im), true)?.0)
}

/// Spatial-domain high-pass image: `ife` of `fe(x)` with the low band zeroed.
pub fn hf_component<'t, T: Real>(x: Var<'t, T>, cfg: &FreqConfig) -> Result<Var<'t, T>> {
    let s = fe(x, cfg)?;
    let zero = x.tape().constant(Tensor::zeros(&s.lf_re.shape()));
    ife(FreqSplit {
        lf_re: zero,
        lf_im: zero,
        ..s
    })
}
