use hima_tensor::{Real, Tensor};

use crate::error::Result;
use crate::raw::synth::baseline_srgb;
use crate::raw::{SamplePair, SynthConfig};

/// One training/evaluation example as network tensors with a batch axis.
#[derive(Debug, Clone)]
pub struct TrainSample<T: Real> {
    /// Amplified, clipped packed input `[1, C, h, w]`.
    pub input: Tensor<T>,
    /// `[1, C, h, w]`
    pub gt_raw: Tensor<T>,
    /// `[1, 3, h·r, w·r]`
    pub gt_srgb: Tensor<T>,
    /// Ratio scaling followed by the reference ISP, `[1, 3, h·r, w·r]`.
    pub baseline: Tensor<f64>,
}

fn batched(t: &Tensor<f64>) -> Tensor<f64> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(&shape).expect("same element count")
}

impl<T: Real> TrainSample<T> {
    pub fn from_pair(pair: &SamplePair) -> Result<Self> {
        let baseline = baseline_srgb(&pair.noisy, SynthConfig::default().wb_gains)?;
        Ok(Self {
            input: batched(&pair.noisy.amplified()).cast(),
            gt_raw: batched(&pair.gt_raw.data).cast(),
            gt_srgb: batched(&pair.gt_srgb).cast(),
            baseline: batched(&baseline),
        })
    }

    pub fn upscale(&self) -> usize {
        self.gt_srgb.shape()[2] / self.input.shape()[2]
    }
}

/// Flip/transpose choice applied to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub flip_h: bool,
    pub flip_v: bool,
    pub transpose: bool,
}

impl Augment {
    pub fn from_bits(bits: u32) -> Self {
        Self {
            flip_h: bits & 1 != 0,
            flip_v: bits & 2 != 0,
            transpose: bits & 4 != 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Rearranges `[B, C, H, W]` in units of `block×block` tiles, keeping
    /// the pixel order inside each tile. With `block = 1` this is the plain
    /// flip/transpose; applying it to the packed input with `block = 1` and
    /// to the sRGB target with `block = r` keeps every target tile paired
    /// with the packed pixel it was developed from.
    pub fn apply<T: Real>(&self, t: &Tensor<T>, block: usize) -> Tensor<T> {
        if self.is_identity() {
            return t.clone();
        }
        let s = t.shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (bh, bw) = (h / block, w / block);
        let (oh, ow) = if self.transpose { (w, h) } else { (h, w) };
        let (obh, obw) = (oh / block, ow / block);
        let mut out = vec![T::zero(); t.numel()];
        for p in 0..planes {
            for ty in 0..obh {
                for tx in 0..obw {
                    // source tile of output tile (ty, tx)
                    let (mut sy, mut sx) = if self.transpose { (tx, ty) } else { (ty, tx) };
                    if self.flip_v {
                        sy = bh - 1 - sy;
                    }
                    if self.flip_h {
                        sx = bw - 1 - sx;
                    }
                    for iy in 0..block {
                        for ix in 0..block {
                            out[p * oh * ow + (ty * block + iy) * ow + tx * block + ix] =
                                t.data()[p * h * w + (sy * block + iy) * w + sx * block + ix];
                        }
                    }
                }
            }
        }
        Tensor::new(&[s[0], s[1], oh, ow], out).expect("augmented shape")
    }

    pub fn sample<T: Real>(&self, s: &TrainSample<T>) -> TrainSample<T> {
        let r = s.upscale();
        TrainSample {
            input: self.apply(&s.input, 1),
            gt_raw: self.apply(&s.gt_raw, 1),
            gt_srgb: self.apply(&s.gt_srgb, r),
            baseline: self.apply(&s.baseline, r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_and_transpose() {
        let t = Tensor::<f64>::new(&[1, 1, 2, 3], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let h = Augment::from_bits(1).apply(&t, 1);
        assert_eq!(h.data(), &[2., 1., 0., 5., 4., 3.]);
        let tr = Augment::from_bits(4).apply(&t, 1);
        assert_eq!(tr.shape(), &[1, 1, 3, 2]);
        assert_eq!(tr.data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn block_flip_keeps_tiles() {
        let t = Tensor::<f64>::new(&[1, 1, 2, 4], vec![0., 1., 2., 3., 4., 5., 6., 7.]).unwrap();
        let h = Augment::from_bits(1).apply(&t, 2);
        assert_eq!(h.data(), &[2., 3., 0., 1., 6., 7., 4., 5.]);
    }
}
