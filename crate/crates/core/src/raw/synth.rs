//! Procedural low-light RAW pairs and the fixed reference ISP.

use hima_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cfa::{pack, unpack, Cfa};
use super::pnm::{Gray16, Rgb8};
use crate::error::{CoreError, Result};

/// Sensor and noise parameters of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub black_level: u16,
    pub white_level: u16,
    /// Shot-noise gain: variance contributed per unit of normalized signal.
    pub shot_gain: f64,
    /// Read-noise standard deviation in normalized units.
    pub read_noise: f64,
    /// Per-channel white-balance gains (R, G, B) applied by the ISP.
    pub wb_gains: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            black_level: 512,
            white_level: 16383,
            shot_gain: 1e-4,
            read_noise: 1e-3,
            wb_gains: [2.0, 1.0, 1.6],
        }
    }
}

impl SynthConfig {
    pub fn noiseless() -> Self {
        Self {
            shot_gain: 0.0,
            read_noise: 0.0,
            ..Self::default()
        }
    }

    fn range(&self) -> f64 {
        (self.white_level - self.black_level) as f64
    }
}

/// Packed mosaic normalized by `(white − black)`. Readings below the black
/// level stay negative so that noise averages out; the network input is
/// clipped by [`PackedRaw::amplified`].
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRaw {
    /// `[C, H/cell, W/cell]`
    pub data: Tensor<f64>,
    pub cfa: Cfa,
    pub black_level: u16,
    pub white_level: u16,
    /// Exposure amplification factor.
    pub ratio: f64,
}

impl PackedRaw {
    pub fn from_mosaic(mosaic: &Gray16, cfa: Cfa, black_level: u16, white_level: u16, ratio: f64) -> Result<Self> {
        if white_level <= black_level {
            return Err(CoreError::Data(format!(
                "white level {white_level} must exceed black level {black_level}"
            )));
        }
        let range = (white_level - black_level) as f64;
        let norm: Vec<f64> = mosaic
            .data
            .iter()
            .map(|&dn| ((dn as f64 - black_level as f64) / range).min(1.0))
            .collect();
        let m = Tensor::new(&[mosaic.height, mosaic.width], norm)?;
        Ok(Self {
            data: pack(cfa, &m)?,
            cfa,
            black_level,
            white_level,
            ratio,
        })
    }

    /// Mosaic in sensor digital numbers.
    pub fn to_mosaic(&self) -> Result<Gray16> {
        let m = unpack(self.cfa, &self.data)?;
        let range = (self.white_level - self.black_level) as f64;
        let [h, w] = [m.shape()[0], m.shape()[1]];
        Ok(Gray16 {
            width: w,
            height: h,
            data: m
                .data()
                .iter()
                .map(|&v| (self.black_level as f64 + v * range).round() as u16)
                .collect(),
        })
    }

    /// Black-level clamped reading `clip(data, 0, 1)`, the input domain
    /// before amplification.
    pub fn clipped(&self) -> Tensor<f64> {
        self.data.clamp(0.0, 1.0)
    }

    /// Network input: `clip(data · ratio, 0, 1)`.
    pub fn amplified(&self) -> Tensor<f64> {
        self.data.map(|v| (v * self.ratio).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub noisy: PackedRaw,
    pub gt_raw: PackedRaw,
    /// `[3, H, W]` at mosaic resolution, 8-bit quantized values in `[0, 1]`.
    pub gt_srgb: Tensor<f64>,
    pub seed: u64,
}

/// Linear-light RGB scene `[3, H, W]` built from gradients, disks,
/// checkerboards, colour ramps and gratings.
pub fn scene(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    let mut img = vec![0.0; 3 * h * w];
    let corners: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.random_range(0.02..0.6), rng.random_range(0.02..0.6), rng.random_range(0.02..0.6)])
        .collect();
    let scale = h.max(w) as f64;
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 / scale, x as f64 / scale);
            for c in 0..3 {
                img[(c * h + y) * w + x] = corners[0][c] * (1.0 - fx) * (1.0 - fy)
                    + corners[1][c] * fx * (1.0 - fy)
                    + corners[2][c] * (1.0 - fx) * fy
                    + corners[3][c] * fx * fy;
            }
        }
    }
    let paint = |img: &mut Vec<f64>, inside: &dyn Fn(f64, f64) -> Option<[f64; 3]>| {
        for y in 0..h {
            for x in 0..w {
                if let Some(col) = inside(y as f64 / scale, x as f64 / scale) {
                    for c in 0..3 {
                        img[(c * h + y) * w + x] = col[c];
                    }
                }
            }
        }
    };
    for _ in 0..rng.random_range(3..7) {
        let (cy, cx, r) = (rng.random::<f64>(), rng.random::<f64>(), rng.random_range(0.05..0.3));
        let col = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        paint(&mut img, &|y, x| ((y - cy).powi(2) + (x - cx).powi(2) < r * r).then_some(col));
    }
    {
        let (y0, x0) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6));
        let (sz, cell) = (rng.random_range(0.2..0.4), rng.random_range(0.03..0.08));
        let (a, b) = (rng.random_range(0.0..0.3), rng.random_range(0.5..1.0));
        paint(&mut img, &|y, x| {
            if y < y0 || x < x0 || y > y0 + sz || x > x0 + sz {
                return None;
            }
            let odd = (((y - y0) / cell) as i64 + ((x - x0) / cell) as i64) % 2 == 1;
            let v = if odd { b } else { a };
            Some([v, v, v])
        });
    }
    {
        let y0 = rng.random_range(0.0..0.85);
        let th = rng.random_range(0.05..0.15);
        paint(&mut img, &|y, x| {
            (y >= y0 && y < y0 + th).then(|| {
                let t = x.clamp(0.0, 1.0);
                [t, 1.0 - t, (0.5 - t).abs() * 2.0]
            })
        });
    }
    {
        let (y0, x0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
        let sz = rng.random_range(0.15..0.3);
        let freq = rng.random_range(20.0..60.0);
        let ang: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let base = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        paint(&mut img, &|y, x| {
            if y < y0 || x < x0 || y > y0 + sz || x > x0 + sz {
                return None;
            }
            let s = 0.5 + 0.5 * (freq * (x * ang.cos() + y * ang.sin())).sin();
            Some([base[0] * s, base[1] * s, base[2] * s])
        });
    }
    Tensor::new(&[3, h, w], img).expect("scene shape")
}

/// Weighted same-colour interpolation: each missing colour at a pixel is the
/// 4/2/1-weighted mean of that colour's samples in the 3×3 neighbourhood
/// (bilinear demosaicing for Bayer), widening to 5×5 uniform weights when
/// the 3×3 window holds no sample of it.
pub fn demosaic(cfa: Cfa, mosaic: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (mosaic.shape()[0], mosaic.shape()[1]);
    let m = mosaic.data();
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let own = cfa.color_at(y, x);
            for c in 0..3 {
                let v = if c == own {
                    m[y * w + x]
                } else {
                    let gather = |radius: isize, weighted: bool| {
                        let (mut s, mut n) = (0.0, 0.0);
                        for dy in -radius..=radius {
                            for dx in -radius..=radius {
                                let (yy, xx) = (y as isize + dy, x as isize + dx);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let (yy, xx) = (yy as usize, xx as usize);
                                if cfa.color_at(yy, xx) != c {
                                    continue;
                                }
                                let wt = if weighted {
                                    [4.0, 2.0, 1.0][(dy.abs() + dx.abs()) as usize]
                                } else {
                                    1.0
                                };
                                s += wt * m[yy * w + xx];
                                n += wt;
                            }
                        }
                        (n > 0.0).then(|| s / n)
                    };
                    gather(1, true).or_else(|| gather(2, false)).unwrap_or(0.0)
                };
                out[(c * h + y) * w + x] = v;
            }
        }
    }
    Tensor::new(&[3, h, w], out).expect("demosaic shape")
}

/// Demosaic, white balance, clip, gamma 1/2.2. `mosaic` is normalized linear.
pub fn isp(cfa: Cfa, mosaic: &Tensor<f64>, wb: [f64; 3]) -> Tensor<f64> {
    let mut rgb = demosaic(cfa, mosaic);
    let plane = rgb.numel() / 3;
    for (i, v) in rgb.data_mut().iter_mut().enumerate() {
        *v = (*v * wb[i / plane]).clamp(0.0, 1.0).powf(1.0 / 2.2);
    }
    rgb
}

/// Ratio scaling followed by the reference ISP.
pub fn baseline_srgb(noisy: &PackedRaw, wb: [f64; 3]) -> Result<Tensor<f64>> {
    let m = unpack(noisy.cfa, &noisy.amplified())?;
    Ok(isp(noisy.cfa, &m, wb))
}

pub fn quantize8(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// `[3, H, W]` in `[0, 1]` → interleaved 8-bit RGB.
pub fn to_rgb8(t: &Tensor<f64>) -> Result<Rgb8> {
    let (h, w) = match *t.shape() {
        [3, h, w] => (h, w),
        _ => return Err(CoreError::Data(format!("expected [3, H, W], got {:?}", t.shape()))),
    };
    let mut data = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            data.push((t.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(Rgb8 {
        width: w,
        height: h,
        data,
    })
}

pub fn from_rgb8(img: &Rgb8) -> Tensor<f64> {
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            out[c * h * w + p] = img.data[3 * p + c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], out).expect("rgb shape")
}

/// One noisy/clean pair of an `height×width` mosaic.
///
/// The clean mosaic samples the scene through the CFA after dividing out
/// the white balance. The noisy capture is `gt/ratio` plus Gaussian noise
/// of variance `shot_gain·signal + read_noise²`, quantized to sensor
/// numbers and clipped to the sensor range `[0, white]`.
pub fn synth_pair(seed: u64, height: usize, width: usize, cfa: Cfa, ratio: f64, cfg: &SynthConfig) -> Result<SamplePair> {
    if height % cfa.period() != 0 || width % cfa.period() != 0 || height == 0 || width == 0 {
        return Err(CoreError::Data(format!(
            "{} mosaics need extents divisible by {}, got {height}x{width}",
            cfa.name(),
            cfa.period()
        )));
    }
    if ratio < 1.0 {
        return Err(CoreError::Data(format!("ratio must be at least 1, got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = scene(&mut rng, height, width);
    let range = cfg.range();
    let quant = |v: f64| ((cfg.black_level as f64 + v * range).round().clamp(0.0, cfg.white_level as f64)) as u16;
    let plane = height * width;
    let mut gt_dn = Vec::with_capacity(plane);
    let mut noisy_dn = Vec::with_capacity(plane);
    for y in 0..height {
        for x in 0..width {
            let c = cfa.color_at(y, x);
            let v = (rgb.data()[c * plane + y * width + x] / cfg.wb_gains[c]).clamp(0.0, 1.0);
            let q = quant(v);
            gt_dn.push(q);
            let s = (q as f64 - cfg.black_level as f64) / range / ratio;
            let var = cfg.shot_gain * s + cfg.read_noise * cfg.read_noise;
            let z: f64 = StandardNormal.sample(&mut rng);
            noisy_dn.push(quant(s + var.sqrt() * z));
        }
    }
    let gt_mosaic = Gray16 {
        width,
        height,
        data: gt_dn,
    };
    let noisy_mosaic = Gray16 {
        width,
        height,
        data: noisy_dn,
    };
    let gt_raw = PackedRaw::from_mosaic(&gt_mosaic, cfa, cfg.black_level, cfg.white_level, 1.0)?;
    let noisy = PackedRaw::from_mosaic(&noisy_mosaic, cfa, cfg.black_level, cfg.white_level, ratio)?;
    let gt_lin = unpack(cfa, &gt_raw.data)?;
    let gt_srgb = quantize8(&isp(cfa, &gt_lin, cfg.wb_gains));
    Ok(SamplePair {
        noisy,
        gt_raw,
        gt_srgb,
        seed,
    })
}
