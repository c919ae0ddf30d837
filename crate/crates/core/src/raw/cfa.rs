//! Colour filter array layouts and mosaic packing.
//!
//! Packing gathers every position of the repeating `cell×cell` block into its
//! own channel: channel `k` holds mosaic position `(k / cell, k % cell)`.
//! For Bayer RGGB this yields the channel order R, G1, G2, B.

use hima_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cfa {
    /// 2×2 RGGB.
    Bayer,
    /// Fuji 6×6 X-Trans, packed by 3×3 position.
    Xtrans,
}

pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;

const XTRANS: [[usize; 6]; 6] = [
    [GREEN, GREEN, RED, GREEN, GREEN, BLUE],
    [GREEN, GREEN, BLUE, GREEN, GREEN, RED],
    [BLUE, RED, GREEN, RED, BLUE, GREEN],
    [GREEN, GREEN, BLUE, GREEN, GREEN, RED],
    [GREEN, GREEN, RED, GREEN, GREEN, BLUE],
    [RED, BLUE, GREEN, BLUE, RED, GREEN],
];

impl Cfa {
    /// Side of the packing cell, which is also the pixel-shuffle factor.
    pub fn cell(self) -> usize {
        match self {
            Cfa::Bayer => 2,
            Cfa::Xtrans => 3,
        }
    }

    pub fn channels(self) -> usize {
        self.cell() * self.cell()
    }

    /// Mosaic extents must be multiples of this.
    pub fn period(self) -> usize {
        match self {
            Cfa::Bayer => 2,
            Cfa::Xtrans => 6,
        }
    }

    /// Colour index (`RED`, `GREEN`, `BLUE`) seen by mosaic pixel `(y, x)`.
    pub fn color_at(self, y: usize, x: usize) -> usize {
        match self {
            Cfa::Bayer => match (y % 2, x % 2) {
                (0, 0) => RED,
                (1, 1) => BLUE,
                _ => GREEN,
            },
            Cfa::Xtrans => XTRANS[y % 6][x % 6],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cfa::Bayer => "bayer",
            Cfa::Xtrans => "xtrans",
        }
    }

    fn check(self, h: usize, w: usize) -> Result<()> {
        let p = self.period();
        if h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            let dim = if h == 0 || h % p != 0 { "height" } else { "width" };
            return Err(CoreError::Data(format!(
                "{} mosaic {dim} must be a positive multiple of {p}, got {h}x{w}",
                self.name()
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Cfa {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bayer" => Ok(Cfa::Bayer),
            "xtrans" | "x-trans" => Ok(Cfa::Xtrans),
            _ => Err(CoreError::config("cfa", format!("unknown CFA `{s}` (expected bayer or xtrans)"))),
        }
    }
}

fn dims2(t: &Tensor<f64>) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(CoreError::Data(format!("expected a 2-D mosaic, got shape {:?}", t.shape()))),
    }
}

/// `[H, W]` mosaic → `[cell², H/cell, W/cell]`.
pub fn pack(cfa: Cfa, mosaic: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (h, w) = dims2(mosaic)?;
    cfa.check(h, w)?;
    let c = cfa.cell();
    let (ph, pw) = (h / c, w / c);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let k = (y % c) * c + x % c;
            out[(k * ph + y / c) * pw + x / c] = mosaic.data()[y * w + x];
        }
    }
    Ok(Tensor::new(&[c * c, ph, pw], out)?)
}

/// Inverse of [`pack`].
pub fn unpack(cfa: Cfa, packed: &Tensor<f64>) -> Result<Tensor<f64>> {
    let c = cfa.cell();
    let (ch, ph, pw) = match *packed.shape() {
        [ch, ph, pw] => (ch, ph, pw),
        _ => {
            return Err(CoreError::Data(format!(
                "expected a packed [C, H, W] tensor, got {:?}",
                packed.shape()
            )))
        }
    };
    if ch != c * c {
        return Err(CoreError::Data(format!(
            "{} packing has {} channels, got {ch}",
            cfa.name(),
            c * c
        )));
    }
    let (h, w) = (ph * c, pw * c);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let k = (y % c) * c + x % c;
            out[y * w + x] = packed.data()[(k * ph + y / c) * pw + x / c];
        }
    }
    Ok(Tensor::new(&[h, w], out)?)
}
