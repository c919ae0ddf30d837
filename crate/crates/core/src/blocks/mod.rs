//! Building blocks: LEB, MeSA, SS2D, spatial attention, the residual
//! LSB/SSB compositions, and the pre-denoising block.

mod leb;
mod mesa;
mod ss2d;

pub use leb::{Leb, DILATIONS};
pub use mesa::{Mesa, META_DIM};
pub use ss2d::{scan_maps, Direction, ScanBranch, Ss2d, D_STATE};

use hima_tensor::{Conv2dParams, Real, Var};
use serde::{Deserialize, Serialize};

use crate::cost::CostReport;
use crate::error::Result;
use crate::params::{Bound, Builder, Conv, Init, LayerNorm};

/// CBAM-style spatial attention `x ⊙ σ(conv7×7([mean_c(x), max_c(x)]))`
/// followed by a zero-initialized 1×1 projection.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv: Conv,
    pub out: Conv,
}

impl SpatialAttention {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        Self {
            conv: Conv::same(bld, &format!("{name}.conv"), 2, 1, 7, Init::Uniform),
            out: Conv::same(bld, &format!("{name}.out"), channels, channels, 1, Init::Zero),
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let stats = Var::concat(&[x.mean_axes(&[1])?, x.max_axis(1)?], 1)?;
        let gate = self.conv.forward(bound, stats)?.sigmoid();
        self.out.forward(bound, x.mul(gate)?)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        self.conv.cost(report, h, w);
        self.out.cost(report, h, w);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    Lsb,
    Ssb,
    SpatialAttention,
}

impl BlockType {
    pub fn name(self) -> &'static str {
        match self {
            BlockType::Lsb => "lsb",
            BlockType::Ssb => "ssb",
            BlockType::SpatialAttention => "spatial_attention",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Mixer {
    Mesa(Mesa),
    Ss2d(Ss2d),
    Spatial(SpatialAttention),
}

impl Mixer {
    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Mixer::Mesa(m) => m.forward(bound, x),
            Mixer::Ss2d(m) => m.forward(bound, x),
            Mixer::Spatial(m) => m.forward(bound, x),
        }
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        match self {
            Mixer::Mesa(m) => m.cost(report, h, w),
            Mixer::Ss2d(m) => m.cost(report, h, w),
            Mixer::Spatial(m) => m.cost(report, h, w),
        }
    }
}

/// Pre-norm residual pair: `x + mixer(LN(x))`, then `x + LEB(LN(x))`.
/// With zero-initialized output layers the block starts as the identity.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockType,
    pub norm1: LayerNorm,
    pub mixer: Mixer,
    pub norm2: LayerNorm,
    pub leb: Leb,
}

impl Block {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, kind: BlockType, channels: usize, metadata: bool) -> Self {
        let norm1 = LayerNorm::new(bld, &format!("{name}.norm1"), channels);
        let mname = format!("{name}.mixer");
        let mixer = match kind {
            BlockType::Lsb => Mixer::Mesa(Mesa::new(bld, &mname, channels, metadata)),
            BlockType::Ssb => Mixer::Ss2d(Ss2d::new(bld, &mname, channels)),
            BlockType::SpatialAttention => Mixer::Spatial(SpatialAttention::new(bld, &mname, channels)),
        };
        let norm2 = LayerNorm::new(bld, &format!("{name}.norm2"), channels);
        let leb = Leb::new(bld, &format!("{name}.leb"), channels, Init::Zero);
        Self {
            kind,
            norm1,
            mixer,
            norm2,
            leb,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = x.add(self.mixer.forward(bound, self.norm1.forward(bound, x)?)?)?;
        x.add(self.leb.forward(bound, self.norm2.forward(bound, x)?)?)
            .map_err(Into::into)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        self.norm1.cost(report);
        self.mixer.cost(report, h, w);
        self.norm2.cost(report);
        self.leb.cost(report, h, w);
    }
}

/// Stage-one RAW denoiser: 3×3 lift, residual LEBs, 3×3 projection back to
/// the input channels added onto the input. The projection starts at zero.
#[derive(Debug, Clone)]
pub struct Pdb {
    pub lift: Conv,
    pub lebs: Vec<Leb>,
    pub proj: Conv,
    pub channels: usize,
}

impl Pdb {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize, width: usize, depth: usize) -> Self {
        Self {
            lift: Conv::same(bld, &format!("{name}.lift"), channels, width, 3, Init::Uniform),
            lebs: (0..depth)
                .map(|i| Leb::new(bld, &format!("{name}.leb{i}"), width, Init::Uniform))
                .collect(),
            proj: Conv::new(
                bld,
                &format!("{name}.proj"),
                width,
                channels,
                3,
                Conv2dParams::same(3, 1),
                true,
                Init::Zero,
            ),
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        leb::check_channels("PDB", self.channels, &x)?;
        let mut f = self.lift.forward(bound, x)?;
        for leb in &self.lebs {
            f = f.add(leb.forward(bound, f)?)?;
        }
        Ok(x.add(self.proj.forward(bound, f)?)?)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        self.lift.cost(report, h, w);
        for leb in &self.lebs {
            leb.cost(report, h, w);
        }
        self.proj.cost(report, h, w);
    }
}
