use hima_tensor::kernels::index::IndexMap;
use hima_tensor::kernels::scan::ScanDims;
use hima_tensor::{Real, ScanInputs, Var};
use rand::Rng;

use super::leb::check_channels;
use crate::cost::CostReport;
use crate::error::Result;
use crate::params::{Bound, Builder, Conv, Init, Linear, ParamId};

/// Hidden state size per channel.
pub const D_STATE: usize = 8;

/// Token orderings of the four scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RowForward,
        Direction::RowBackward,
        Direction::ColForward,
        Direction::ColBackward,
    ];

    /// Pixel `(y, x)` visited at step `t` of an `h×w` scan.
    pub fn position(self, t: usize, h: usize, w: usize) -> (usize, usize) {
        let l = h * w;
        match self {
            Direction::RowForward => (t / w, t % w),
            Direction::RowBackward => ((l - 1 - t) / w, (l - 1 - t) % w),
            Direction::ColForward => (t % h, t / h),
            Direction::ColBackward => ((l - 1 - t) % h, (l - 1 - t) / h),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::RowForward => "row_fwd",
            Direction::RowBackward => "row_bwd",
            Direction::ColForward => "col_fwd",
            Direction::ColBackward => "col_bwd",
        }
    }
}

/// `[B, C, H, W] -> [B, L, C]` in scan order, and its inverse.
pub fn scan_maps(dir: Direction, b: usize, c: usize, h: usize, w: usize) -> (IndexMap, IndexMap) {
    let l = h * w;
    let mut to_seq = vec![0; b * l * c];
    let mut from_seq = vec![0; b * c * l];
    for bi in 0..b {
        for t in 0..l {
            let (y, x) = dir.position(t, h, w);
            for ci in 0..c {
                let img = ((bi * c + ci) * h + y) * w + x;
                let seq = (bi * l + t) * c + ci;
                to_seq[seq] = img;
                from_seq[img] = seq;
            }
        }
    }
    (
        IndexMap {
            shape: vec![b, l, c],
            src: to_seq,
        },
        IndexMap {
            shape: vec![b, c, h, w],
            src: from_seq,
        },
    )
}

/// Parameters of one scan direction.
#[derive(Debug, Clone)]
pub struct ScanBranch {
    pub dir: Direction,
    /// `C -> R + 2N`: step-size features, `B`, `C`.
    pub x_proj: Linear,
    /// `R -> C` with bias, followed by softplus.
    pub dt_proj: Linear,
    /// `[C, N]`, `A = −exp(A_log)`.
    pub a_log: ParamId,
    /// `[C]`
    pub d: ParamId,
}

/// Four-direction selective scan over image tokens.
#[derive(Debug, Clone)]
pub struct Ss2d {
    pub name: String,
    pub channels: usize,
    pub dt_rank: usize,
    pub branches: Vec<ScanBranch>,
    pub out: Conv,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl Ss2d {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let dt_rank = channels.div_ceil(16);
        let branches = Direction::ALL
            .iter()
            .map(|&dir| {
                let p = format!("{name}.{}", dir.tag());
                let x_proj = Linear::new(bld, &format!("{p}.x_proj"), channels, dt_rank + 2 * D_STATE, false, Init::Uniform);
                let dt_proj = Linear::new(bld, &format!("{p}.dt_proj"), dt_rank, channels, false, Init::Uniform);
                let dt_bias = bld.from_fn(&format!("{p}.dt_proj.b"), &[channels], |rng, _| {
                    let dt = rng.random_range(0.001f64.ln()..0.1f64.ln()).exp();
                    inverse_softplus(dt)
                });
                let dt_proj = Linear {
                    b: Some(dt_bias),
                    ..dt_proj
                };
                let a_log = bld.from_fn(&format!("{p}.a_log"), &[channels, D_STATE], |_, i| {
                    ((i % D_STATE + 1) as f64).ln()
                });
                let d = bld.tensor(&format!("{p}.d"), &[channels], Init::Const(1.0), 1);
                ScanBranch {
                    dir,
                    x_proj,
                    dt_proj,
                    a_log,
                    d,
                }
            })
            .collect();
        let out = Conv::same(bld, &format!("{name}.out"), channels, channels, 1, Init::Zero);
        Self {
            name: name.to_string(),
            channels,
            dt_rank,
            branches,
            out,
        }
    }

    /// Un-permuted output of one direction, before the output projection.
    pub fn branch<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>, i: usize) -> Result<Var<'t, T>> {
        check_channels("SS2D", self.channels, &x)?;
        let [b, c, h, w] = x.value().dims4("ss2d")?;
        let br = &self.branches[i];
        let (to_seq, from_seq) = scan_maps(br.dir, b, c, h, w);
        let u = x.gather(to_seq)?;
        let proj = br.x_proj.forward(bound, u)?;
        let r = self.dt_rank;
        let dt_in = proj.narrow(2, 0, r)?;
        let bm = proj.narrow(2, r, D_STATE)?;
        let cm = proj.narrow(2, r + D_STATE, D_STATE)?;
        let delta = br.dt_proj.forward(bound, dt_in)?.softplus();
        let a = bound.get(br.a_log).exp().neg();
        let y = Var::selective_scan(ScanInputs {
            u,
            delta,
            a,
            b: bm,
            c: cm,
            d: bound.get(br.d),
        })?;
        Ok(y.gather(from_seq)?)
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut acc = self.branch(bound, x, 0)?;
        for i in 1..self.branches.len() {
            acc = acc.add(self.branch(bound, x, i)?)?;
        }
        self.out.forward(bound, acc)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        let l = h * w;
        for br in &self.branches {
            br.x_proj.cost(report, l);
            br.dt_proj.cost(report, l);
            let dims = ScanDims {
                batch: 1,
                len: l,
                inner: self.channels,
                state: D_STATE,
            };
            report.push(
                &format!("{}.{}.scan", self.name, br.dir.tag()),
                (self.channels * D_STATE + self.channels) as u64,
                dims.macs(),
            );
        }
        self.out.cost(report, h, w);
    }
}
