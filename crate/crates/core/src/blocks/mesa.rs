use hima_tensor::{Conv2dParams, Real, Var};

use super::leb::check_channels;
use crate::cost::CostReport;
use crate::error::Result;
use crate::params::{Bound, Builder, Conv, Init, Linear, ParamId};

/// Length of the learnable metadata vector.
pub const META_DIM: usize = 16;

const NORM_EPS: f64 = 1e-12;

/// Channel-wise self-attention whose queries are modulated by a learnable
/// metadata vector `M`:
///
/// `Q = X + DWConv(reshape(Linear(M)) ⊙ Conv1(X))`, `K`, `V` are 1×1
/// projections of `X`, `Attn = softmax(Q̂ K̂ᵀ · t)` over the `C×C` channel
/// grid (rows of `Q`, `K` L2-normalized over pixels) and the output is
/// `Conv1(Attn · V)`.
#[derive(Debug, Clone)]
pub struct Mesa {
    pub name: String,
    pub channels: usize,
    /// `None` in the variant without metadata modulation.
    pub meta: Option<(ParamId, Linear)>,
    pub q_conv: Conv,
    pub q_dw: Conv,
    pub k: Conv,
    pub v: Conv,
    pub temperature: ParamId,
    pub out: Conv,
}

impl Mesa {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize, metadata: bool) -> Self {
        let meta = metadata.then(|| {
            let m = bld.tensor(&format!("{name}.meta"), &[META_DIM], Init::Uniform, 1);
            let lin = Linear::new(bld, &format!("{name}.meta_proj"), META_DIM, channels, true, Init::Uniform);
            (m, lin)
        });
        let q_conv = Conv::same(bld, &format!("{name}.q"), channels, channels, 1, Init::Uniform);
        let q_dw = Conv::new(
            bld,
            &format!("{name}.q_dw"),
            channels,
            channels,
            3,
            Conv2dParams::same(3, 1).with_groups(channels),
            false,
            Init::Uniform,
        );
        let k = Conv::same(bld, &format!("{name}.k"), channels, channels, 1, Init::Uniform);
        let v = Conv::same(bld, &format!("{name}.v"), channels, channels, 1, Init::Uniform);
        let temperature = bld.tensor(&format!("{name}.temperature"), &[1], Init::Const(1.0), 1);
        let out = Conv::same(bld, &format!("{name}.out"), channels, channels, 1, Init::Zero);
        Self {
            name: name.to_string(),
            channels,
            meta,
            q_conv,
            q_dw,
            k,
            v,
            temperature,
            out,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(bound, x)?.0)
    }

    /// Also returns the `[B, C, C]` attention matrix.
    pub fn forward_with_attention<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        check_channels("MeSA", self.channels, &x)?;
        let [b, c, h, w] = x.value().dims4("mesa")?;
        let mut qx = self.q_conv.forward(bound, x)?;
        if let Some((m, lin)) = &self.meta {
            let modulation = lin.forward(bound, bound.get(*m))?.reshape(&[1, c, 1, 1])?;
            qx = modulation.mul(qx)?;
        }
        let q = x.add(self.q_dw.forward(bound, qx)?)?;
        let k = self.k.forward(bound, x)?;
        let v = self.v.forward(bound, x)?;
        let flat = [b, c, h * w];
        let q = l2_rows(q.reshape(&flat)?)?;
        let k = l2_rows(k.reshape(&flat)?)?;
        let t = bound.get(self.temperature).reshape(&[1, 1, 1])?;
        let attn = q.matmul(k.permute(&[0, 2, 1])?)?.mul(t)?.softmax()?;
        let y = attn.matmul(v.reshape(&flat)?)?.reshape(&[b, c, h, w])?;
        Ok((self.out.forward(bound, y)?, attn))
    }

    /// MACs of the two `C×C×HW` attention products.
    pub fn attention_macs(channels: usize, h: usize, w: usize) -> u64 {
        2 * (channels * channels * h * w) as u64
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        if let Some((_, lin)) = &self.meta {
            report.push(&format!("{}.meta", self.name), META_DIM as u64, 0);
            lin.cost(report, 1);
        }
        self.q_conv.cost(report, h, w);
        self.q_dw.cost(report, h, w);
        self.k.cost(report, h, w);
        self.v.cost(report, h, w);
        report.push(&format!("{}.temperature", self.name), 1, 0);
        report.push(
            &format!("{}.attn", self.name),
            0,
            Self::attention_macs(self.channels, h, w),
        );
        self.out.cost(report, h, w);
    }
}

fn l2_rows<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let norm = x.square().sum_axes(&[2])?.add_scalar(T::of(NORM_EPS)).sqrt();
    Ok(x.div(norm)?)
}
