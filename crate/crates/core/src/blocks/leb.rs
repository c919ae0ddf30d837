use hima_tensor::{Conv2dParams, Real, Var};

use crate::cost::CostReport;
use crate::error::{CoreError, Result};
use crate::params::{Bound, Builder, Conv, Init};

/// Dilation rates of the three gated branches.
pub const DILATIONS: [usize; 3] = [1, 4, 9];

/// Local enhancement block: gated multi-dilation convolutions, a global
/// channel gate, and a depthwise 3×3 output convolution.
#[derive(Debug, Clone)]
pub struct Leb {
    pub diconvs: Vec<Conv>,
    pub gate: Conv,
    pub dwconv: Conv,
    pub channels: usize,
}

impl Leb {
    /// `out_init` initializes the depthwise output convolution; `Init::Zero`
    /// makes the block output zero.
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize, out_init: Init) -> Self {
        let diconvs = DILATIONS
            .iter()
            .map(|&d| {
                Conv::new(
                    bld,
                    &format!("{name}.diconv{d}"),
                    channels,
                    2 * channels,
                    3,
                    Conv2dParams::same(3, d),
                    true,
                    Init::Uniform,
                )
            })
            .collect();
        let gate = Conv::same(bld, &format!("{name}.gate"), channels, channels, 1, Init::Uniform);
        let dwconv = Conv::new(
            bld,
            &format!("{name}.dwconv"),
            channels,
            channels,
            3,
            Conv2dParams::same(3, 1).with_groups(channels),
            true,
            out_init,
        );
        Self {
            diconvs,
            gate,
            dwconv,
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels("LEB", self.channels, &x)?;
        let mut acc: Option<Var<'t, T>> = None;
        for conv in &self.diconvs {
            let parts = conv.forward(bound, x)?.chunk(2, 1)?;
            let prod = parts[0].mul(parts[1])?;
            acc = Some(match acc {
                Some(a) => a.add(prod)?,
                None => prod,
            });
        }
        let y = acc.expect("three branches");
        let pooled = y.mean_axes(&[2, 3])?;
        let y = self.gate.forward(bound, pooled)?.mul(y)?;
        self.dwconv.forward(bound, y)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        for conv in &self.diconvs {
            conv.cost(report, h, w);
        }
        self.gate.cost(report, 1, 1);
        self.dwconv.cost(report, h, w);
    }
}

pub(crate) fn check_channels<T: Real>(block: &str, expected: usize, x: &Var<'_, T>) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != expected {
        return Err(CoreError::Data(format!(
            "{block} expects [B, {expected}, H, W], got {shape:?}"
        )));
    }
    Ok(())
}
