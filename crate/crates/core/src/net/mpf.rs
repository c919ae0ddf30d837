use hima_tensor::{Real, Var};

use crate::cost::CostReport;
use crate::error::{CoreError, Result};
use crate::freq::{fe, ife, FreqConfig, FreqSplit};
use crate::params::{Bound, Builder, Conv, Init};

/// Which stage-one priors an MPF receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorSet {
    pub aligned: bool,
    pub rhat: bool,
    pub hf: bool,
}

/// Prior tensors at one decoder level, already lifted to its width.
#[derive(Clone, Copy, Default)]
pub struct LevelPriors<'t, T: Real> {
    pub aligned: Option<Var<'t, T>>,
    pub rhat: Option<Var<'t, T>>,
    pub hf: Option<Var<'t, T>>,
}

/// Multi-prior skip fusion.
///
/// `y' = y + conv(aligned)`; the real high-frequency parts of `fe(x)` and
/// `fe(y')` are concatenated and mixed by a 1×1 convolution, recombined
/// with the imaginary high band and the low band of `x`, and inverted. The
/// result, the denoised RAW prior and the high-frequency prior each pass
/// through a 3×3 convolution; their sum is projected by a zero-initialized
/// 1×1 convolution and added to `y`.
#[derive(Debug, Clone)]
pub struct Mpf {
    pub channels: usize,
    pub align: Option<Conv>,
    pub hf_mod: Conv,
    pub recon: Conv,
    pub rhat: Option<Conv>,
    pub hf: Option<Conv>,
    pub out: Conv,
    pub freq: FreqConfig,
}

impl Mpf {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize, priors: PriorSet, freq: FreqConfig) -> Self {
        let c = channels;
        Self {
            channels,
            align: priors
                .aligned
                .then(|| Conv::same(bld, &format!("{name}.align"), c, c, 1, Init::Zero)),
            hf_mod: Conv::same(bld, &format!("{name}.hf_mod"), 2 * c, c, 1, Init::Uniform),
            recon: Conv::same(bld, &format!("{name}.recon"), c, c, 3, Init::Uniform),
            rhat: priors
                .rhat
                .then(|| Conv::same(bld, &format!("{name}.rhat"), c, c, 3, Init::Uniform)),
            hf: priors
                .hf
                .then(|| Conv::same(bld, &format!("{name}.hf"), c, c, 3, Init::Uniform)),
            out: Conv::same(bld, &format!("{name}.out"), c, c, 1, Init::Zero),
            freq,
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        x: Var<'t, T>,
        y: Var<'t, T>,
        priors: LevelPriors<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = y.shape();
        let given = [priors.aligned, priors.rhat, priors.hf];
        let wanted = [self.align.is_some(), self.rhat.is_some(), self.hf.is_some()];
        for (p, want) in given.iter().zip(wanted) {
            if p.is_some() != want {
                return Err(CoreError::Data("MPF prior set does not match its configuration".into()));
            }
        }
        for v in std::iter::once(x).chain(given.into_iter().flatten()) {
            if v.shape() != shape {
                return Err(CoreError::Data(format!(
                    "MPF inputs differ in shape: {:?} vs {shape:?}",
                    v.shape()
                )));
            }
        }
        let mut y2 = y;
        if let (Some(conv), Some(a)) = (&self.align, priors.aligned) {
            y2 = y2.add(conv.forward(bound, a)?)?;
        }
        let fx = fe(x, &self.freq)?;
        let fy = fe(y2, &self.freq)?;
        let hf = self.hf_mod.forward(bound, Var::concat(&[fx.hf_re, fy.hf_re], 1)?)?;
        let recon = ife(FreqSplit { hf_re: hf, ..fx })?;
        let mut acc = self.recon.forward(bound, recon)?;
        if let (Some(conv), Some(r)) = (&self.rhat, priors.rhat) {
            acc = acc.add(conv.forward(bound, r)?)?;
        }
        if let (Some(conv), Some(h)) = (&self.hf, priors.hf) {
            acc = acc.add(conv.forward(bound, h)?)?;
        }
        Ok(self.out.forward(bound, acc)?.add(y)?)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        if let Some(c) = &self.align {
            c.cost(report, h, w);
        }
        self.hf_mod.cost(report, h, w);
        self.recon.cost(report, h, w);
        for c in [&self.rhat, &self.hf].into_iter().flatten() {
            c.cost(report, h, w);
        }
        self.out.cost(report, h, w);
    }
}
