//! Local distribution adjustment: patchwise mean/std statistics, the
//! alignment transform, its known-target oracle forms, and the learned
//! multi-patch module.

use std::str::FromStr;

use hima_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::cost::CostReport;
use crate::error::{CoreError, Result};
use crate::params::{Bound, Builder, Conv, Init};

/// Patchwise statistics broadcast back to the pixel grid.
#[derive(Debug, Clone)]
pub struct LocalStats {
    pub mu: Tensor<f64>,
    pub sigma: Tensor<f64>,
    pub patch_size: usize,
}

fn plane_dims(x: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(CoreError::Data(format!("expected at least 2 axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((x.numel() / (h * w).max(1), h, w))
}

/// Population mean and standard deviation over `ps×ps` patches of every
/// plane. Extents must be multiples of `ps`.
pub fn local_mean_std(x: &Tensor<f64>, ps: usize) -> Result<LocalStats> {
    let (planes, h, w) = plane_dims(x)?;
    if ps == 0 {
        return Err(CoreError::Data("patch size must be positive".into()));
    }
    if h % ps != 0 || w % ps != 0 {
        return Err(CoreError::Data(format!(
            "extents {h}x{w} are not multiples of patch size {ps}"
        )));
    }
    let mut mu = vec![0.0; x.numel()];
    let mut sigma = vec![0.0; x.numel()];
    let n = (ps * ps) as f64;
    let d = x.data();
    for p in 0..planes {
        for gy in 0..h / ps {
            for gx in 0..w / ps {
                let idx = |i: usize| p * h * w + (gy * ps + i / ps) * w + gx * ps + i % ps;
                let m = (0..ps * ps).map(|i| d[idx(i)]).sum::<f64>() / n;
                let v = (0..ps * ps).map(|i| (d[idx(i)] - m).powi(2)).sum::<f64>() / n;
                for i in 0..ps * ps {
                    mu[idx(i)] = m;
                    sigma[idx(i)] = v.sqrt();
                }
            }
        }
    }
    Ok(LocalStats {
        mu: Tensor::new(x.shape(), mu)?,
        sigma: Tensor::new(x.shape(), sigma)?,
        patch_size: ps,
    })
}

/// `X' = (X − μ)/(σ + ε)·σ' + μ'`. Where `σ = 0` the centred value is 0 and
/// the output is `μ'`.
pub fn align(x: &Tensor<f64>, stats: &LocalStats, mu_t: &Tensor<f64>, sigma_t: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>> {
    for t in [&stats.mu, &stats.sigma, mu_t, sigma_t] {
        if t.shape() != x.shape() {
            return Err(CoreError::Data(format!(
                "alignment operands differ in shape: {:?} vs {:?}",
                t.shape(),
                x.shape()
            )));
        }
    }
    let out = (0..x.numel())
        .map(|i| {
            let (m, s) = (stats.mu.data()[i], stats.sigma.data()[i]);
            let centred = x.data()[i] - m;
            let z = if s > 0.0 { centred / (s + eps) } else { 0.0 };
            z * sigma_t.data()[i] + mu_t.data()[i]
        })
        .collect();
    Ok(Tensor::new(x.shape(), out)?)
}

/// Known-target preprocessing variants, from fixed-ratio scaling up to
/// local mean and std alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    GlobalFixed,
    GlobalMean,
    LocalMean,
    LocalMeanStd,
}

impl OracleMode {
    pub const ALL: [OracleMode; 4] = [
        OracleMode::GlobalFixed,
        OracleMode::GlobalMean,
        OracleMode::LocalMean,
        OracleMode::LocalMeanStd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleMode::GlobalFixed => "global_fixed",
            OracleMode::GlobalMean => "global_mean",
            OracleMode::LocalMean => "local_mean",
            OracleMode::LocalMeanStd => "local_mean_std",
        }
    }
}

impl FromStr for OracleMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::Data(format!("unknown alignment mode `{s}`")))
    }
}

/// Aligns the unamplified noisy `x` towards `gt` using statistics of `gt`.
///
/// The three scaling modes clip to `[0, 1]`: fixed `ratio`, the global
/// mean ratio, and the per-patch mean ratio. `LocalMeanStd` applies the
/// unclipped affine alignment with the patch statistics of `gt` as targets.
pub fn oracle_align(x: &Tensor<f64>, gt: &Tensor<f64>, mode: OracleMode, ps: usize, ratio: f64, eps: f64) -> Result<Tensor<f64>> {
    if x.shape() != gt.shape() {
        return Err(CoreError::Data(format!(
            "input {:?} and target {:?} differ in shape",
            x.shape(),
            gt.shape()
        )));
    }
    let clip = |v: f64| v.clamp(0.0, 1.0);
    Ok(match mode {
        OracleMode::GlobalFixed => x.map(|v| clip(v * ratio)),
        OracleMode::GlobalMean => {
            let mx = x.mean();
            let s = if mx > 0.0 { gt.mean() / mx } else { ratio };
            x.map(|v| clip(v * s))
        }
        OracleMode::LocalMean => {
            let sx = local_mean_std(x, ps)?;
            let sg = local_mean_std(gt, ps)?;
            let out = (0..x.numel())
                .map(|i| {
                    let (mx, mg) = (sx.mu.data()[i], sg.mu.data()[i]);
                    clip(if mx > 0.0 { x.data()[i] * mg / (mx + eps) } else { mg })
                })
                .collect();
            Tensor::new(x.shape(), out)?
        }
        OracleMode::LocalMeanStd => {
            let sx = local_mean_std(x, ps)?;
            let sg = local_mean_std(gt, ps)?;
            align(x, &sx, &sg.mu, &sg.sigma, eps)?
        }
    })
}

/// Hyper-parameters of the learned module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LodaConfig {
    pub patch_sizes: Vec<usize>,
    pub epsilon: f64,
}

impl Default for LodaConfig {
    fn default() -> Self {
        Self {
            patch_sizes: vec![8, 16, 32],
            epsilon: 1e-5,
        }
    }
}

impl LodaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_sizes.is_empty() || self.patch_sizes.contains(&0) {
            return Err(CoreError::config(
                "loda_patch_sizes",
                "needs at least one positive patch size",
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(CoreError::config("loda_epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Head {
    ps: usize,
    mu: Conv,
    sigma: Conv,
}

/// Learned alignment: per patch size, 3×3 convolutions on the patch-level
/// μ and σ grids predict `Δμ` and `Δσ`, giving targets `μ + Δμ` and
/// `σ·exp(Δσ)`; the aligned branches are concatenated and fused by a 1×1
/// convolution. The heads start at zero and the fusion starts as the
/// branch average, so the module begins close to the identity.
#[derive(Debug, Clone)]
pub struct Loda {
    heads: Vec<Head>,
    fuse: Conv,
    channels: usize,
    eps: f64,
}

impl Loda {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize, cfg: &LodaConfig) -> Self {
        let heads = cfg
            .patch_sizes
            .iter()
            .map(|&ps| Head {
                ps,
                mu: Conv::same(bld, &format!("{name}.p{ps}.mu"), channels, channels, 3, Init::Zero),
                sigma: Conv::same(bld, &format!("{name}.p{ps}.sigma"), channels, channels, 3, Init::Zero),
            })
            .collect::<Vec<_>>();
        let p = heads.len();
        let fuse_name = format!("{name}.fuse");
        let w = bld.from_fn(&format!("{fuse_name}.w"), &[channels, p * channels, 1, 1], |_, i| {
            let (o, k) = (i / (p * channels), i % (p * channels));
            if k % channels == o {
                1.0 / p as f64
            } else {
                0.0
            }
        });
        let b = bld.tensor(&format!("{fuse_name}.b"), &[channels], Init::Zero, 1);
        let fuse = Conv {
            name: fuse_name,
            w,
            b: Some(b),
            cin: p * channels,
            cout: channels,
            k: 1,
            p: hima_tensor::Conv2dParams::default(),
        };
        Self {
            heads,
            fuse,
            channels,
            eps: cfg.epsilon,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let [_, c, h, w] = x.value().dims4("loda")?;
        if c != self.channels {
            return Err(CoreError::Data(format!(
                "LoDA expects {} channels, got {c}",
                self.channels
            )));
        }
        let mut branches = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let ps = head.ps;
            let (ph, pw) = ((ps - h % ps) % ps, (ps - w % ps) % ps);
            let xp = x.reflect_pad([0, ph, 0, pw])?;
            let mu = xp.avg_pool(ps)?;
            let centred = xp.sub(mu.upsample_nearest(ps)?)?;
            let sigma = centred.square().avg_pool(ps)?.sqrt();
            let mu_t = mu.add(head.mu.forward(bound, mu)?)?;
            let sigma_t = sigma.mul(head.sigma.forward(bound, sigma)?.exp())?;
            let denom = sigma.add_scalar(T::of(self.eps)).upsample_nearest(ps)?;
            let aligned = centred
                .div(denom)?
                .mul(sigma_t.upsample_nearest(ps)?)?
                .add(mu_t.upsample_nearest(ps)?)?;
            branches.push(aligned.crop(0, 0, h, w)?);
        }
        let cat = if branches.len() == 1 {
            branches[0]
        } else {
            Var::concat(&branches, 1)?
        };
        self.fuse.forward(bound, cat)
    }

    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) {
        for head in &self.heads {
            let (gh, gw) = (h.div_ceil(head.ps), w.div_ceil(head.ps));
            head.mu.cost(report, gh, gw);
            head.sigma.cost(report, gh, gw);
        }
        self.fuse.cost(report, h, w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_patch_stats() {
        let x = Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let s = local_mean_std(&x, 2).unwrap();
        assert!(s.mu.data().iter().all(|&v| v == 1.0));
        assert!(s.sigma.data().iter().all(|&v| v == 1.0));
        let c = local_mean_std(&Tensor::full(&[1, 4, 4], 0.3), 2).unwrap();
        assert!(c.sigma.data().iter().all(|&v| v == 0.0));
        assert!(local_mean_std(&x, 0).is_err());
        assert!(local_mean_std(&x, 3).is_err());
    }

    #[test]
    fn identity_and_zero_variance_alignment() {
        let x = Tensor::new(&[1, 2, 2], vec![0.1, 0.4, 0.3, 0.9]).unwrap();
        let s = local_mean_std(&x, 2).unwrap();
        let same = align(&x, &s, &s.mu, &s.sigma, 0.0).unwrap();
        assert!(same.max_abs_diff(&x) < 1e-15);

        let flat = Tensor::full(&[1, 2, 2], 0.5);
        let s = local_mean_std(&flat, 2).unwrap();
        let target = Tensor::full(&[1, 2, 2], 0.8);
        let out = align(&flat, &s, &target, &Tensor::full(&[1, 2, 2], 0.2), 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn mode_names_parse() {
        for m in OracleMode::ALL {
            assert_eq!(m.name().parse::<OracleMode>().unwrap(), m);
        }
        assert!("local".parse::<OracleMode>().is_err());
    }

    #[test]
    fn global_fixed_clips() {
        let x = Tensor::new(&[2], vec![0.001, 0.02]).unwrap();
        let out = oracle_align(&x, &x, OracleMode::GlobalFixed, 1, 100.0, 0.0).unwrap();
        assert_eq!(out.data(), &[0.1, 1.0]);
    }
}
