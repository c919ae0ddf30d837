//! The two-stage network: LoDA and the pre-denoising block produce the
//! aligned input, the denoised RAW and its high-frequency component; a
//! U-shaped encoder/decoder maps the packed RAW to sRGB, fusing those
//! priors into its skip connections.

mod config;
mod mpf;
pub mod weights;

pub use config::{default_block_types, Fusion, ModelConfig};
pub use mpf::{LevelPriors, Mpf, PriorSet};

use hima_tensor::{Conv2dParams, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Block, Pdb};
use crate::cost::CostReport;
use crate::error::{CoreError, Result};
use crate::freq::hf_component;
use crate::loda::Loda;
use crate::params::{Bound, Builder, Conv, Init, ParamStore};

#[derive(Debug, Clone)]
pub enum Fuse {
    Mpf(Mpf),
    Conv(Conv),
}

/// 1×1 lifts of the pooled priors to one level's width.
#[derive(Debug, Clone)]
pub struct PriorLifts {
    pub aligned: Option<Conv>,
    pub rhat: Option<Conv>,
    pub hf: Option<Conv>,
}

/// Layer structure; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Net {
    pub loda: Option<Loda>,
    pub pdb: Option<Pdb>,
    pub shallow: Conv,
    /// Encoder levels; the last one is the bottleneck.
    pub enc: Vec<Vec<Block>>,
    pub down: Vec<Conv>,
    pub up: Vec<Conv>,
    pub lifts: Vec<PriorLifts>,
    pub fuse: Vec<Fuse>,
    pub dec: Vec<Vec<Block>>,
    pub head: Conv,
}

/// Forward results at the caller's resolution.
pub struct Output<'t, T: Real> {
    pub srgb: Var<'t, T>,
    /// Denoised RAW; `None` when stage one is disabled.
    pub rhat: Option<Var<'t, T>>,
    /// LoDA output, or the input when LoDA is disabled.
    pub aligned: Option<Var<'t, T>>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub net: Net,
}

impl<T: Real> Model<T> {
    /// Builds and initializes a model; identical seeds give identical bytes.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Net::new(
            &mut Builder {
                store: &mut params,
                rng: &mut rng,
            },
            config,
        );
        Ok(Self {
            config: config.clone(),
            params,
            net,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    pub fn forward<'t>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Output<'t, T>> {
        self.net.forward(&self.config, bound, x)
    }

    /// Inference on a `[B, C, H, W]` batch; returns `(r̂, srgb)`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let out = self.forward(&bound, tape.constant(x.clone()))?;
        Ok((out.rhat.map(|r| r.tensor()), out.srgb.tensor()))
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Analytic parameter and MAC counts for a packed `channels×h×w` input.
    pub fn cost(&self, h: usize, w: usize) -> CostReport {
        self.net.cost(&self.config, h, w)
    }
}

/// Analytic cost of `config` at packed input size `h×w` without
/// materializing weights.
pub fn profile(config: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    config.validate()?;
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Net::new(
        &mut Builder {
            store: &mut store,
            rng: &mut rng,
        },
        config,
    );
    Ok(net.cost(config, h, w))
}

fn padded(n: usize, m: usize) -> usize {
    n.next_multiple_of(m)
}

impl Net {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let cin = cfg.in_channels();
        let levels = cfg.levels;
        let w = &cfg.widths;
        let stage_one = cfg.stage_one();
        let loda = cfg
            .loda
            .then(|| Loda::new(bld, "loda", cin, &cfg.loda_config()));
        let pdb = stage_one.then(|| Pdb::new(bld, "pdb", cin, cfg.pdb_width, cfg.pdb_depth));
        let shallow = Conv::same(bld, "shallow", cin, w[0], 3, Init::Uniform);
        let blocks = |bld: &mut Builder<'_, T>, prefix: String, l: usize| -> Vec<Block> {
            (0..cfg.blocks_per_level)
                .map(|i| Block::new(bld, &format!("{prefix}.b{i}"), cfg.block_types[l], w[l], cfg.metadata))
                .collect()
        };
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..levels {
            let name = if l + 1 == levels { "mid".to_string() } else { format!("enc{l}") };
            enc.push(blocks(bld, name, l));
            if l + 1 < levels {
                down.push(Conv::new(
                    bld,
                    &format!("down{l}"),
                    w[l],
                    w[l + 1],
                    3,
                    Conv2dParams::same(3, 1).with_stride(2),
                    true,
                    Init::Uniform,
                ));
            }
        }
        let routed = cfg.priors_routed();
        let set = PriorSet {
            aligned: routed && cfg.prior_aligned,
            rhat: routed && cfg.prior_rhat,
            hf: routed && cfg.prior_hf,
        };
        let mut up = Vec::new();
        let mut lifts = Vec::new();
        let mut fuse = Vec::new();
        let mut dec = Vec::new();
        for l in (0..levels.saturating_sub(1)).rev() {
            up.push(Conv::same(bld, &format!("up{l}"), w[l + 1], 4 * w[l], 1, Init::Uniform));
            let lift = |bld: &mut Builder<'_, T>, on: bool, kind: &str| {
                on.then(|| Conv::same(bld, &format!("prior{l}.{kind}"), cin, w[l], 1, Init::Uniform))
            };
            lifts.push(PriorLifts {
                aligned: lift(bld, set.aligned, "aligned"),
                rhat: lift(bld, set.rhat, "rhat"),
                hf: lift(bld, set.hf, "hf"),
            });
            fuse.push(match cfg.fusion {
                crate::net::Fusion::Mpf => Fuse::Mpf(Mpf::new(bld, &format!("fuse{l}"), w[l], set, cfg.freq_config())),
                crate::net::Fusion::Conv => Fuse::Conv(Conv::same(bld, &format!("fuse{l}"), 2 * w[l], w[l], 1, Init::Uniform)),
            });
            dec.push(blocks(bld, format!("dec{l}"), l));
        }
        // decoder vectors are indexed by level
        up.reverse();
        lifts.reverse();
        fuse.reverse();
        dec.reverse();
        let r = cfg.upscale;
        let head = Conv::same(bld, "head", w[0], 3 * r * r, 3, Init::Uniform);
        Self {
            loda,
            pdb,
            shallow,
            enc,
            down,
            up,
            lifts,
            fuse,
            dec,
            head,
        }
    }

    pub fn forward<'t, T: Real>(&self, cfg: &ModelConfig, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Output<'t, T>> {
        let [_, c, h, w] = x.value().dims4("model input")?;
        if c != cfg.in_channels() {
            return Err(CoreError::Data(format!(
                "{} model expects {} packed channels, got {c}",
                cfg.cfa.name(),
                cfg.in_channels()
            )));
        }
        let m = cfg.size_multiple();
        let (hp, wp) = (padded(h, m), padded(w, m));
        let xp = if (hp, wp) == (h, w) {
            x
        } else {
            x.reflect_pad([0, hp - h, 0, wp - w])?
        };

        let mut aligned = None;
        let mut rhat = None;
        let mut hf = None;
        if let Some(pdb) = &self.pdb {
            let a = match &self.loda {
                Some(l) => l.forward(bound, xp)?,
                None => xp,
            };
            let r = pdb.forward(bound, a)?;
            if cfg.priors_routed() && cfg.prior_hf {
                hf = Some(hf_component(r, &cfg.freq_config())?);
            }
            aligned = Some(a);
            rhat = Some(r);
        }
        let main = match rhat {
            Some(r) if !cfg.priors_routed() => r,
            _ => xp,
        };

        let mut f = self.shallow.forward(bound, main)?;
        let mut skips = Vec::new();
        for (l, blocks) in self.enc.iter().enumerate() {
            for b in blocks {
                f = b.forward(bound, f)?;
            }
            if let Some(d) = self.down.get(l) {
                skips.push(f);
                f = d.forward(bound, f)?;
            }
        }
        for l in (0..self.dec.len()).rev() {
            let y = self.up[l].forward(bound, f)?.pixel_shuffle(2)?;
            f = match &self.fuse[l] {
                Fuse::Conv(conv) => conv.forward(bound, Var::concat(&[skips[l], y], 1)?)?.add(y)?,
                Fuse::Mpf(mpf) => {
                    let lifts = &self.lifts[l];
                    let prior = |conv: &Option<Conv>, src: Option<Var<'t, T>>| -> Result<Option<Var<'t, T>>> {
                        match (conv, src) {
                            (Some(conv), Some(s)) => {
                                let pooled = if l == 0 { s } else { s.avg_pool(1 << l)? };
                                Ok(Some(conv.forward(bound, pooled)?))
                            }
                            _ => Ok(None),
                        }
                    };
                    let priors = LevelPriors {
                        aligned: prior(&lifts.aligned, aligned)?,
                        rhat: prior(&lifts.rhat, rhat)?,
                        hf: prior(&lifts.hf, hf)?,
                    };
                    mpf.forward(bound, skips[l], y, priors)?
                }
            };
            for b in &self.dec[l] {
                f = b.forward(bound, f)?;
            }
        }
        let r = cfg.upscale;
        let mut srgb = self.head.forward(bound, f)?.pixel_shuffle(r)?;
        if (hp, wp) != (h, w) {
            srgb = srgb.crop(0, 0, h * r, w * r)?;
            rhat = rhat.map(|v| v.crop(0, 0, h, w)).transpose()?;
            aligned = aligned.map(|v| v.crop(0, 0, h, w)).transpose()?;
        }
        Ok(Output { srgb, rhat, aligned })
    }

    pub fn cost(&self, cfg: &ModelConfig, h: usize, w: usize) -> CostReport {
        let m = cfg.size_multiple();
        let (h, w) = (padded(h, m), padded(w, m));
        let mut rep = CostReport::new(&[cfg.in_channels(), h, w]);
        if let Some(l) = &self.loda {
            l.cost(&mut rep, h, w);
        }
        if let Some(p) = &self.pdb {
            p.cost(&mut rep, h, w);
        }
        self.shallow.cost(&mut rep, h, w);
        let (mut ch, mut cw) = (h, w);
        for (l, blocks) in self.enc.iter().enumerate() {
            for b in blocks {
                b.cost(&mut rep, ch, cw);
            }
            if let Some(d) = self.down.get(l) {
                (ch, cw) = d.cost(&mut rep, ch, cw);
            }
        }
        for l in (0..self.dec.len()).rev() {
            let (lh, lw) = (h >> l, w >> l);
            self.up[l].cost(&mut rep, ch, cw);
            (ch, cw) = (lh, lw);
            match &self.fuse[l] {
                Fuse::Conv(conv) => {
                    conv.cost(&mut rep, lh, lw);
                }
                Fuse::Mpf(mpf) => {
                    let lifts = &self.lifts[l];
                    for conv in [&lifts.aligned, &lifts.rhat, &lifts.hf].into_iter().flatten() {
                        conv.cost(&mut rep, lh, lw);
                    }
                    mpf.cost(&mut rep, lh, lw);
                }
            }
            for b in &self.dec[l] {
                b.cost(&mut rep, lh, lw);
            }
        }
        self.head.cost(&mut rep, h, w);
        rep
    }
}
