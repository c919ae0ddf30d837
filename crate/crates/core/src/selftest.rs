//! Fast invariant suite run by `hima selftest`.

use std::path::PathBuf;

use hima_tensor::check::check_gradients;
use hima_tensor::{macs, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{Leb, Ss2d};
use crate::error::Result;
use crate::freq::{fe, ife, FreqConfig};
use crate::harness::{evaluate, ladder, psnr, ssim, train, TrainConfig, TrainSample};
use crate::loda::{local_mean_std, oracle_align, OracleMode};
use crate::net::{weights, Model, ModelConfig};
use crate::params::{Bound, Builder, Init, ParamStore};
use crate::raw::dataset::SplitSpec;
use crate::raw::pnm::{decode_pgm16, decode_ppm8, encode_pgm16, encode_ppm8};
use crate::raw::synth::to_rgb8;
use crate::raw::{pack, unpack, Cfa, SynthConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

struct Suite {
    name: &'static str,
    passed: usize,
    total: usize,
    failures: Vec<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: 0,
            total: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, label: impl Into<String>, r: Result<bool>) {
        self.total += 1;
        match r {
            Ok(true) => self.passed += 1,
            Ok(false) => self.failures.push(label.into()),
            Err(e) => self.failures.push(format!("{}: {e}", label.into())),
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            passed: self.passed,
            total: self.total,
            failures: self.failures,
        }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Two-level network small enough for the quick checks.
pub fn micro_config(cfa: Cfa) -> ModelConfig {
    ModelConfig {
        levels: 2,
        widths: vec![4, 8],
        blocks_per_level: 1,
        block_types: crate::net::default_block_types(2),
        loda_patch_sizes: vec![2, 4],
        pdb_width: 4,
        pdb_depth: 1,
        ..ModelConfig::desk(cfa)
    }
}

fn micro_data(count: usize, seed: u64) -> Result<Vec<TrainSample<f64>>> {
    let split = SplitSpec {
        count,
        height: 16,
        width: 16,
        cfa: Cfa::Bayer,
        ratios: vec![100.0, 250.0],
        seed,
    };
    split
        .generate(&SynthConfig::default())?
        .iter()
        .map(TrainSample::from_pair)
        .collect()
}

fn freq_suite() -> SuiteResult {
    let mut s = Suite::new("freq");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = FreqConfig::default();
    for &(h, w) in &[(7, 8), (8, 8), (16, 9), (33, 20)] {
        let x = random(&mut rng, &[2, h, w]);
        s.check(format!("roundtrip f64 {h}x{w}"), (|| {
            let tape = Tape::new();
            let y = ife(fe(tape.constant(x.clone()), &cfg)?)?.tensor();
            Ok(y.max_abs_diff(&x) <= 1e-10)
        })());
        let x32 = x.cast::<f32>();
        s.check(format!("roundtrip f32 {h}x{w}"), (|| {
            let tape = Tape::new();
            let y = ife(fe(tape.constant(x32.clone()), &cfg)?)?.tensor();
            Ok(y.cast::<f64>().max_abs_diff(&x32.cast()) <= 1e-4)
        })());
    }
    s.finish()
}

fn loda_suite() -> SuiteResult {
    let mut s = Suite::new("loda");
    let split = SplitSpec {
        count: 4,
        height: 32,
        width: 32,
        cfa: Cfa::Bayer,
        ratios: vec![100.0, 250.0],
        seed: 3,
    };
    let pairs = match split.generate(&SynthConfig::default()) {
        Ok(p) => p,
        Err(e) => {
            s.check("generate", Err(e));
            return s.finish();
        }
    };
    for (i, p) in pairs.iter().enumerate() {
        s.check(format!("oracle statistics {i}"), (|| {
            let ps = 4;
            let a = oracle_align(&p.noisy.data, &p.gt_raw.data, OracleMode::LocalMeanStd, ps, p.noisy.ratio, 0.0)?;
            let sa = local_mean_std(&a, ps)?;
            let sg = local_mean_std(&p.gt_raw.data, ps)?;
            let sx = local_mean_std(&p.noisy.data, ps)?;
            Ok((0..a.numel()).all(|j| {
                if sg.sigma.data()[j] <= 1e-6 || sx.sigma.data()[j] == 0.0 {
                    return true;
                }
                (sa.mu.data()[j] - sg.mu.data()[j]).abs() <= 1e-6
                    && (sa.sigma.data()[j] - sg.sigma.data()[j]).abs() <= 1e-5
            }))
        })());
        s.check(format!("ladder order {i}"), (|| {
            let l = ladder(p, 4, 0.0)?;
            Ok(l[0] > l[1] && l[1] > l[2] && l[2] > l[3])
        })());
    }
    s.finish()
}

fn gradient_suite() -> SuiteResult {
    let mut s = Suite::new("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let (leb, ss2d) = {
        let mut bld = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        (Leb::new(&mut bld, "leb", 2, Init::Uniform), Ss2d::new(&mut bld, "ss2d", 2))
    };
    store.randomize(&mut rng, 0.4);
    let x = random(&mut rng, &[1, 2, 4, 4]);
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    for which in ["leb", "ss2d"] {
        let r = check_gradients(
            &inputs,
            |_, vars| {
                let bound = Bound::from_vars(vars[1..].to_vec());
                let y = match which {
                    "leb" => leb.forward(&bound, vars[0]),
                    _ => ss2d.forward(&bound, vars[0]),
                };
                y.map_err(|e| hima_tensor::TensorError::Invalid {
                    op: "selftest",
                    msg: e.to_string(),
                })
            },
            1e-5,
            12,
        );
        s.check(format!("{which} finite differences"), r.map(|r| r.overall <= 1e-4).map_err(Into::into));
    }
    s.finish()
}

fn ss2d_suite() -> SuiteResult {
    let mut s = Suite::new("ss2d");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let m = Ss2d::new(
        &mut Builder {
            store: &mut store,
            rng: &mut rng,
        },
        "s",
        3,
    );
    store.randomize(&mut rng, 0.5);
    let (h, w) = (4, 5);
    let x = random(&mut rng, &[1, 3, h, w]);
    for (i, dir) in crate::blocks::Direction::ALL.into_iter().enumerate() {
        s.check(format!("causality {}", dir.tag()), (|| {
            let run = |x: &Tensor<f64>| -> Result<Tensor<f64>> {
                let tape = Tape::new();
                let bound = store.bind(&tape, false);
                Ok(m.branch(&bound, tape.constant(x.clone()), i)?.tensor())
            };
            let t = h * w / 2;
            let (py, px) = dir.position(t, h, w);
            let mut x2 = x.clone();
            for c in 0..3 {
                x2.data_mut()[(c * h + py) * w + px] += 0.5;
            }
            let (a, b) = (run(&x)?, run(&x2)?);
            let mut ok = true;
            for u in 0..h * w {
                let (y, xx) = dir.position(u, h, w);
                let changed = (0..3).any(|c| a.data()[(c * h + y) * w + xx] != b.data()[(c * h + y) * w + xx]);
                ok &= if u < t { !changed } else if u == t { changed } else { true };
            }
            Ok(ok)
        })());
    }
    s.finish()
}

fn cost_suite() -> SuiteResult {
    let mut s = Suite::new("cost");
    let base = micro_config(Cfa::Bayer);
    let variants = [
        ("micro", base.clone()),
        ("micro_all_lsb", base.all_lsb()),
        (
            "micro_conv_fusion",
            ModelConfig {
                fusion: crate::net::Fusion::Conv,
                loda: false,
                ..base.clone()
            },
        ),
    ];
    for (name, cfg) in variants {
        s.check(format!("{name} analytic == instrumented"), (|| {
            let model = Model::<f64>::build(&cfg, 1)?;
            let x = Tensor::zeros(&[1, 4, 8, 8]);
            let (r, counted) = macs::measure(|| model.infer(&x));
            r?;
            let report = model.cost(8, 8);
            Ok(report.total_macs() == counted && report.total_params() == model.param_count() as u64)
        })());
    }
    s.finish()
}

fn temp_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!("hima-selftest-{tag}-{}-{nanos}", std::process::id()))
}

fn serialization_suite() -> SuiteResult {
    let mut s = Suite::new("serialization");
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for cfa in [Cfa::Bayer, Cfa::Xtrans] {
        let n = cfa.period() * 2;
        let m = random(&mut rng, &[n, n]);
        s.check(format!("{} pack/unpack", cfa.name()), (|| Ok(unpack(cfa, &pack(cfa, &m)?)? == m))());
    }
    let pairs = SplitSpec {
        count: 1,
        height: 12,
        width: 12,
        cfa: Cfa::Bayer,
        ratios: vec![100.0],
        seed: 2,
    }
    .generate(&SynthConfig::default());
    s.check("pgm/ppm encode/decode", (|| {
        let p = &pairs.as_ref().map_err(|e| crate::CoreError::Data(e.to_string()))?[0];
        let g = p.noisy.to_mosaic()?;
        let c = to_rgb8(&p.gt_srgb)?;
        Ok(decode_pgm16(&encode_pgm16(&g))? == g && decode_ppm8(&encode_ppm8(&c))? == c)
    })());
    s.check("weights save/load", (|| {
        let dir = temp_dir("weights");
        let model = Model::<f32>::build(&micro_config(Cfa::Bayer), 4)?;
        let x = Tensor::<f32>::new(&[1, 4, 8, 8], (0..256).map(|i| (i % 17) as f32 / 17.0).collect())?;
        weights::save(&model, &dir)?;
        let back = weights::load::<f32>(&dir);
        let _ = std::fs::remove_dir_all(&dir);
        let back = back?;
        Ok(model.infer(&x)?.1 == back.infer(&x)?.1)
    })());
    s.finish()
}

fn determinism_suite() -> SuiteResult {
    let mut s = Suite::new("determinism");
    s.check("same-seed loss curves", (|| {
        let data = micro_data(2, 21)?;
        let cfg = TrainConfig {
            steps: 3,
            seed: 8,
            ..TrainConfig::default()
        };
        let run = || -> Result<Vec<u64>> {
            let mut model = Model::<f64>::build(&micro_config(Cfa::Bayer), 8)?;
            let st = train(&mut model, &data, &cfg, None, |_| {})?;
            Ok(st.history.iter().map(|r| r.total.to_bits()).collect())
        };
        Ok(run()? == run()?)
    })());
    s.check("evaluation repeatable", (|| {
        let data = micro_data(1, 22)?;
        let model = Model::<f64>::build(&micro_config(Cfa::Bayer), 9)?;
        Ok(evaluate(&model, &data)? == evaluate(&model, &data)?)
    })());
    s.finish()
}

fn metrics_suite() -> SuiteResult {
    let mut s = Suite::new("metrics");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = random(&mut rng, &[3, 16, 16]).map(|v| 0.5 + 0.4 * v);
    s.check("psnr of identical images is capped", psnr(&a, &a, 1.0).map(|p| p == crate::harness::metrics::PSNR_CAP));
    s.check("ssim of identical images is 1", ssim(&a, &a).map(|q| (q - 1.0).abs() < 1e-12));
    let b = a.map(|v| v + 0.1);
    s.check("psnr of constant offset", psnr(&a, &b, 1.0).map(|p| (p - 20.0).abs() < 1e-9));
    s.finish()
}

/// Runs every suite in order.
pub fn run_selftest() -> Vec<SuiteResult> {
    vec![
        freq_suite(),
        loda_suite(),
        gradient_suite(),
        ss2d_suite(),
        cost_suite(),
        serialization_suite(),
        determinism_suite(),
        metrics_suite(),
    ]
}
