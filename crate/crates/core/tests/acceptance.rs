//! Acceptance run: one PASS/FAIL line per criterion. Numeric arguments
//! restrict the run to those criteria, e.g. `cargo test --test acceptance -- 3 5`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use hima_core::blocks::{Block, BlockType, Direction, Leb, Mesa, Pdb, Ss2d};
use hima_core::cost::CostReport;
use hima_core::freq::{fe, ife, FreqConfig};
use hima_core::harness::ablation::{median, HIMA_VARIANTS, MODULE_VARIANTS, PRIOR_VARIANTS};
use hima_core::harness::{
    dataset_loss, evaluate, ladder, run_ablation, train, AblationSpec, TrainConfig, TrainSample,
};
use hima_core::loda::{local_mean_std, oracle_align, Loda, LodaConfig, OracleMode};
use hima_core::net::{profile, weights, Fusion, LevelPriors, Model, ModelConfig, Mpf, PriorSet};
use hima_core::params::{Init, ParamStore};
use hima_core::raw::dataset::{load_split, write_split, SplitSpec};
use hima_core::raw::pnm::{decode_pgm16, decode_ppm8, encode_pgm16, encode_ppm8};
use hima_core::raw::synth::to_rgb8;
use hima_core::raw::{pack, unpack, Cfa, SamplePair, SynthConfig};
use hima_core::selftest::micro_config;
use hima_tensor::{macs, Tape, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn pairs(count: usize, size: usize, ratios: &[f64], seed: u64) -> Vec<SamplePair> {
    SplitSpec {
        count,
        height: size,
        width: size,
        cfa: Cfa::Bayer,
        ratios: ratios.to_vec(),
        seed,
    }
    .generate(&SynthConfig::default())
    .expect("synthetic pairs")
}

fn samples(p: &[SamplePair]) -> Vec<TrainSample<f32>> {
    p.iter().map(|p| TrainSample::from_pair(p).unwrap()).collect()
}

fn fe_ife_identity() -> Outcome {
    let sizes = [7, 8, 64, 127, 256];
    let cfg = FreqConfig::default();
    let t = Instant::now();
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let (h, w) = (sizes[i % 5], sizes[(i / 5) % 5]);
        let x = uniform(&[1, h, w], -1.0, 1.0, 1000 + i as u64);
        let tape = Tape::new();
        let y = ife(fe(tape.constant(x.clone()), &cfg).unwrap()).unwrap().tensor();
        worst64 = worst64.max(y.max_abs_diff(&x));
        let x32 = x.cast::<f32>();
        let tape = Tape::new();
        let y32 = ife(fe(tape.constant(x32.clone()), &cfg).unwrap()).unwrap().tensor();
        worst32 = worst32.max(y32.cast::<f64>().max_abs_diff(&x32.cast()));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst64 <= 1e-10 && worst32 <= 1e-4 && secs < 10.0,
        format!("max error f64 {worst64:.2e}, f32 {worst32:.2e}, {secs:.2}s"),
    )
}

fn loda_oracle() -> Outcome {
    let corpus = pairs(50, 64, &[100.0, 250.0, 300.0], 41);
    let (mut checked, mut mu_err, mut sd_err) = (0usize, 0.0f64, 0.0f64);
    for p in &corpus {
        for ps in [4, 8] {
            let a = oracle_align(&p.noisy.data, &p.gt_raw.data, OracleMode::LocalMeanStd, ps, p.noisy.ratio, 0.0).unwrap();
            let (sa, sg) = (local_mean_std(&a, ps).unwrap(), local_mean_std(&p.gt_raw.data, ps).unwrap());
            for i in 0..a.numel() {
                if sg.sigma.data()[i] > 1e-6 {
                    checked += 1;
                    mu_err = mu_err.max((sa.mu.data()[i] - sg.mu.data()[i]).abs());
                    sd_err = sd_err.max((sa.sigma.data()[i] - sg.sigma.data()[i]).abs());
                }
            }
        }
    }
    let ordered = corpus
        .iter()
        .filter(|p| {
            let l = ladder(p, 4, 0.0).unwrap();
            l[0] > l[1] && l[1] > l[2] && l[2] > l[3]
        })
        .count();
    ensure(
        mu_err <= 1e-6 && sd_err <= 1e-5 && ordered * 10 >= corpus.len() * 9,
        format!(
            "mean error {mu_err:.1e}, std error {sd_err:.1e} over {checked} pixels; ladder ordered on {ordered}/{}",
            corpus.len()
        ),
    )
}

/// Adds small noise to every parameter so zero-initialised branches carry gradient.
fn jitter(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut errors: Vec<(&str, f64)> = Vec::new();

    let (m, mut s) = build(1, |b| Leb::new(b, "leb", 3, Init::Zero));
    s.randomize(&mut rng(2), 0.4);
    errors.push(("LEB", gradcheck(&s, &uniform(&[1, 3, 6, 5], -1.0, 1.0, 3), None, 24, |bd, v| m.forward(bd, v)).overall));

    let (m, mut s) = build(4, |b| Mesa::new(b, "m", 4, true));
    s.randomize(&mut rng(5), 0.4);
    errors.push(("MeSA", gradcheck(&s, &uniform(&[1, 4, 5, 4], -1.0, 1.0, 6), None, 24, |bd, v| m.forward(bd, v)).overall));

    let (m, mut s) = build(7, |b| Ss2d::new(b, "s", 4));
    s.randomize(&mut rng(8), 0.4);
    errors.push(("SS2D", gradcheck(&s, &uniform(&[1, 4, 3, 4], -1.0, 1.0, 9), None, 24, |bd, v| m.forward(bd, v)).overall));

    for (name, kind) in [("LSB", BlockType::Lsb), ("SSB", BlockType::Ssb)] {
        let (m, mut s) = build(10, |b| Block::new(b, "blk", kind, 4, true));
        s.randomize(&mut rng(11), 0.3);
        errors.push((name, gradcheck(&s, &uniform(&[1, 4, 4, 5], -1.0, 1.0, 12), None, 16, |bd, v| m.forward(bd, v)).overall));
    }

    let (m, mut s) = build(13, |b| Pdb::new(b, "pdb", 4, 6, 2));
    s.randomize(&mut rng(14), 0.3);
    errors.push(("PDB", gradcheck(&s, &uniform(&[1, 4, 5, 6], 0.0, 1.0, 15), None, 16, |bd, v| m.forward(bd, v)).overall));

    let set = PriorSet {
        aligned: true,
        rhat: true,
        hf: true,
    };
    let freq = FreqConfig {
        threshold: 0.25,
        min_low_halfwidth: 0,
    };
    let (m, mut s) = build(19, |b| Mpf::new(b, "mpf", 3, set, freq));
    s.randomize(&mut rng(20), 0.4);
    let r = gradcheck(&s, &uniform(&[5, 3, 8, 8], -1.0, 1.0, 21), None, 24, |bd, v| {
        let p = v.chunk(5, 0)?;
        m.forward(
            bd,
            p[0],
            p[1],
            LevelPriors {
                aligned: Some(p[2]),
                rhat: Some(p[3]),
                hf: Some(p[4]),
            },
        )
    });
    errors.push(("MPF", r.overall));

    let cfg = LodaConfig {
        patch_sizes: vec![2, 4],
        epsilon: 1e-5,
    };
    let (m, mut s) = build(16, |b| Loda::new(b, "loda", 4, &cfg));
    s.randomize(&mut rng(17), 0.3);
    errors.push(("LoDA", gradcheck(&s, &uniform(&[1, 4, 8, 6], 0.05, 1.0, 18), None, 24, |bd, v| m.forward(bd, v)).overall));

    let blocks_ok = errors.iter().all(|&(_, e)| e <= 1e-4);

    let mut model = Model::<f64>::build(&ModelConfig::default(), 3).unwrap();
    jitter(&mut model.params, 4, 0.05);
    let x = uniform(&[1, 4, 16, 16], 0.05, 1.0, 5);
    let full = gradcheck(&model.params, &x, None, 2, |bd, v| {
        let out = model.forward(bd, v)?;
        Ok(out.srgb)
    });
    let secs = t.elapsed().as_secs_f64();
    let list = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(
        blocks_ok && full.overall <= 1e-3 && secs < 300.0,
        format!("{list}; full model {:.1e} over {} coordinates; {secs:.1}s", full.overall, full.coords),
    )
}

fn ss2d_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(40);
    for i in 0..20 {
        let (c, h, w) = if i == 0 {
            (8, 8, 8)
        } else {
            (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8))
        };
        let (ss, mut store) = build(41 + i, |b| Ss2d::new(b, "s", c));
        store.randomize(&mut rng(60 + i), 0.5);
        let x = uniform(&[1, c, h, w], -1.0, 1.0, 80 + i);
        let got = run(&store, &x, |bd, v| ss.forward(bd, v));
        worst = worst.max(got.max_abs_diff(&ss2d_ref(&ss, &store, &x)));
    }

    let (ss, mut store) = build(99, |b| Ss2d::new(b, "s", 3));
    store.randomize(&mut rng(100), 0.5);
    let (h, w) = (5, 6);
    let x = uniform(&[1, 3, h, w], -1.0, 1.0, 101);
    let mut causal = true;
    for (i, dir) in Direction::ALL.into_iter().enumerate() {
        let branch = |x: &Tensor<f64>| run(&store, x, |bd, v| ss.branch(bd, v, i));
        let base = branch(&x);
        for t in [0, h * w / 2, h * w - 1] {
            let (py, px) = dir.position(t, h, w);
            let mut xp = x.clone();
            for c in 0..3 {
                xp.data_mut()[(c * h + py) * w + px] += 0.5;
            }
            let pert = branch(&xp);
            for u in 0..h * w {
                let (y, xx) = dir.position(u, h, w);
                let changed = (0..3).any(|c| {
                    let k = (c * h + y) * w + xx;
                    base.data()[k] != pert.data()[k]
                });
                if (u < t && changed) || (u == t && !changed) {
                    causal = false;
                }
            }
        }
    }
    ensure(
        worst <= 1e-6 && causal,
        format!("max deviation {worst:.1e} over 20 instances; causality {}", if causal { "holds" } else { "violated" }),
    )
}

fn cost_model() -> Outcome {
    let base = micro_config(Cfa::Bayer);
    let micro = [
        base.clone(),
        base.all_lsb(),
        ModelConfig {
            fusion: Fusion::Conv,
            loda: false,
            ..base.clone()
        },
    ];
    let mut exact = 0;
    for cfg in &micro {
        let model = Model::<f64>::build(cfg, 1).unwrap();
        let x = Tensor::zeros(&[1, 4, 8, 8]);
        let (r, counted) = macs::measure(|| model.infer(&x));
        r.unwrap();
        let rep = model.cost(8, 8);
        if rep.total_macs() == counted && rep.total_params() == model.param_count() as u64 {
            exact += 1;
        }
    }

    let desk = ModelConfig::default();
    let scaled = ModelConfig {
        widths: desk.widths.iter().map(|w| 2 * w).collect(),
        pdb_width: 2 * desk.pdb_width,
        ..desk.clone()
    };
    let mut direction = Vec::new();
    let mut direction_ok = true;
    for (name, cfg, hw) in [("desk", &desk, 256), ("scaled", &scaled, 512)] {
        let h = profile(cfg, hw, hw).unwrap();
        let l = profile(&cfg.all_lsb(), hw, hw).unwrap();
        direction_ok &= l.total_params() > h.total_params() && l.total_macs() > h.total_macs();
        direction.push(format!(
            "{name} packed {hw}x{hw}: all-LSB {:.2}M/{:.1}G vs HiMA {:.2}M/{:.1}G",
            l.total_params() as f64 / 1e6,
            l.total_macs() as f64 / 1e9,
            h.total_params() as f64 / 1e6,
            h.total_macs() as f64 / 1e9
        ));
    }

    let attn = |c: usize, n: usize| {
        let (m, _) = build(0, |b| Mesa::new(b, "m", c, true));
        let mut r = CostReport::new(&[]);
        m.cost(&mut r, n, n);
        r.subtotal("m.attn").1
    };
    let ss2d = |c: usize, h: usize, w: usize| {
        let (m, _) = build(0, |b| Ss2d::new(b, "s", c));
        let mut r = CostReport::new(&[]);
        m.cost(&mut r, h, w);
        r.total_macs()
    };
    let mut laws = true;
    for c in [8, 16, 32, 64] {
        for n in [8, 16, 32] {
            laws &= attn(c, n) == 2 * (c * c * n * n) as u64;
            laws &= attn(2 * c, n) == 4 * attn(c, n) && attn(c, 2 * n) == 4 * attn(c, n);
            laws &= ss2d(c, 2 * n, n) == 2 * ss2d(c, n, n) && ss2d(c, 2 * n, 2 * n) == 4 * ss2d(c, n, n);
        }
    }
    ensure(
        exact == micro.len() && direction_ok && laws,
        format!(
            "analytic == instrumented on {exact}/{}; {}; scaling laws {}",
            micro.len(),
            direction.join("; "),
            if laws { "exact" } else { "broken" }
        ),
    )
}

fn training_smoke() -> Outcome {
    let data = samples(&pairs(8, 64, &[100.0, 250.0, 300.0], 7));
    let mut model = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let l0 = dataset_loss(&model, &data).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        augment: false,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    train(&mut model, &data, &cfg, None, |_| {}).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let l1 = dataset_loss(&model, &data).unwrap();
    let e = evaluate(&model, &data).unwrap();
    let ratio = l1 / l0;
    ensure(
        ratio < 0.1 && e.psnr >= e.baseline_psnr + 3.0 && secs < 1800.0,
        format!(
            "loss {l0:.4} -> {l1:.4} ({:.2}% of initial); PSNR {:.2} dB vs baseline {:.2} dB; {secs:.0}s",
            100.0 * ratio,
            e.psnr,
            e.baseline_psnr
        ),
    )
}

fn ablation_structure() -> Outcome {
    let ratios = [100.0, 250.0, 300.0];
    let train_set = samples(&pairs(8, 32, &ratios, 11));
    let test_set = samples(&pairs(4, 32, &ratios, 12));
    let spec = AblationSpec {
        variants: vec!["all".into()],
        base: ModelConfig::default(),
        train: TrainConfig {
            steps: 300,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1, 2],
    };
    let rep = run_ablation(&spec, &train_set, &test_set, |_, _, _| {}).unwrap();
    let want: Vec<(&str, &str)> = MODULE_VARIANTS
        .iter()
        .map(|v| ("modules", *v))
        .chain(PRIOR_VARIANTS.iter().map(|v| ("priors", *v)))
        .chain(HIMA_VARIANTS.iter().map(|v| ("hima", *v)))
        .collect();
    let got: Vec<(&str, &str)> = rep.rows.iter().map(|r| (r.table.as_str(), r.variant.as_str())).collect();
    let structure = got == want && rep.rows.iter().all(|r| r.psnr_per_seed.len() == 3 && r.psnr.is_finite());

    let full = rep.row("priors_all").unwrap();
    let none = rep.row("priors_none").unwrap();
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    let noise = spread(&full.psnr_per_seed).max(spread(&none.psnr_per_seed));
    let gain = median(&none.psnr_per_seed) - median(&full.psnr_per_seed);
    ensure(
        structure && gain <= noise,
        format!(
            "{} rows in table order: {structure}; priors_none {:.2} dB vs full {:.2} dB (gain {gain:+.2}, seed spread {noise:.2})",
            got.len(),
            none.psnr,
            full.psnr
        ),
    )
}

fn determinism_and_serialization() -> Outcome {
    let data: Vec<TrainSample<f64>> = pairs(3, 32, &[100.0, 300.0], 21)
        .iter()
        .map(|p| TrainSample::from_pair(p).unwrap())
        .collect();
    let curve = || {
        let mut m = Model::<f64>::build(&ModelConfig::default(), 5).unwrap();
        let cfg = TrainConfig {
            steps: 6,
            seed: 5,
            ..TrainConfig::default()
        };
        let st = train(&mut m, &data, &cfg, None, |_| {}).unwrap();
        st.history.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>()
    };
    let curves = curve() == curve();

    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::build(&ModelConfig::default(), 6).unwrap();
    weights::save(&model, dir.path()).unwrap();
    let back = weights::load::<f32>(dir.path()).unwrap();
    let x = uniform(&[1, 4, 16, 16], 0.0, 1.0, 7).cast::<f32>();
    let (r1, s1) = model.infer(&x).unwrap();
    let (r2, s2) = back.infer(&x).unwrap();
    let inference = s1 == s2 && r1 == r2;

    let mut packing = true;
    for cfa in [Cfa::Bayer, Cfa::Xtrans] {
        for k in 1..4 {
            let n = cfa.period() * k;
            let m = uniform(&[n, 2 * n], 0.0, 1.0, 30 + k as u64);
            packing &= unpack(cfa, &pack(cfa, &m).unwrap()).unwrap() == m;
        }
    }
    let mut files = true;
    for cfa in [Cfa::Bayer, Cfa::Xtrans] {
        let p = SplitSpec {
            count: 3,
            height: 24,
            width: 36,
            cfa,
            ratios: vec![100.0, 250.0, 300.0],
            seed: 8,
        }
        .generate(&SynthConfig::default())
        .unwrap();
        let g = p[0].noisy.to_mosaic().unwrap();
        let c = to_rgb8(&p[0].gt_srgb).unwrap();
        files &= decode_pgm16(&encode_pgm16(&g)).unwrap() == g && decode_ppm8(&encode_ppm8(&c)).unwrap() == c;
        let root = tempfile::tempdir().unwrap();
        write_split(root.path(), "test", &p).unwrap();
        files &= load_split(root.path(), "test").unwrap() == p;
    }
    ensure(
        curves && inference && packing && files,
        format!("loss curves {curves}, weights roundtrip {inference}, pack/unpack {packing}, file I/O {files}"),
    )
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("FE/IFE partition identity", fe_ife_identity),
        ("LoDA oracle alignment", loda_oracle),
        ("gradient checks", gradients),
        ("SS2D oracle equivalence", ss2d_oracle),
        ("cost model", cost_model),
        ("training smoke", training_smoke),
        ("ablation structure", ablation_structure),
        ("determinism and serialization", determinism_and_serialization),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let took = fmt_secs(t.elapsed());
        match outcome {
            Ok(msg) => println!("PASS {n} {name}: {msg} [{took}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {n} {name}: {msg} [{took}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
