use std::path::{Path, PathBuf};

use hima_core::harness::ablation::variant_config;
use hima_core::harness::eval::score;
use hima_core::harness::{
    compare, compare_text, cost_text, evaluate, evaluate_parallel, ladder, load_checkpoint, loss_csv, run_ablation,
    save_checkpoint, AblationSpec, TrainConfig, TrainSample,
};
use hima_core::loda::{oracle_align, OracleMode};
use hima_core::net::{profile as cost_profile, weights, Model, ModelConfig};
use hima_core::raw::dataset::{load_split, read_meta, write_split, SplitSpec};
use hima_core::raw::pnm::{read_pgm16, read_ppm8, write_pgm16, write_ppm8, Rgb8};
use hima_core::raw::synth::{baseline_srgb, from_rgb8, to_rgb8};
use hima_core::raw::{PackedRaw, SamplePair, SynthConfig};
use hima_core::selftest::run_selftest;
use hima_core::CoreError;
use hima_tensor::{Real, Tensor};
use serde_json::{json, Value};

use crate::{AblateArgs, Dtype, EvalArgs, Failure, Global, InferArgs, LodaDemoArgs, ProfileArgs, SynthArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn model_config(g: &Global) -> Result<ModelConfig, Failure> {
    let base = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CoreError::io(p, e))?;
            ModelConfig::from_json(&text)?
        }
        None => ModelConfig::default(),
    };
    Ok(base.with_overrides(&g.overrides)?)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| Failure::Usage(format!("this subcommand requires --{flag}")))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e).into())
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| CoreError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    write_atomic(path, text.as_bytes())
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json value serializes")));
}

/// Worker count: `HIMA_THREADS` when set, otherwise the available cores.
fn threads() -> usize {
    std::env::var("HIMA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn samples<T: Real>(pairs: &[SamplePair]) -> Result<Vec<TrainSample<T>>, Failure> {
    Ok(pairs.iter().map(TrainSample::from_pair).collect::<Result<_, _>>()?)
}

pub fn synth(g: &Global, a: &SynthArgs) -> Outcome {
    let root = need(&g.data, "data")?;
    let cfa = model_config(g)?.cfa;
    let mut sc = SynthConfig::default();
    if let Some(k) = a.shot_gain {
        sc.shot_gain = k;
    }
    if let Some(r) = a.read_noise {
        sc.read_noise = r;
    }
    if !(sc.shot_gain >= 0.0 && sc.read_noise >= 0.0) {
        return Err(CoreError::config("noise", "shot gain and read noise must be non-negative").into());
    }
    let mut summary = Vec::new();
    for (split, count, seed) in [
        ("train", a.train_count, g.seed),
        ("test", a.test_count, g.seed.wrapping_add(0x9e37_79b9)),
    ] {
        let spec = SplitSpec {
            count,
            height: a.height,
            width: a.width,
            cfa,
            ratios: a.ratios.clone(),
            seed,
        };
        let pairs = spec.generate(&sc)?;
        write_split(root, split, &pairs)?;
        summary.push(json!({ "split": split, "count": count, "seed": seed }));
    }
    let manifest = json!({
        "cfa": cfa,
        "height": a.height,
        "width": a.width,
        "ratios": a.ratios,
        "synth": sc,
        "splits": summary,
    });
    write_json(&root.join("dataset.json"), &manifest)?;
    print_json(&manifest);
    Ok(())
}

fn run_training<T: Real>(g: &Global, a: &TrainArgs, cfg: &ModelConfig, pairs: &[SamplePair], out: &Path) -> Result<Value, Failure> {
    let data = samples::<T>(pairs)?;
    let tc = TrainConfig {
        steps: a.steps,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        seed: g.seed,
        augment: !a.no_augment,
        checkpoint_every: a.checkpoint_every,
        out_dir: Some(out.to_path_buf()),
        stop_at: a.stop_at,
        ..TrainConfig::default()
    };
    let (mut model, resume) = match &a.resume {
        Some(dir) => {
            let (m, st) = load_checkpoint::<T>(dir)?;
            if &m.config != cfg {
                eprintln!("note: continuing with the configuration stored in {}", dir.display());
            }
            eprintln!("resuming at step {}", st.step);
            (m, Some(st))
        }
        None => (Model::<T>::build(cfg, g.seed)?, None),
    };
    let every = (a.steps / 20).max(1);
    let started = std::time::Instant::now();
    let state = hima_core::harness::train(&mut model, &data, &tc, resume, |r| {
        if r.step % every == 0 || r.step + 1 == a.steps {
            eprintln!(
                "step {:>6}  lr {:.3e}  loss {:.5}  ({:.1}s)",
                r.step,
                r.lr,
                r.total,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    save_checkpoint(&out.join("checkpoint"), &model, &state)?;
    weights::save(&model, out)?;
    write_atomic(&out.join("loss.csv"), loss_csv(&state.history).as_bytes())?;
    let rep = evaluate(&model, &data)?;
    Ok(json!({
        "steps": state.step,
        "dtype": T::DTYPE.name(),
        "params": model.param_count(),
        "first_loss": state.history.first().map(|r| r.total),
        "last_loss": state.history.last().map(|r| r.total),
        "train_psnr": rep.psnr,
        "train_ssim": rep.ssim,
        "baseline_psnr": rep.baseline_psnr,
        "baseline_ssim": rep.baseline_ssim,
        "seconds": started.elapsed().as_secs_f64(),
    }))
}

pub fn train(g: &Global, a: &TrainArgs) -> Outcome {
    let root = need(&g.data, "data")?;
    let out = need(&g.out, "out")?;
    let cfg = model_config(g)?;
    let pairs = load_split(root, &a.split)?;
    create_dir(out)?;
    let summary = match a.dtype {
        Dtype::F32 => run_training::<f32>(g, a, &cfg, &pairs, out)?,
        Dtype::F64 => run_training::<f64>(g, a, &cfg, &pairs, out)?,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    print_json(&summary);
    Ok(())
}

fn batch(t: Tensor<f64>) -> Result<Tensor<f32>, Failure> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Ok(t.reshape(&shape).map_err(CoreError::from)?.cast())
}

pub fn infer(g: &Global, a: &InferArgs) -> Outcome {
    let out = need(&g.out, "out")?;
    let model = weights::load::<f32>(&a.weights)?;
    let cfa = model.config.cfa;
    create_dir(out)?;
    let wb = SynthConfig::default().wb_gains;
    let mut rows = Vec::new();
    for input in &a.inputs {
        let name = input
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CoreError::Data(format!("bad input path {}", input.display())))?;
        let id = name.strip_suffix("_noisy.pgm").unwrap_or(name.trim_end_matches(".pgm"));
        let dir = input.parent().unwrap_or(Path::new("."));
        let defaults = SynthConfig::default();
        let (ratio, black, white) = if dir.join(format!("{id}_meta.json")).exists() {
            let m = read_meta(dir, id)?;
            if m.cfa != cfa {
                return Err(CoreError::Data(format!(
                    "{id} is a {} mosaic but the model expects {}",
                    m.cfa.name(),
                    cfa.name()
                ))
                .into());
            }
            (a.ratio.unwrap_or(m.ratio), m.black_level, m.white_level)
        } else {
            let r = a.ratio.ok_or_else(|| {
                Failure::Usage(format!("no metadata for {id}; pass --ratio"))
            })?;
            (r, defaults.black_level, defaults.white_level)
        };
        let mosaic = read_pgm16(input)?;
        let noisy = PackedRaw::from_mosaic(&mosaic, cfa, black, white, ratio)?;
        let (rhat, srgb) = model.infer(&batch(noisy.amplified())?)?;
        let srgb = srgb.cast::<f64>().index0(0);
        let srgb_path = out.join(format!("{id}_srgb.ppm"));
        write_ppm8(&srgb_path, &to_rgb8(&srgb)?)?;
        let rhat_path = match rhat {
            Some(r) => {
                let packed = PackedRaw {
                    data: r.cast::<f64>().index0(0).clamp(0.0, 1.0),
                    cfa,
                    black_level: black,
                    white_level: white,
                    ratio: 1.0,
                };
                let p = out.join(format!("{id}_rhat.pgm"));
                write_pgm16(&p, &packed.to_mosaic()?)?;
                Some(p)
            }
            None => None,
        };
        let mut row = json!({
            "id": id,
            "ratio": ratio,
            "srgb": srgb_path,
            "rhat": rhat_path,
        });
        let gt_path = dir.join(format!("{id}_gt.ppm"));
        if gt_path.exists() {
            let gt = from_rgb8(&read_ppm8(&gt_path)?);
            let (p, s) = score(&srgb, &gt)?;
            let (bp, bs) = score(&baseline_srgb(&noisy, wb)?, &gt)?;
            row["psnr"] = json!(p);
            row["ssim"] = json!(s);
            row["baseline_psnr"] = json!(bp);
            row["baseline_ssim"] = json!(bs);
        }
        rows.push(row);
    }
    print_json(&Value::Array(rows));
    Ok(())
}

pub fn eval(g: &Global, a: &EvalArgs) -> Outcome {
    let root = need(&g.data, "data")?;
    let model = weights::load::<f32>(&a.weights)?;
    let pairs = load_split(root, &a.split)?;
    if let Some(p) = pairs.iter().find(|p| p.noisy.cfa != model.config.cfa) {
        return Err(CoreError::Data(format!(
            "split holds {} mosaics but the model expects {}",
            p.noisy.cfa.name(),
            model.config.cfa.name()
        ))
        .into());
    }
    let data = samples::<f32>(&pairs)?;
    let rep = evaluate_parallel(&model, &data, threads())?;
    let v = serde_json::to_value(&rep).expect("report serializes");
    if let Some(out) = &g.out {
        create_dir(out)?;
        write_json(&out.join("eval.json"), &v)?;
    }
    if a.json {
        print_json(&v);
    } else {
        emit(&rep.to_text());
    }
    Ok(())
}

pub fn profile(g: &Global, a: &ProfileArgs) -> Outcome {
    let cfg = model_config(g)?;
    let cell = cfg.cfa.cell();
    if a.height % cell != 0 || a.width % cell != 0 || a.height == 0 || a.width == 0 {
        return Err(CoreError::config(
            "size",
            format!("{}x{} is not a multiple of the {} cell {cell}", a.height, a.width, cfg.cfa.name()),
        )
        .into());
    }
    let (h, w) = (a.height / cell, a.width / cell);
    if a.compare.is_empty() {
        let report = cost_profile(&cfg, h, w)?;
        if a.json {
            print_json(&serde_json::to_value(&report).expect("report serializes"));
        } else {
            emit(&cost_text(&report, a.depth));
        }
        return Ok(());
    }
    let mut configs = vec![("hima".to_string(), cfg.clone())];
    for name in &a.compare {
        let c = match name.as_str() {
            "all-lsb" | "all_lsb" => cfg.all_lsb(),
            other => variant_config(other, &cfg)?,
        };
        configs.push((name.clone(), c));
    }
    let rows = compare(&configs, h, w)?;
    if a.json {
        print_json(&json!({ "packed_input": [cfg.in_channels(), h, w], "rows": rows }));
    } else {
        emit(&compare_text(&rows, h, w));
    }
    Ok(())
}

/// Black → red → yellow → white ramp over `[0, 1]`.
fn heat(v: f64) -> [u8; 3] {
    let t = v.clamp(0.0, 1.0) * 3.0;
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(t), c(t - 1.0), c(t - 2.0)]
}

fn heatmap(err: &Tensor<f64>, scale: f64) -> Rgb8 {
    let [c, h, w] = [err.shape()[0], err.shape()[1], err.shape()[2]];
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let m = (0..c).map(|k| err.data()[k * h * w + i]).sum::<f64>() / c as f64;
        data.extend(heat(m / scale));
    }
    Rgb8 {
        width: w,
        height: h,
        data,
    }
}

pub fn loda_demo(g: &Global, a: &LodaDemoArgs) -> Outcome {
    let pairs = match &g.data {
        Some(root) => load_split(root, &a.split)?,
        None => SplitSpec {
            count: a.count,
            height: a.size,
            width: a.size,
            cfa: model_config(g)?.cfa,
            ratios: a.ratios.clone(),
            seed: g.seed,
        }
        .generate(&SynthConfig::default())?,
    };
    if pairs.is_empty() {
        return Err(CoreError::Data("no pairs".into()).into());
    }
    let mut sums = [0.0; 4];
    let mut ordered = 0;
    for p in &pairs {
        let l = ladder(p, a.patch_size, a.epsilon)?;
        for (s, v) in sums.iter_mut().zip(l) {
            *s += v;
        }
        if l.windows(2).all(|w| w[0] > w[1]) {
            ordered += 1;
        }
    }
    let n = pairs.len() as f64;
    let modes: Vec<Value> = OracleMode::ALL
        .iter()
        .zip(sums)
        .map(|(m, s)| json!({ "mode": m.name(), "mae_to_gt": s / n, "patch_size": a.patch_size }))
        .collect();
    let stats = json!({
        "pairs": pairs.len(),
        "ordered_fraction": ordered as f64 / n,
        "modes": modes,
    });
    if let Some(out) = &g.out {
        create_dir(out)?;
        let p = &pairs[0];
        let errs: Vec<Tensor<f64>> = OracleMode::ALL
            .iter()
            .map(|&m| {
                let al = oracle_align(&p.noisy.clipped(), &p.gt_raw.data, m, a.patch_size, p.noisy.ratio, a.epsilon)?;
                Ok(al.zip_map(&p.gt_raw.data, |x, y| (x - y).abs())?)
            })
            .collect::<Result<_, CoreError>>()?;
        let scale = errs.iter().map(|e| e.max_abs()).fold(1e-12, f64::max);
        for (m, e) in OracleMode::ALL.iter().zip(&errs) {
            write_ppm8(&out.join(format!("loda_{}.ppm", m.name())), &heatmap(e, scale))?;
        }
        write_json(&out.join("loda_ladder.json"), &stats)?;
    }
    print_json(&stats);
    Ok(())
}

pub fn ablate(g: &Global, a: &AblateArgs) -> Outcome {
    let base = model_config(g)?;
    let (train_pairs, test_pairs) = match &g.data {
        Some(root) => (load_split(root, "train")?, load_split(root, "test")?),
        None => {
            let spec = |count, seed| SplitSpec {
                count,
                height: a.size,
                width: a.size,
                cfa: base.cfa,
                ratios: vec![100.0, 250.0, 300.0],
                seed,
            };
            let sc = SynthConfig::default();
            (
                spec(a.train_count, g.seed).generate(&sc)?,
                spec(a.test_count, g.seed.wrapping_add(0x9e37_79b9)).generate(&sc)?,
            )
        }
    };
    let spec = AblationSpec {
        variants: a.variants.clone(),
        base,
        train: TrainConfig {
            steps: a.steps,
            ..TrainConfig::default()
        },
        seeds: a.seeds.clone(),
    };
    let report = run_ablation(&spec, &samples(&train_pairs)?, &samples(&test_pairs)?, |name, seed, psnr| {
        eprintln!("{name:<16} seed {seed:<4} psnr {psnr:.3}")
    })?;
    let v = serde_json::to_value(&report).expect("report serializes");
    if let Some(out) = &g.out {
        create_dir(out)?;
        write_json(&out.join("ablation.json"), &v)?;
    }
    if a.json {
        print_json(&v);
    } else {
        emit(&report.to_text());
    }
    Ok(())
}

pub fn selftest() -> Outcome {
    let results = run_selftest();
    let mut failed = 0;
    for r in &results {
        emit(&format!(
            "{:<14} {:>3}/{:<3} {}\n",
            r.name,
            r.passed,
            r.total,
            if r.ok() { "ok" } else { "FAILED" }
        ));
        for f in &r.failures {
            eprintln!("  {}: {f}", r.name);
        }
        failed += r.total - r.passed;
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} selftest check(s) failed")));
    }
    Ok(())
}
