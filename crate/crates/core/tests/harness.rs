mod common;

use common::uniform;
use hima_core::harness::metrics::{gaussian_window, PSNR_CAP};
use hima_core::harness::{
    dataset_loss, evaluate, evaluate_parallel, l1_dual_loss, load_checkpoint, loss_csv, psnr, save_checkpoint, ssim, train,
    Augment, CosineSchedule, TrainConfig, TrainSample,
};
use hima_core::net::{weights, Model};
use hima_core::raw::dataset::SplitSpec;
use hima_core::raw::{Cfa, SynthConfig};
use hima_core::selftest::micro_config;
use hima_core::CoreError;
use hima_tensor::{Real, Tape, Tensor};
use proptest::prelude::*;

/// SSIM with the full 2-D window evaluated at every valid position.
fn ssim_ref(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = a.numel() / (h * w);
    let n = 11.min(h).min(w);
    let n = if n % 2 == 0 { n - 1 } else { n };
    let c = (n / 2) as f64;
    let mut win = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            win[y * n + x] = (-((y as f64 - c).powi(2) + (x as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for p in 0..planes {
        let pa = &a.data()[p * h * w..];
        let pb = &b.data()[p * h * w..];
        let mut acc = 0.0;
        let (oh, ow) = (h - n + 1, w - n + 1);
        for y in 0..oh {
            for x in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let g = win[i * n + j];
                        let (u, v) = (pa[(y + i) * w + x + j], pb[(y + i) * w + x + j]);
                        mx += g * u;
                        my += g * v;
                        sxx += g * u * u;
                        syy += g * v * v;
                        sxy += g * u * v;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    total / planes as f64
}

#[test]
fn ssim_matches_direct_window_reference() {
    for (k, shape) in [[3, 16, 16], [1, 23, 17], [2, 9, 12]].iter().enumerate() {
        let a = uniform(shape, 0.0, 1.0, 10 + k as u64);
        let b = a.zip_map(&uniform(shape, -0.1, 0.1, 20 + k as u64), |x, y| x + y).unwrap();
        let (got, want) = (ssim(&a, &b).unwrap(), ssim_ref(&a, &b));
        assert!((got - want).abs() < 1e-12, "{shape:?}: {got} vs {want}");
    }
}

#[test]
fn ssim_and_psnr_edge_cases() {
    let a = uniform(&[3, 12, 12], 0.0, 1.0, 1);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!(ssim(&a, &Tensor::zeros(&[3, 12, 11])).is_err());
    let w = gaussian_window(11, 1.5);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15 && w[5] > w[4] && w[0] == w[10]);
}

#[test]
fn psnr_matches_closed_form() {
    let a = uniform(&[2, 5, 7], 0.0, 1.0, 2);
    let b = uniform(&[2, 5, 7], 0.0, 1.0, 3);
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 70.0;
    assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    assert!((psnr(&a, &b, 2.0).unwrap() - 10.0 * (4.0 / mse).log10()).abs() < 1e-12);
}

#[test]
fn dual_loss_weights_both_terms() {
    let tape = Tape::<f64>::new();
    let c = |v: Vec<f64>| tape.constant(Tensor::new(&[1, 4], v).unwrap());
    let raw = (c(vec![0.0, 1.0, 2.0, 3.0]), c(vec![1.0, 1.0, 1.0, 1.0]));
    let srgb = (c(vec![0.5, 0.5, 0.5, 0.5]), c(vec![0.0, 0.0, 1.0, 1.0]));
    let (total, lr, ls) = l1_dual_loss(Some(raw), srgb, 2.0, 0.5).unwrap();
    assert_eq!(lr.unwrap().value().item(), 1.0);
    assert_eq!(ls.value().item(), 0.5);
    assert_eq!(total.value().item(), 2.25);
    let (total, lr, _) = l1_dual_loss(None, srgb, 2.0, 0.5).unwrap();
    assert!(lr.is_none());
    assert_eq!(total.value().item(), 0.25);
    assert!(l1_dual_loss(None, (c(vec![0.0; 4]), tape.constant(Tensor::zeros(&[4, 1]))), 1.0, 1.0).is_err());
}

#[test]
fn cosine_schedule_endpoints_and_monotonicity() {
    let s = CosineSchedule {
        max: 2e-4,
        min: 2e-5,
        total: 2000,
    };
    assert_eq!(s.lr(0), 2e-4);
    assert!((s.lr(1999) - 2e-5).abs() < 1e-18);
    assert!((s.lr(999) - 1.1e-4).abs() < 1e-7);
    assert!((1..2000).all(|t| s.lr(t) <= s.lr(t - 1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flips_are_involutions_and_transposes_swap_axes(bits in 0u32..8, h in 1usize..6, w in 1usize..6, block in 1usize..3, seed in any::<u64>()) {
        let t = uniform(&[1, 2, h * block, w * block], 0.0, 1.0, seed);
        let a = Augment::from_bits(bits);
        let y = a.apply(&t, block);
        prop_assert_eq!(y.numel(), t.numel());
        if a.transpose {
            prop_assert_eq!(y.shape(), &[1, 2, w * block, h * block]);
        } else {
            prop_assert_eq!(a.apply(&y, block), t.clone());
        }
        let mut sorted_in = t.data().to_vec();
        let mut sorted_out = y.data().to_vec();
        sorted_in.sort_by(f64::total_cmp);
        sorted_out.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted_in, sorted_out);
    }
}

fn data<T: Real>(count: usize, seed: u64) -> Vec<TrainSample<T>> {
    SplitSpec {
        count,
        height: 16,
        width: 16,
        cfa: Cfa::Bayer,
        ratios: vec![100.0, 300.0],
        seed,
    }
    .generate(&SynthConfig::default())
    .unwrap()
    .iter()
    .map(|p| TrainSample::from_pair(p).unwrap())
    .collect()
}

fn short(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_training_is_bit_identical() {
    let d = data::<f64>(3, 1);
    let run = |seed| {
        let mut m = Model::<f64>::build(&micro_config(Cfa::Bayer), seed).unwrap();
        let st = train(&mut m, &d, &short(7, seed), None, |_| {}).unwrap();
        (st.history, m.params.tensors().to_vec())
    };
    let (h1, p1) = run(4);
    let (h2, p2) = run(4);
    let bits = |h: &[hima_core::harness::LossRecord]| h.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&h1), bits(&h2));
    assert_eq!(p1, p2);
    assert_ne!(bits(&h1), bits(&run(5).0));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let d = data::<f64>(2, 2);
    let mut m = Model::<f64>::build(&micro_config(Cfa::Bayer), 1).unwrap();
    let before = m.params.tensors().to_vec();
    let cfg = TrainConfig {
        lr_max: 0.0,
        lr_min: 0.0,
        ..short(4, 0)
    };
    let st = train(&mut m, &d, &cfg, None, |_| {}).unwrap();
    assert_eq!(m.params.tensors(), &before[..]);
    assert_eq!(st.history.len(), 4);
}

#[test]
fn training_reduces_loss_on_a_tiny_set() {
    let d = data::<f32>(2, 3);
    let mut m = Model::<f32>::build(&micro_config(Cfa::Bayer), 2).unwrap();
    let before = dataset_loss(&m, &d).unwrap();
    let cfg = TrainConfig {
        lr_max: 2e-3,
        lr_min: 2e-4,
        augment: false,
        ..short(60, 0)
    };
    train(&mut m, &d, &cfg, None, |_| {}).unwrap();
    assert!(dataset_loss(&m, &d).unwrap() < 0.7 * before);
}

#[test]
fn resume_continues_bit_exactly() {
    let d = data::<f64>(3, 4);
    let cfg = micro_config(Cfa::Bayer);
    let mut full = Model::<f64>::build(&cfg, 3).unwrap();
    let st_full = train(&mut full, &d, &short(8, 9), None, |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut half = Model::<f64>::build(&cfg, 3).unwrap();
    let stop = TrainConfig {
        stop_at: Some(5),
        ..short(8, 9)
    };
    let st_half = train(&mut half, &d, &stop, None, |_| {}).unwrap();
    assert_eq!(st_half.step, 5);
    save_checkpoint(dir.path(), &half, &st_half).unwrap();
    let (mut back, st) = load_checkpoint::<f64>(dir.path()).unwrap();
    let st_rest = train(&mut back, &d, &short(8, 9), Some(st), |_| {}).unwrap();
    assert_eq!(loss_csv(&st_rest.history), loss_csv(&st_full.history));
    assert_eq!(back.params.tensors(), full.params.tensors());
    assert!(load_checkpoint::<f32>(dir.path()).is_err(), "dtype mismatch must be refused");
}

#[test]
fn weights_roundtrip_gives_identical_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(Cfa::Bayer);
    let m = Model::<f32>::build(&cfg, 7).unwrap();
    let man = weights::save(&m, dir.path()).unwrap();
    assert_eq!(man.param_count as usize, m.param_count());
    assert_eq!(man.cfa_order, "RGGB");
    let mut names: Vec<_> = man.params.iter().map(|e| e.name.clone()).collect();
    assert_eq!(names.len(), m.params.len());
    names.sort();
    names.dedup();
    assert_eq!(names.len(), m.params.len(), "every parameter listed once");
    assert_eq!(m.cost(8, 8).total_params(), m.param_count() as u64);

    let back = weights::load::<f32>(dir.path()).unwrap();
    assert_eq!(back.config, m.config);
    let x = uniform(&[1, 4, 8, 8], 0.0, 1.0, 8).cast::<f32>();
    let (r1, s1) = m.infer(&x).unwrap();
    let (r2, s2) = back.infer(&x).unwrap();
    assert_eq!(s1.data(), s2.data());
    assert_eq!(r1.unwrap().data(), r2.unwrap().data());
}

#[test]
fn damaged_weights_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::<f32>::build(&micro_config(Cfa::Bayer), 7).unwrap();
    weights::save(&m, dir.path()).unwrap();
    let blob = dir.path().join(weights::BLOB_FILE);
    let bytes = std::fs::read(&blob).unwrap();

    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(weights::load::<f32>(dir.path()), Err(CoreError::Weights(_))));

    let mut flipped = bytes.clone();
    flipped[10] ^= 1;
    std::fs::write(&blob, &flipped).unwrap();
    assert!(matches!(weights::load::<f32>(dir.path()), Err(CoreError::Weights(_))));

    std::fs::write(&blob, &bytes).unwrap();
    std::fs::write(dir.path().join(weights::MANIFEST_FILE), "{}").unwrap();
    assert!(matches!(weights::load::<f32>(dir.path()), Err(CoreError::Weights(_))));
}

#[test]
fn parallel_evaluation_matches_sequential() {
    let d = data::<f32>(5, 6);
    let m = Model::<f32>::build(&micro_config(Cfa::Bayer), 1).unwrap();
    let seq = evaluate(&m, &d).unwrap();
    for threads in [2, 3, 8] {
        assert_eq!(evaluate_parallel(&m, &d, threads).unwrap(), seq);
    }
    assert_eq!(seq.rows.iter().map(|r| r.index).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    assert!(seq.baseline_psnr > 0.0 && seq.baseline_psnr < PSNR_CAP);
}

#[test]
fn empty_training_set_is_a_data_error() {
    let mut m = Model::<f32>::build(&micro_config(Cfa::Bayer), 1).unwrap();
    assert!(matches!(train(&mut m, &[], &short(1, 0), None, |_| {}), Err(CoreError::Data(_))));
}
