use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: [&str; 4] = ["--set", "widths=4,8,16,32", "--set", "pdb_width=4"];

fn hima(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hima"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path, train: usize, test: usize, size: usize, extra: &[&str]) {
    let (tr, te, sz) = (train.to_string(), test.to_string(), size.to_string());
    let mut args = vec![
        "synth",
        "--data",
        s(root),
        "--train-count",
        &tr,
        "--test-count",
        &te,
        "--height",
        &sz,
        "--width",
        &sz,
    ];
    args.extend_from_slice(extra);
    let o = hima(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&hima(&["--help"])), 0);
    assert_eq!(code(&hima(&["--version"])), 0);
    assert_eq!(code(&hima(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&hima(&[])), 1);
    assert_eq!(code(&hima(&["frobnicate"])), 1);
    assert_eq!(code(&hima(&["profile", "--height", "abc"])), 1);
    let o = hima(&["profile", "--set", "no_such_field=3"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_field"));
    assert_eq!(code(&hima(&["profile", "--set", "levels=0"])), 1);
    assert_eq!(code(&hima(&["train"])), 1, "missing --data");
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = hima(&["eval", "--data", s(&missing), "--weights", s(&missing)]);
    assert_eq!(code(&o), 2);
    std::fs::create_dir_all(dir.path().join("w")).unwrap();
    std::fs::write(dir.path().join("w/model.manifest.json"), "{ not json").unwrap();
    let o = hima(&["infer", "--weights", s(&dir.path().join("w")), "--out", s(dir.path()), "x_noisy.pgm"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn selftest_passes_and_reports_suites() {
    let o = hima(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    for suite in ["freq", "loda", "gradients", "ss2d", "cost", "serialization", "determinism", "metrics"] {
        assert!(text.lines().any(|l| l.starts_with(suite) && l.ends_with("ok")), "{suite}: {text}");
    }
}

#[test]
fn profile_compare_all_lsb_exceeds_hima() {
    let o = hima(&["profile", "--compare", "all-lsb", "--json"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let (h, l) = (&rows[0], &rows[1]);
    assert_eq!(h["name"], "hima");
    assert!(l["params"].as_u64() > h["params"].as_u64());
    assert!(l["macs"].as_u64() > h["macs"].as_u64());
    let text = hima(&["profile", "--compare", "all-lsb"]);
    assert_eq!(String::from_utf8_lossy(&text.stdout).lines().count(), 4);
}

#[test]
fn profile_rejects_sizes_off_the_cfa_grid() {
    assert_eq!(code(&hima(&["profile", "--height", "63"])), 1);
    let o = hima(&["profile", "--set", "cfa=xtrans", "--height", "96", "--width", "96"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn synth_writes_splits_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 2, 1, 16, &["--seed", "5"]);
    synth(b.path(), 2, 1, 16, &["--seed", "5"]);
    for f in ["train/00000_noisy.pgm", "train/00001_gt.ppm", "test/00000_meta.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth(&data, 2, 1, 32, &[]);
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--steps", "3"];
    args.extend_from_slice(&TINY);
    let o = hima(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["steps"], 3);
    for f in ["model.manifest.json", "model.blob", "loss.csv", "checkpoint/state.json", "train_summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,lr,loss_raw,loss_srgb"));
    assert_eq!(csv.lines().count(), 4);

    let input = data.join("test/00000_noisy.pgm");
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("infer{k}"));
        let o = hima(&["infer", "--weights", s(&run), "--out", s(&out), s(&input)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = json(&o);
        assert!(v[0]["psnr"].is_f64() && v[0]["baseline_psnr"].is_f64());
        outs.push(out);
    }
    for f in ["00000_srgb.ppm", "00000_rhat.pgm"] {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        assert_eq!(a, std::fs::read(outs[1].join(f)).unwrap(), "{f} differs between runs");
    }

    let o = hima(&["eval", "--data", s(&data), "--weights", s(&run), "--json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn infer_without_metadata_needs_a_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth(&data, 1, 0, 16, &[]);
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--steps", "1"];
    args.extend_from_slice(&TINY);
    assert_eq!(code(&hima(&args)), 0);
    let lone = dir.path().join("lone_noisy.pgm");
    std::fs::copy(data.join("train/00000_noisy.pgm"), &lone).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&hima(&["infer", "--weights", s(&run), "--out", s(&out), s(&lone)])), 1);
    let o = hima(&["infer", "--weights", s(&run), "--out", s(&out), "--ratio", "100", s(&lone)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("lone_srgb.ppm").exists());
}

#[test]
fn diverging_training_exits_three_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth(&data, 1, 0, 16, &[]);
    let mut args = vec![
        "train", "--data", s(&data), "--out", s(&run), "--steps", "8", "--lr-max", "1e30", "--lr-min", "1e30",
    ];
    args.extend_from_slice(&TINY);
    let o = hima(&args);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let snap: Value = serde_json::from_slice(&std::fs::read(run.join("nan_snapshot.json")).unwrap()).unwrap();
    assert!(snap["step"].is_u64());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2, 0, 16, &[]);
    let run = |out: &Path, stop: Option<&str>, resume: Option<&Path>| {
        let mut args = vec!["train", "--data", s(&data), "--out", s(out), "--steps", "6", "--dtype", "f64"];
        if let Some(n) = stop {
            args.extend(["--stop-at", n]);
        }
        if let Some(r) = resume {
            args.extend(["--resume", s(r)]);
        }
        args.extend_from_slice(&TINY);
        let o = hima(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let full = dir.path().join("full");
    let half = dir.path().join("half");
    let rest = dir.path().join("rest");
    run(&full, None, None);
    run(&half, Some("3"), None);
    run(&rest, None, Some(&half.join("checkpoint")));
    let a = std::fs::read_to_string(full.join("loss.csv")).unwrap();
    let b = std::fs::read_to_string(rest.join("loss.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(full.join("model.blob")).unwrap(),
        std::fs::read(rest.join("model.blob")).unwrap()
    );
}

#[test]
fn loda_demo_emits_ladder_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loda");
    let o = hima(&["loda-demo", "--count", "12", "--size", "32", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let modes = v["modes"].as_array().unwrap();
    let names: Vec<_> = modes.iter().map(|m| m["mode"].as_str().unwrap()).collect();
    assert_eq!(names, ["global_fixed", "global_mean", "local_mean", "local_mean_std"]);
    let mae: Vec<f64> = modes.iter().map(|m| m["mae_to_gt"].as_f64().unwrap()).collect();
    assert!(mae.windows(2).all(|w| w[0] > w[1]), "{mae:?}");
    for n in names {
        assert!(out.join(format!("loda_{n}.ppm")).exists());
    }
    assert_eq!(json(&o), json(&hima(&["loda-demo", "--count", "12", "--size", "32"])));
}

#[test]
fn ablate_reports_every_requested_row() {
    let o = hima(&[
        "ablate",
        "--variants",
        "table_hima",
        "--steps",
        "2",
        "--seeds",
        "0",
        "--train-count",
        "1",
        "--test-count",
        "1",
        "--size",
        "16",
        "--json",
        "--set",
        "widths=4,8,16,32",
        "--set",
        "pdb_width=4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let rows: Vec<_> = v["rows"].as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap().to_string()).collect();
    assert_eq!(rows, ["all_lsb", "ssb_sa", "hima"]);
}

/// A briefly overfit model beats the ratio-scaled demosaic on its own pair.
#[test]
fn overfit_checkpoint_beats_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth(&data, 1, 0, 32, &["--ratios", "100"]);
    let o = hima(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--steps",
        "300",
        "--no-augment",
        "--lr-max",
        "1e-3",
        "--lr-min",
        "1e-4",
        "--set",
        "widths=8,16,32,64",
        "--set",
        "pdb_width=8",
        "--set",
        "loda_patch_sizes=2,4,8",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("inf");
    let o = hima(&["infer", "--weights", s(&run), "--out", s(&out), s(&data.join("train/00000_noisy.pgm"))]);
    let v = json(&o);
    let (p, b) = (v[0]["psnr"].as_f64().unwrap(), v[0]["baseline_psnr"].as_f64().unwrap());
    assert!(p > b, "model {p} dB vs baseline {b} dB");
}
