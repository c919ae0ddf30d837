use hima_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use super::data::TrainSample;
use super::metrics::{psnr, ssim};
use super::train::sample_loss;
use crate::error::Result;
use crate::net::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Metrics of a clipped prediction against its target.
pub fn score(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<(f64, f64)> {
    let p = pred.clamp(0.0, 1.0);
    Ok((psnr(&p, target, 1.0)?, ssim(&p, target)?))
}

fn eval_one<T: Real>(model: &Model<T>, index: usize, s: &TrainSample<T>) -> Result<EvalRow> {
    let (_, srgb) = model.infer(&s.input)?;
    let gt = s.gt_srgb.cast::<f64>();
    let (p, q) = score(&srgb.cast(), &gt)?;
    let (bp, bq) = score(&s.baseline, &gt)?;
    Ok(EvalRow {
        index,
        psnr: p,
        ssim: q,
        baseline_psnr: bp,
        baseline_ssim: bq,
    })
}

/// PSNR/SSIM of the clipped sRGB output and of the ratio-scale baseline.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[TrainSample<T>]) -> Result<EvalReport> {
    evaluate_parallel(model, samples, 1)
}

/// [`evaluate`] with images spread over up to `threads` workers. Rows keep
/// sample order, so the report does not depend on the worker count.
pub fn evaluate_parallel<T: Real>(model: &Model<T>, samples: &[TrainSample<T>], threads: usize) -> Result<EvalReport> {
    let threads = threads.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let rows: Vec<EvalRow> = if threads == 1 {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| eval_one(model, i, s))
            .collect::<Result<_>>()?
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .enumerate()
                .map(|(c, part)| {
                    scope.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(i, s)| eval_one(model, c * chunk + i, s))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect::<Result<Vec<Vec<_>>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    Ok(EvalReport {
        psnr: mean(rows.iter().map(|r| r.psnr)),
        ssim: mean(rows.iter().map(|r| r.ssim)),
        baseline_psnr: mean(rows.iter().map(|r| r.baseline_psnr)),
        baseline_ssim: mean(rows.iter().map(|r| r.baseline_ssim)),
        rows,
    })
}

/// Mean total loss over `samples` without augmentation.
pub fn dataset_loss<T: Real>(model: &Model<T>, samples: &[TrainSample<T>]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        acc += sample_loss(model, s, false)?.2;
    }
    Ok(acc / samples.len().max(1) as f64)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>6}  {:>9}  {:>7}  {:>13}  {:>13}\n",
            "sample", "psnr_dB", "ssim", "baseline_psnr", "baseline_ssim"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>6}  {:>9.3}  {:>7.4}  {:>13.3}  {:>13.4}\n",
                r.index, r.psnr, r.ssim, r.baseline_psnr, r.baseline_ssim
            ));
        }
        s.push_str(&format!(
            "{:>6}  {:>9.3}  {:>7.4}  {:>13.3}  {:>13.4}\n",
            "mean", self.psnr, self.ssim, self.baseline_psnr, self.baseline_ssim
        ));
        s
    }
}
