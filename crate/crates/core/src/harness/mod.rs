//! Losses, metrics, training, evaluation, ablations and cost reports.

pub mod ablation;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod train;

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationSpec};
pub use data::{Augment, TrainSample};
pub use eval::{dataset_loss, evaluate, evaluate_parallel, EvalReport};
pub use metrics::{l1_dual_loss, psnr, ssim};
pub use train::{load_checkpoint, loss_csv, save_checkpoint, train, CosineSchedule, LossRecord, TrainConfig, TrainState};

use serde::{Deserialize, Serialize};

use crate::cost::CostReport;
use crate::error::Result;
use crate::loda::{oracle_align, OracleMode};
use crate::net::{profile, ModelConfig};
use crate::raw::SamplePair;

/// Aligned-column listing of a cost report, grouped to `depth` name parts.
pub fn cost_text(report: &CostReport, depth: usize) -> String {
    let mut s = format!(
        "input {:?}; MACs are multiply-accumulates (one multiply-add = 1), batch 1\n{:<28}  {:>12}  {:>16}\n",
        report.input, "op", "params", "macs"
    );
    for e in report.grouped(depth) {
        s.push_str(&format!("{:<28}  {:>12}  {:>16}\n", e.name, e.params, e.macs));
    }
    s.push_str(&format!(
        "{:<28}  {:>12}  {:>16}\n",
        "total",
        report.total_params(),
        report.total_macs()
    ));
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Totals of several named configurations at one packed input size.
pub fn compare(configs: &[(String, ModelConfig)], h: usize, w: usize) -> Result<Vec<CompareRow>> {
    configs
        .iter()
        .map(|(name, c)| {
            let r = profile(c, h, w)?;
            Ok(CompareRow {
                name: name.clone(),
                params: r.total_params(),
                macs: r.total_macs(),
            })
        })
        .collect()
}

pub fn compare_text(rows: &[CompareRow], h: usize, w: usize) -> String {
    let mut s = format!(
        "packed input {h}x{w}; MACs are multiply-accumulates, batch 1\n{:<12}  {:>12}  {:>16}\n",
        "model", "params", "macs"
    );
    for r in rows {
        s.push_str(&format!("{:<12}  {:>12}  {:>16}\n", r.name, r.params, r.macs));
    }
    s
}

/// Mean absolute error to the clean RAW of each known-target alignment of
/// the black-level clamped input, in [`OracleMode::ALL`] order.
pub fn ladder(pair: &SamplePair, patch: usize, eps: f64) -> Result<[f64; 4]> {
    let x = &pair.noisy.clipped();
    let gt = &pair.gt_raw.data;
    let mut out = [0.0; 4];
    for (i, mode) in OracleMode::ALL.into_iter().enumerate() {
        let a = oracle_align(x, gt, mode, patch, pair.noisy.ratio, eps)?;
        out[i] = a
            .data()
            .iter()
            .zip(gt.data())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / a.numel() as f64;
    }
    Ok(out)
}
