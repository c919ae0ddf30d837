use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::data::TrainSample;
use super::eval::evaluate;
use super::train::{train, TrainConfig};
use crate::blocks::BlockType;
use crate::error::{CoreError, Result};
use crate::net::{profile, Fusion, Model, ModelConfig};

/// Variant names of each ablation table, in row order.
pub const MODULE_VARIANTS: [&str; 4] = ["baseline", "mesa", "loda", "mpf"];
pub const PRIOR_VARIANTS: [&str; 4] = ["priors_all", "priors_ar_rhat", "priors_ar", "priors_none"];
pub const HIMA_VARIANTS: [&str; 3] = ["all_lsb", "ssb_sa", "hima"];

/// Table label of a variant name.
pub fn table_of(name: &str) -> Option<&'static str> {
    if MODULE_VARIANTS.contains(&name) {
        Some("modules")
    } else if PRIOR_VARIANTS.contains(&name) {
        Some("priors")
    } else if HIMA_VARIANTS.contains(&name) {
        Some("hima")
    } else {
        None
    }
}

/// Expands table names (`table_modules`, `table_priors`, `table_hima`,
/// `all`) and passes variant names through.
pub fn expand(requests: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for r in requests {
        match r.as_str() {
            "table_modules" => out.extend(MODULE_VARIANTS.map(String::from)),
            "table_priors" => out.extend(PRIOR_VARIANTS.map(String::from)),
            "table_hima" => out.extend(HIMA_VARIANTS.map(String::from)),
            "all" => {
                out.extend(MODULE_VARIANTS.map(String::from));
                out.extend(PRIOR_VARIANTS.map(String::from));
                out.extend(HIMA_VARIANTS.map(String::from));
            }
            name if table_of(name).is_some() => out.push(name.to_string()),
            other => return Err(CoreError::config("ablation", format!("unknown toggle `{other}`"))),
        }
    }
    Ok(out)
}

/// Configuration of a named variant derived from the full model `base`.
pub fn variant_config(name: &str, base: &ModelConfig) -> Result<ModelConfig> {
    let mut c = base.clone();
    let no_priors = |c: &mut ModelConfig| {
        c.prior_aligned = false;
        c.prior_rhat = false;
        c.prior_hf = false;
    };
    match name {
        "baseline" | "mesa" | "loda" => {
            c.fusion = Fusion::Conv;
            no_priors(&mut c);
            c.metadata = name != "baseline";
            c.loda = name == "loda";
        }
        "mpf" | "priors_all" | "hima" => {}
        "priors_ar_rhat" => c.prior_hf = false,
        "priors_ar" => {
            c.prior_hf = false;
            c.prior_rhat = false;
        }
        "priors_none" => no_priors(&mut c),
        "all_lsb" => c = c.all_lsb(),
        "ssb_sa" => {
            for t in &mut c.block_types {
                if *t == BlockType::Ssb {
                    *t = BlockType::SpatialAttention;
                }
            }
        }
        other => return Err(CoreError::config("ablation", format!("unknown toggle `{other}`"))),
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct AblationSpec {
    /// Variant or table names, see [`expand`].
    pub variants: Vec<String>,
    pub base: ModelConfig,
    pub train: TrainConfig,
    /// Each variant is trained once per seed; metrics are medians.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: String,
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_per_seed: Vec<f64>,
    pub ssim_per_seed: Vec<f64>,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Packed input size used for the MAC column.
    pub input: Vec<usize>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub rows: Vec<AblationRow>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Trains every requested variant on `train_set` with each seed and scores
/// it on `test_set`. Variants with identical configurations share runs.
pub fn run_ablation(
    spec: &AblationSpec,
    train_set: &[TrainSample<f32>],
    test_set: &[TrainSample<f32>],
    mut progress: impl FnMut(&str, u64, f64),
) -> Result<AblationReport> {
    let names = expand(&spec.variants)?;
    if spec.seeds.is_empty() {
        return Err(CoreError::config("seeds", "needs at least one seed"));
    }
    let first = test_set
        .first()
        .or(train_set.first())
        .ok_or_else(|| CoreError::Data("ablation needs data".into()))?;
    let (h, w) = (first.input.shape()[2], first.input.shape()[3]);
    let mut cache: HashMap<(String, u64), (f64, f64)> = HashMap::new();
    let mut rows = Vec::new();
    for name in &names {
        let cfg = variant_config(name, &spec.base)?;
        let key = cfg.to_json();
        let mut ps = Vec::new();
        let mut ss = Vec::new();
        for &seed in &spec.seeds {
            let (p, s) = match cache.get(&(key.clone(), seed)) {
                Some(v) => *v,
                None => {
                    let mut model = Model::<f32>::build(&cfg, seed)?;
                    let tc = TrainConfig {
                        seed,
                        out_dir: None,
                        checkpoint_every: 0,
                        ..spec.train.clone()
                    };
                    train(&mut model, train_set, &tc, None, |_| {})?;
                    let rep = evaluate(&model, test_set)?;
                    cache.insert((key.clone(), seed), (rep.psnr, rep.ssim));
                    (rep.psnr, rep.ssim)
                }
            };
            progress(name, seed, p);
            ps.push(p);
            ss.push(s);
        }
        let cost = profile(&cfg, h, w)?;
        rows.push(AblationRow {
            table: table_of(name).unwrap_or("custom").to_string(),
            variant: name.clone(),
            psnr: median(&ps),
            ssim: median(&ss),
            psnr_per_seed: ps,
            ssim_per_seed: ss,
            params: cost.total_params(),
            macs: cost.total_macs(),
        });
    }
    Ok(AblationReport {
        input: vec![spec.base.in_channels(), h, w],
        seeds: spec.seeds.clone(),
        steps: spec.train.steps,
        rows,
    })
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "input {:?}, {} steps, seeds {:?}; PSNR/SSIM are medians over seeds; MACs are multiply-accumulates\n",
            self.input, self.steps, self.seeds
        );
        let mut table = "";
        for r in &self.rows {
            if r.table != table {
                table = &r.table;
                s.push_str(&format!(
                    "\n[{table}]\n{:<16}  {:>9}  {:>7}  {:>10}  {:>14}\n",
                    "variant", "psnr_dB", "ssim", "params", "macs"
                ));
            }
            s.push_str(&format!(
                "{:<16}  {:>9.3}  {:>7.4}  {:>10}  {:>14}\n",
                r.variant, r.psnr, r.ssim, r.params, r.macs
            ));
        }
        s
    }
}
