//! On-disk dataset layout: `<root>/<split>/<id>_noisy.pgm`, `<id>_gt.pgm`,
//! `<id>_gt.ppm` and `<id>_meta.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cfa::Cfa;
use super::pnm::{read_pgm16, read_ppm8, write_pgm16, write_ppm8};
use super::synth::{from_rgb8, synth_pair, to_rgb8, PackedRaw, SamplePair, SynthConfig};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub cfa: Cfa,
    pub ratio: f64,
    pub black_level: u16,
    pub white_level: u16,
    pub seed: u64,
}

/// Parameters of a generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub cfa: Cfa,
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    /// Seed of sample `i`.
    pub fn sample_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
    }

    pub fn generate(&self, cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
        if self.ratios.is_empty() {
            return Err(CoreError::Data("at least one ratio is required".into()));
        }
        (0..self.count)
            .map(|i| {
                let ratio = self.ratios[i % self.ratios.len()];
                synth_pair(self.sample_seed(i), self.height, self.width, self.cfa, ratio, cfg)
            })
            .collect()
    }
}

fn sample_id(i: usize) -> String {
    format!("{i:05}")
}

fn path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}_{suffix}"))
}

pub fn write_pair(dir: &Path, id: &str, pair: &SamplePair) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_pgm16(&path(dir, id, "noisy.pgm"), &pair.noisy.to_mosaic()?)?;
    write_pgm16(&path(dir, id, "gt.pgm"), &pair.gt_raw.to_mosaic()?)?;
    write_ppm8(&path(dir, id, "gt.ppm"), &to_rgb8(&pair.gt_srgb)?)?;
    let meta = SampleMeta {
        cfa: pair.noisy.cfa,
        ratio: pair.noisy.ratio,
        black_level: pair.noisy.black_level,
        white_level: pair.noisy.white_level,
        seed: pair.seed,
    };
    let p = path(dir, id, "meta.json");
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&p, json).map_err(|e| CoreError::io(&p, e))
}

pub fn read_meta(dir: &Path, id: &str) -> Result<SampleMeta> {
    let p = path(dir, id, "meta.json");
    let text = std::fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Data(format!("{}: {e}", p.display())))
}

pub fn read_pair(dir: &Path, id: &str) -> Result<SamplePair> {
    let meta = read_meta(dir, id)?;
    let noisy_m = read_pgm16(&path(dir, id, "noisy.pgm"))?;
    let gt_m = read_pgm16(&path(dir, id, "gt.pgm"))?;
    if (noisy_m.width, noisy_m.height) != (gt_m.width, gt_m.height) {
        return Err(CoreError::Data(format!("sample {id}: noisy and gt mosaics differ in size")));
    }
    let noisy = PackedRaw::from_mosaic(&noisy_m, meta.cfa, meta.black_level, meta.white_level, meta.ratio)?;
    let gt_raw = PackedRaw::from_mosaic(&gt_m, meta.cfa, meta.black_level, meta.white_level, 1.0)?;
    let rgb = read_ppm8(&path(dir, id, "gt.ppm"))?;
    if (rgb.width, rgb.height) != (gt_m.width, gt_m.height) {
        return Err(CoreError::Data(format!("sample {id}: sRGB size does not match the mosaic")));
    }
    Ok(SamplePair {
        noisy,
        gt_raw,
        gt_srgb: from_rgb8(&rgb),
        seed: meta.seed,
    })
}

/// Sample ids present in `dir`, sorted.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_meta.json"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    Ok(ids)
}

pub fn write_split(root: &Path, split: &str, pairs: &[SamplePair]) -> Result<()> {
    let dir = root.join(split);
    for (i, p) in pairs.iter().enumerate() {
        write_pair(&dir, &sample_id(i), p)?;
    }
    Ok(())
}

pub fn load_split(root: &Path, split: &str) -> Result<Vec<SamplePair>> {
    let dir = root.join(split);
    let ids = list_ids(&dir)?;
    if ids.is_empty() {
        return Err(CoreError::Data(format!("no samples in {}", dir.display())));
    }
    ids.iter().map(|id| read_pair(&dir, id)).collect()
}
