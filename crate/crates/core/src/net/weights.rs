//! Weight files: `model.manifest.json` describing every tensor and a
//! `model.blob` of little-endian `f32` values in manifest order.

use std::fs;
use std::path::Path;

use hima_tensor::serialize::{self, BlobEntry};
use hima_tensor::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{CoreError, Result};

pub const MANIFEST_FILE: &str = "model.manifest.json";
pub const BLOB_FILE: &str = "model.blob";
const FORMAT: &str = "hima-weights";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Colour order of the packed input channels, e.g. `RGGB`.
    pub cfa_order: String,
    pub dtype: String,
    pub blob_bytes: usize,
    pub sha256: String,
    pub param_count: usize,
    pub params: Vec<BlobEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cfa_order(cfg: &ModelConfig) -> String {
    let cell = cfg.cfa.cell();
    (0..cell * cell)
        .map(|k| ["R", "G", "B"][cfg.cfa.color_at(k / cell, k % cell)])
        .collect()
}

/// Writes the manifest and blob into `dir`, creating it if needed.
pub fn save<T: Real>(model: &Model<T>, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let cast = model.params.cast::<f32>();
    let (blob, params) = serialize::encode(cast.names().iter().map(String::as_str).zip(cast.tensors()));
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        config: model.config.clone(),
        cfa_order: cfa_order(&model.config),
        dtype: "f32".into(),
        blob_bytes: blob.len(),
        sha256: hex(&Sha256::digest(&blob)),
        param_count: cast.count(),
        params,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| CoreError::io(&blob_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&man_path, text).map_err(|e| CoreError::io(&man_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CoreError::Weights(format!("manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(CoreError::Weights(format!("unexpected format `{}`", m.format)));
    }
    Ok(m)
}

/// Loads a model; any checksum, size or shape mismatch is an error and no
/// model is returned.
pub fn load<T: Real>(dir: &Path) -> Result<Model<T>> {
    let m = read_manifest(dir)?;
    let path = dir.join(BLOB_FILE);
    let blob = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    if blob.len() != m.blob_bytes {
        return Err(CoreError::Weights(format!(
            "blob has {} bytes, manifest records {}",
            blob.len(),
            m.blob_bytes
        )));
    }
    let digest = hex(&Sha256::digest(&blob));
    if digest != m.sha256 {
        return Err(CoreError::Weights("blob checksum mismatch".into()));
    }
    let tensors = serialize::decode::<f32>(&blob, &m.params)?;
    let named = m.params.iter().map(|e| e.name.clone()).zip(tensors).collect();
    let mut model = Model::<f32>::build(&m.config, 0)?;
    model.params.load(named)?;
    Ok(model.cast())
}
