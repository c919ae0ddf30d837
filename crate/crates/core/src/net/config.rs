use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blocks::BlockType;
use crate::error::{CoreError, Result};
use crate::freq::FreqConfig;
use crate::loda::LodaConfig;
use crate::raw::Cfa;

/// Skip-connection fusion used by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Multi-prior fusion with frequency-domain high-frequency modulation.
    Mpf,
    /// `conv1×1([x_enc, y_dec]) + y_dec`.
    Conv,
}

/// Network hyper-parameters. Serialized as a flat JSON object; every field
/// is optional on input and defaults to the desk configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cfa: Cfa,
    pub levels: usize,
    pub widths: Vec<usize>,
    pub blocks_per_level: usize,
    pub block_types: Vec<BlockType>,
    /// Learnable metadata modulation of the MeSA queries.
    pub metadata: bool,
    pub loda: bool,
    pub loda_patch_sizes: Vec<usize>,
    pub loda_epsilon: f64,
    pub fusion: Fusion,
    pub prior_aligned: bool,
    pub prior_rhat: bool,
    pub prior_hf: bool,
    pub fe_threshold: f64,
    pub pdb_width: usize,
    pub pdb_depth: usize,
    pub upscale: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(Cfa::Bayer)
    }
}

pub fn default_block_types(levels: usize) -> Vec<BlockType> {
    (0..levels)
        .map(|l| if l < 2 { BlockType::Lsb } else { BlockType::Ssb })
        .collect()
}

impl ModelConfig {
    /// Four levels of widths 16/32/64/128, two blocks per level.
    pub fn desk(cfa: Cfa) -> Self {
        Self {
            cfa,
            levels: 4,
            widths: vec![16, 32, 64, 128],
            blocks_per_level: 2,
            block_types: default_block_types(4),
            metadata: true,
            loda: true,
            loda_patch_sizes: LodaConfig::default().patch_sizes,
            loda_epsilon: LodaConfig::default().epsilon,
            fusion: Fusion::Mpf,
            prior_aligned: true,
            prior_rhat: true,
            prior_hf: true,
            fe_threshold: FreqConfig::default().threshold,
            pdb_width: 32,
            pdb_depth: 2,
            upscale: cfa.cell(),
            alpha: 1.0,
            beta: 1.0,
        }
    }

    /// The same network with every level built from LSBs.
    pub fn all_lsb(&self) -> Self {
        Self {
            block_types: vec![BlockType::Lsb; self.levels],
            ..self.clone()
        }
    }

    pub fn loda_config(&self) -> LodaConfig {
        LodaConfig {
            patch_sizes: self.loda_patch_sizes.clone(),
            epsilon: self.loda_epsilon,
        }
    }

    pub fn freq_config(&self) -> FreqConfig {
        FreqConfig {
            threshold: self.fe_threshold,
            min_low_halfwidth: 0,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cfa.channels()
    }

    /// Whether any stage-one prior reaches the decoder.
    pub fn priors_routed(&self) -> bool {
        self.fusion == Fusion::Mpf && (self.prior_aligned || self.prior_rhat || self.prior_hf)
    }

    /// Stage one (alignment and pre-denoising) runs when LoDA is enabled or
    /// its outputs feed the decoder.
    pub fn stage_one(&self) -> bool {
        self.loda || self.priors_routed()
    }

    /// Required divisor of the packed input extents; inputs are padded up.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(CoreError::config(f, m));
        if self.levels == 0 {
            return err("levels", "must be at least 1".into());
        }
        if self.widths.len() != self.levels {
            return err(
                "widths",
                format!("needs {} entries, got {}", self.levels, self.widths.len()),
            );
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return err("widths", "must be positive and strictly increasing".into());
        }
        if self.block_types.len() != self.levels {
            return err(
                "block_types",
                format!("needs {} entries, got {}", self.levels, self.block_types.len()),
            );
        }
        if self.blocks_per_level == 0 {
            return err("blocks_per_level", "must be at least 1".into());
        }
        if self.upscale != self.cfa.cell() {
            return err(
                "upscale",
                format!("{} mosaics need upscale {}", self.cfa.name(), self.cfa.cell()),
            );
        }
        if self.pdb_width == 0 {
            return err("pdb_width", "must be positive".into());
        }
        for (f, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return err(f, format!("must be finite and non-negative, got {v}"));
            }
        }
        self.freq_config().validate()?;
        self.loda_config().validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CoreError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Values are parsed as JSON when
    /// possible, comma-separated lists become arrays, anything else is a
    /// string. Unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CoreError::config(o, "override must look like key=value"))?;
            let key = key.trim();
            if !obj.contains_key(key) {
                return Err(CoreError::config(key, "no such config field"));
            }
            let cfa_changed = key == "cfa";
            let mut value = parse_value(raw.trim());
            if obj[key].is_array() && !value.is_array() {
                value = Value::Array(vec![value]);
            }
            obj.insert(key.to_string(), value);
            if cfa_changed && !overrides.iter().any(|s| s.as_ref().starts_with("upscale=")) {
                let cfa: Cfa = serde_json::from_value(obj["cfa"].clone())
                    .map_err(|e| CoreError::config("cfa", e.to_string()))?;
                obj.insert("upscale".into(), Value::from(cfa.cell()));
            }
            if key == "levels" && !overrides.iter().any(|s| s.as_ref().starts_with("block_types=")) {
                if let Some(l) = obj["levels"].as_u64() {
                    obj.insert(
                        "block_types".into(),
                        serde_json::to_value(default_block_types(l as usize)).expect("serializes"),
                    );
                }
            }
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| CoreError::config("override", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid_and_roundtrips() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(ModelConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn invalid_fields_are_named() {
        let bad = ModelConfig {
            widths: vec![16, 16, 64, 128],
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("`widths`"));
        let err = ModelConfig::from_json(r#"{"upscale": 3}"#).unwrap_err();
        assert!(err.to_string().contains("`upscale`"));
    }

    #[test]
    fn overrides() {
        let c = ModelConfig::default()
            .with_overrides(&["widths=8,16,32,64", "loda=false", "cfa=xtrans"])
            .unwrap();
        assert_eq!(c.widths, vec![8, 16, 32, 64]);
        assert!(!c.loda);
        assert_eq!(c.upscale, 3);
        let c = ModelConfig::default().with_overrides(&["levels=3", "widths=8,16,32"]).unwrap();
        assert_eq!(c.block_types.len(), 3);
        assert!(ModelConfig::default().with_overrides(&["depth=3"]).is_err());
        assert!(ModelConfig::default().with_overrides(&["levels"]).is_err());
    }
}
