//! Named VQ configurations.
//!
//! The five built-ins are also shipped as TOML under `configs/`; any file in
//! the same format defines a custom `VQ<x,y,z>` variant.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Sharing, VQConfig};
use crate::dataflow::OpKind;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset '{0}' (built-ins: quip4, aqlm3, gptvq2, cq4, cq2)")]
    Unknown(String),
    #[error("cannot parse preset: {0}")]
    Parse(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the preset compresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Weight,
    KvCache,
}

/// Published shuffle counts per op kind, where known.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedShuffles {
    pub gemm: Option<usize>,
    pub gemv: Option<usize>,
    pub attention_decode: Option<usize>,
}

impl ExpectedShuffles {
    pub fn get(&self, op: OpKind) -> Option<usize> {
        match op {
            OpKind::Gemm => self.gemm,
            OpKind::Gemv => self.gemv,
            OpKind::AttentionDecode => self.attention_decode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub display_name: String,
    pub config: VQConfig,
    pub target: Target,
    /// Entries a single dequantization can touch, when smaller than the
    /// codebook (lattice codebooks decode from a small subset).
    #[serde(default)]
    pub working_set: Option<usize>,
    /// Codebook bytes one thread block needs under the naive tiling.
    pub codebook_bytes_per_block: usize,
    #[serde(default)]
    pub expected_shuffles: ExpectedShuffles,
}

impl Preset {
    pub fn sharing(&self) -> Sharing {
        self.config.sharing
    }

    /// Entries that a greedy all-shared cache tries to hold.
    pub fn resident_entries(&self) -> usize {
        self.working_set
            .unwrap_or(self.config.entries())
            .min(self.config.entries())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PresetError> {
        let mut preset: Preset =
            toml::from_str(text).map_err(|e| PresetError::Parse(e.to_string()))?;
        preset.config.validate()?;
        if preset.display_name.is_empty() {
            preset.display_name = preset.name.clone();
        }
        Ok(preset)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("presets always serialize")
    }
}

pub const BUILTIN_NAMES: [&str; 5] = ["quip4", "aqlm3", "gptvq2", "cq4", "cq2"];

/// One of the built-in presets, by name (case-insensitive, `-`/`_`/`#`
/// ignored so "QuiP#-4" and "aqlm_3" work too).
pub fn load_preset(name: &str) -> Result<Preset, PresetError> {
    let key: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    let whole = Sharing::WholeTensor;
    let shuffles = |gemm, gemv, attention_decode| ExpectedShuffles {
        gemm,
        gemv,
        attention_decode,
    };
    let preset = match key.as_str() {
        "quip4" => Preset {
            name: "quip4".into(),
            display_name: "QuiP#-4".into(),
            config: VQConfig::new(8, 16, 2, whole)?,
            target: Target::Weight,
            working_set: Some(256),
            codebook_bytes_per_block: 2 << 10,
            expected_shuffles: shuffles(Some(3), Some(7), None),
        },
        "aqlm3" => Preset {
            name: "aqlm3".into(),
            display_name: "AQLM-3".into(),
            config: VQConfig::new(8, 12, 2, whole)?,
            target: Target::Weight,
            working_set: None,
            codebook_bytes_per_block: 128 << 10,
            expected_shuffles: shuffles(Some(3), Some(7), None),
        },
        "gptvq2" => Preset {
            name: "gptvq2".into(),
            display_name: "GPTVQ-2".into(),
            config: VQConfig::new(
                4,
                8,
                1,
                Sharing::PerTile {
                    rows: 256,
                    cols: 256,
                },
            )?,
            target: Target::Weight,
            working_set: None,
            codebook_bytes_per_block: 32 << 10,
            expected_shuffles: shuffles(Some(1), Some(3), None),
        },
        "cq4" => Preset {
            name: "cq4".into(),
            display_name: "CQ-4".into(),
            config: VQConfig::new(2, 8, 1, Sharing::ChannelGroup { group_width: 2 })?,
            target: Target::KvCache,
            working_set: None,
            // 64 channel groups of a 128-wide head, 1 KB each.
            codebook_bytes_per_block: 64 << 10,
            expected_shuffles: shuffles(None, None, None),
        },
        "cq2" => Preset {
            name: "cq2".into(),
            display_name: "CQ-2".into(),
            config: VQConfig::new(4, 8, 1, Sharing::ChannelGroup { group_width: 4 })?,
            target: Target::KvCache,
            working_set: None,
            codebook_bytes_per_block: 64 << 10,
            expected_shuffles: shuffles(None, None, Some(3)),
        },
        _ => return Err(PresetError::Unknown(name.to_string())),
    };
    Ok(preset)
}

pub fn builtin_presets() -> Vec<Preset> {
    BUILTIN_NAMES
        .iter()
        .map(|n| load_preset(n).expect("built-in preset"))
        .collect()
}

pub fn load_preset_file(path: &Path) -> Result<Preset, PresetError> {
    Preset::from_toml_str(&std::fs::read_to_string(path)?)
}

/// A built-in name, or a path to a preset TOML file.
pub fn resolve_preset(name_or_path: &str) -> Result<Preset, PresetError> {
    let path = Path::new(name_or_path);
    if name_or_path.ends_with(".toml") || path.is_file() {
        return load_preset_file(path);
    }
    load_preset(name_or_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::compression_ratio;

    #[test]
    fn builtins_match_published_configs() {
        let expect = [
            ("quip4", 8, 65536, 2, 0.25),
            ("aqlm3", 8, 4096, 2, 0.1875),
            ("gptvq2", 4, 256, 1, 0.125),
            ("cq4", 2, 256, 1, 0.25),
            ("cq2", 4, 256, 1, 0.125),
        ];
        for (name, vs, entries, residuals, ratio) in expect {
            let p = load_preset(name).unwrap();
            assert_eq!(p.config.vector_size, vs, "{name}");
            assert_eq!(p.config.entries(), entries, "{name}");
            assert_eq!(p.config.residuals, residuals, "{name}");
            assert_eq!(compression_ratio(&p.config), ratio, "{name}");
        }
    }

    #[test]
    fn names_are_forgiving() {
        assert_eq!(load_preset("QuiP#-4").unwrap().name, "quip4");
        assert_eq!(load_preset("AQLM_3").unwrap().name, "aqlm3");
        assert!(matches!(load_preset("vq9"), Err(PresetError::Unknown(_))));
    }

    #[test]
    fn metadata() {
        let cq2 = load_preset("cq2").unwrap();
        assert_eq!(cq2.target, Target::KvCache);
        assert_eq!(cq2.sharing(), Sharing::ChannelGroup { group_width: 4 });
        assert_eq!(
            load_preset("aqlm3").unwrap().codebook_bytes_per_block,
            128 << 10
        );
        assert_eq!(
            load_preset("gptvq2").unwrap().sharing(),
            Sharing::PerTile {
                rows: 256,
                cols: 256
            }
        );
        let quip = load_preset("quip4").unwrap();
        assert_eq!(quip.working_set, Some(256));
        assert_eq!(quip.resident_entries(), 256);
        assert_eq!(cq2.resident_entries(), 256);
    }

    #[test]
    fn toml_round_trip() {
        for p in builtin_presets() {
            let back = Preset::from_toml_str(&p.to_toml_string()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn custom_preset_from_toml() {
        let text = r#"
            name = "vq16"
            target = "weight"
            codebook_bytes_per_block = 4096
            [config]
            vector_size = 16
            log2_entries = 10
            residuals = 3
            [config.sharing]
            kind = "whole_tensor"
        "#;
        let p = Preset::from_toml_str(text).unwrap();
        assert_eq!(p.display_name, "vq16");
        assert_eq!(compression_ratio(&p.config), 30.0 / 256.0);
        let bad = text.replace("vector_size = 16", "vector_size = 5");
        assert!(Preset::from_toml_str(&bad).is_err());
    }
}
