use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Resnet,
    Xception,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Mini,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Resnet => "resnet",
            Family::Xception => "xception",
        })
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Mini => "mini",
        })
    }
}

/// Architecture description. ResNets use dense 3×3 convolutions (bottleneck
/// 1×1/3×3/1×1 blocks when `bottleneck` is set); Xceptions use 3×3
/// depthwise-separable convolutions throughout and have no stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub preset: Preset,
    pub stem_widths: Vec<usize>,
    pub stem_strides: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub convs_per_block: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub bottleneck: bool,
    pub input_channels: usize,
    /// (height, width)
    pub input_size: (usize, usize),
    pub hidden_width: usize,
}

/// Channel reduction inside a bottleneck block.
pub const BOTTLENECK_DIVISOR: usize = 4;

impl ModelSpec {
    pub fn preset(family: Family, preset: Preset) -> Self {
        match (family, preset) {
            // 3 stem convs + (3+4+5+3) bottleneck blocks × 3 = 48
            (Family::Resnet, Preset::Full) => Self {
                family,
                preset,
                stem_widths: vec![32, 32, 64],
                stem_strides: vec![2, 1, 2],
                stage_widths: vec![256, 512, 1024, 2048],
                blocks_per_stage: vec![3, 4, 5, 3],
                convs_per_block: vec![3, 3, 3, 3],
                stage_strides: vec![1, 2, 2, 2],
                bottleneck: true,
                input_channels: 3,
                input_size: (224, 224),
                hidden_width: 256,
            },
            (Family::Resnet, Preset::Mini) => Self {
                family,
                preset,
                stem_widths: vec![8, 8],
                stem_strides: vec![1, 1],
                stage_widths: vec![8, 16, 32],
                blocks_per_stage: vec![1, 1, 1],
                convs_per_block: vec![2, 2, 2],
                stage_strides: vec![1, 2, 2],
                bottleneck: false,
                input_channels: 3,
                input_size: (32, 32),
                hidden_width: 16,
            },
            // entry 4×2, middle 8×3, exit 2×2 = 36
            (Family::Xception, Preset::Full) => Self {
                family,
                preset,
                stem_widths: vec![],
                stem_strides: vec![],
                stage_widths: vec![64, 128, 256, 728, 728, 1024, 2048],
                blocks_per_stage: vec![1, 1, 1, 1, 8, 1, 1],
                convs_per_block: vec![2, 2, 2, 2, 3, 2, 2],
                stage_strides: vec![2, 2, 2, 2, 1, 2, 1],
                bottleneck: false,
                input_channels: 3,
                input_size: (224, 224),
                hidden_width: 256,
            },
            (Family::Xception, Preset::Mini) => Self {
                family,
                preset,
                stem_widths: vec![],
                stem_strides: vec![],
                stage_widths: vec![8, 16, 32, 32],
                blocks_per_stage: vec![1, 1, 1, 1],
                convs_per_block: vec![2, 2, 2, 2],
                stage_strides: vec![1, 2, 2, 1],
                bottleneck: false,
                input_channels: 3,
                input_size: (32, 32),
                hidden_width: 16,
            },
        }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.family, self.preset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.stem_widths.len() != self.stem_strides.len() {
            return bad("stem widths and strides differ in length".into());
        }
        let stages = self.stage_widths.len();
        if stages == 0 {
            return bad("at least one stage is required".into());
        }
        if [
            self.blocks_per_stage.len(),
            self.convs_per_block.len(),
            self.stage_strides.len(),
        ] != [stages; 3]
        {
            return bad("per-stage lists must all have one entry per stage".into());
        }
        if self.family == Family::Xception && !self.stem_widths.is_empty() {
            return bad("xception networks have no stem".into());
        }
        if self.family == Family::Xception && self.bottleneck {
            return bad("bottleneck blocks are a resnet option".into());
        }
        let all = [
            &self.stem_widths,
            &self.stem_strides,
            &self.stage_widths,
            &self.blocks_per_stage,
            &self.convs_per_block,
            &self.stage_strides,
        ];
        if all.iter().any(|v| v.contains(&0)) {
            return bad("widths, strides and counts must be positive".into());
        }
        if self.family == Family::Resnet {
            let required = if self.bottleneck { 3 } else { 2 };
            if self.convs_per_block.iter().any(|&c| c != required) {
                return bad(format!("resnet blocks have exactly {required} convolutions"));
            }
            if self.bottleneck && self.stage_widths.iter().any(|w| w % BOTTLENECK_DIVISOR != 0) {
                return bad(format!("bottleneck widths must be multiples of {BOTTLENECK_DIVISOR}"));
            }
        }
        if self.input_channels == 0 || self.hidden_width == 0 {
            return bad("input channels and hidden width must be positive".into());
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 {
            return bad(format!("input size {h}x{w} is empty"));
        }
        Ok(())
    }

    /// First 8 bytes of SHA-256 over the spec's JSON form.
    pub fn fingerprint(&self) -> [u8; 8] {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].try_into().expect("digest is 32 bytes")
    }
}

/// `(conv layers, dense layers)` on the main path, counted from the spec alone.
/// 1×1 projection shortcuts are not counted.
pub fn count_layers(spec: &ModelSpec) -> (usize, usize) {
    let blocks: usize = spec
        .blocks_per_stage
        .iter()
        .zip(&spec.convs_per_block)
        .map(|(b, c)| b * c)
        .sum();
    (spec.stem_widths.len() + blocks, 2)
}
