//! Encoder–decoder segmentation networks: a dual-encoder variant that takes
//! a frame plus a 3-channel motion cue, and a frame-only variant.

mod net;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use net::{argmax_masks, build_encoder, Encoder, ForwardOutput, Segmenter};
pub use weights::{
    build_header, decode_weights, encode_weights, load_weights, save_weights, Header,
    ModelWeights, TensorEntry, WeightTensor, WEIGHTS_MAGIC,
};

/// Which motion cue, if any, feeds the second encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DualDiff,
    DualFlow,
    Single,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::DualDiff, Variant::DualFlow, Variant::Single];

    pub fn is_dual(self) -> bool {
        !matches!(self, Variant::Single)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DualDiff => "dual_diff",
            Variant::DualFlow => "dual_flow",
            Variant::Single => "single",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::config("variant", format!("unknown variant `{s}` (dual_diff, dual_flow, single)"))
            })
    }
}

/// Full-width ResNet-50 stage output channels.
pub const STAGE_CHANNELS: [usize; 4] = [256, 512, 1024, 2048];
pub const STEM_CHANNELS: usize = 64;
/// Full-width decoder stage channels, coarsest first.
pub const DECODER_CHANNELS: [usize; 5] = [256, 128, 64, 64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub width_mult: f64,
    pub blocks_per_stage: [usize; 4],
    pub bottleneck_channels: usize,
    pub num_classes: usize,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width_mult: 1.0,
            blocks_per_stage: [3, 4, 6, 3],
            bottleneck_channels: 1024,
            num_classes: 2,
            variant: Variant::DualDiff,
        }
    }
}

impl NetConfig {
    /// Desk-scale configuration: quarter width, one block per stage.
    pub fn toy() -> Self {
        NetConfig {
            width_mult: 0.25,
            blocks_per_stage: [1, 1, 1, 1],
            ..Default::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// `base · width_mult`, rounded.
    pub fn scaled(&self, base: usize) -> usize {
        (base as f64 * self.width_mult).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(Error::config("width_mult", "must be a positive finite number"));
        }
        if let Some(i) = self.blocks_per_stage.iter().position(|&b| b == 0) {
            return Err(Error::config(
                "blocks_per_stage",
                format!("stage {} has no blocks", i + 1),
            ));
        }
        if self.bottleneck_channels == 0 {
            return Err(Error::config("bottleneck_channels", "must be at least 1"));
        }
        if self.num_classes != 2 {
            return Err(Error::config("num_classes", "only 2 classes are supported"));
        }
        let smallest = [STEM_CHANNELS, self.bottleneck_channels, DECODER_CHANNELS[4]]
            .into_iter()
            .chain(STAGE_CHANNELS.map(|c| c / 4))
            .min()
            .expect("nonempty");
        if self.scaled(smallest) == 0 {
            return Err(Error::config(
                "width_mult",
                format!(
                    "{} scales {smallest} channels to zero",
                    self.width_mult
                ),
            ));
        }
        Ok(())
    }
}
