use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of feature taps / style-code layers.
pub const NUM_LAYERS: usize = 4;

/// Architecture sizes shared by every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channel width of the first backbone block; later blocks use 2×, 4×, 8×.
    pub backbone_width: usize,
    /// Style-code dimension per tap layer.
    pub code_dims: [usize; NUM_LAYERS],
    /// Hidden width of each generator modulation head.
    pub modulation_hidden: usize,
    /// Channel width of the first discriminator layer.
    pub discriminator_width: usize,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// VGG-19 widths with 512/1024/2048/2048-dimensional style codes.
    pub fn full() -> Self {
        Self {
            backbone_width: 64,
            code_dims: [512, 1024, 2048, 2048],
            modulation_hidden: 256,
            discriminator_width: 64,
            seed: 0,
        }
    }

    /// An eighth of the full widths, small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            backbone_width: 8,
            code_dims: [32, 64, 128, 128],
            modulation_hidden: 32,
            discriminator_width: 8,
            seed: 0,
        }
    }

    /// Channel counts of the four feature taps.
    pub fn tap_channels(&self) -> [usize; NUM_LAYERS] {
        let w = self.backbone_width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_width == 0
            || self.modulation_hidden == 0
            || self.discriminator_width == 0
            || self.code_dims.contains(&0)
        {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}
