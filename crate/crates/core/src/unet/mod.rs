//! Residual U-Net that predicts the limited-angle artifact image of an FBP
//! slice, trained with Adam on an ℓ₂ loss. Everything is implemented here in
//! double precision, including the reverse pass.

mod model;
pub mod ops;
mod tensor;
mod train;

pub use model::{
    backward, forward_eval, forward_train, BatchNorm, Block, Conv, Mode, ParamMut, SqueezeExcite, Tape, UNet,
    UNetParams,
};
pub use tensor::Tensor;
pub use train::{infer, learning_rate, train, train_observed, Adam, LossRecord, TrainConfig};

use crate::error::bail;
use crate::grid::Slice;
use crate::Result;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct UNetConfig {
    /// Number of 2× down-sampling steps.
    pub depth: usize,
    /// Channels at the first level; doubles per level.
    pub base_channels: usize,
    /// Squeeze-excitation reduction ratio, capped at the channel count.
    pub se_reduction: usize,
    /// Square input side in pixels.
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 3, base_channels: 8, se_reduction: 8, input_size: 64 }
    }
}

impl UNetConfig {
    pub fn paper_scale() -> Self {
        Self { depth: 4, base_channels: 32, se_reduction: 8, input_size: 256 }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            bail!(InvalidConfig, "network depth must lie in 1..=8, got {}", self.depth);
        }
        if self.base_channels == 0 || self.se_reduction == 0 {
            bail!(InvalidConfig, "base channels and SE reduction must be positive");
        }
        let f = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % f != 0 {
            bail!(InvalidConfig, "input size {} is not divisible by 2^{} = {f}", self.input_size, self.depth);
        }
        for l in 0..=self.depth {
            let c = self.channels(l);
            if c % self.se_reduction.min(c) != 0 {
                bail!(InvalidConfig, "{c} channels are not divisible by SE reduction {}", self.se_reduction);
            }
        }
        Ok(())
    }
}

/// Inputs are divided by `scale` so they fall in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NormalizationSpec {
    /// μm⁻¹
    pub scale: f64,
}

impl NormalizationSpec {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            bail!(InvalidConfig, "normalization scale must be positive, got {scale}");
        }
        Ok(Self { scale })
    }

    /// Largest absolute value over a set of images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Slice>) -> Result<Self> {
        let m = images.into_iter().flat_map(|s| s.data.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(m)
    }
}
