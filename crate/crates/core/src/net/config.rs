use serde::{Deserialize, Serialize};

use crate::block::FeedForward;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Channel width `C` of the first level; level `k` runs at `2^k·C`.
    pub base_channels: usize,
    /// Number of encoder/decoder levels `D`.
    pub depth: usize,
    /// Attention window side `M`.
    pub window: usize,
    /// Transformer blocks per encoder, bottleneck, and decoder stack.
    pub blocks_per_level: usize,
    /// Channels per attention head.
    pub head_dim: usize,
    /// Hidden-width multiplier of the feed-forward sublayer.
    pub lipe_expansion: usize,
    /// Convolutional feed-forward (`false`: plain MLP).
    pub use_lipe: bool,
    /// Nested dense skip pathways (`false`: plain U-shaped skips).
    pub use_nested: bool,
    /// Decoder channel projection after the blocks instead of before.
    pub projection_after: bool,
    /// Depthwise 3×3 conv inside the feed-forward.
    pub depthwise_lipe: bool,
    /// One relative position bias table shared by all heads.
    pub shared_bias_table: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 4,
            window: 8,
            blocks_per_level: 2,
            head_dim: 16,
            lipe_expansion: 2,
            use_lipe: true,
            use_nested: true,
            projection_after: false,
            depthwise_lipe: false,
            shared_bias_table: false,
        }
    }
}

impl NetConfig {
    /// Small preset that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            depth: 2,
            window: 4,
            blocks_per_level: 1,
            head_dim: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_channels", self.base_channels),
            ("depth", self.depth),
            ("window", self.window),
            ("blocks_per_level", self.blocks_per_level),
            ("head_dim", self.head_dim),
            ("lipe_expansion", self.lipe_expansion),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if self.depth > 8 {
            return Err(Error::Config(format!("depth {} is larger than supported (8)", self.depth)));
        }
        if !self.base_channels.is_multiple_of(self.head_dim) {
            return Err(Error::Config(format!(
                "base_channels {} must be divisible by head_dim {}",
                self.base_channels, self.head_dim
            )));
        }
        Ok(())
    }

    /// Channel width at level `k`.
    pub fn channels_at(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Spatial extents must be multiples of this (inputs are padded).
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn feed_forward(&self) -> FeedForward {
        if self.use_lipe {
            FeedForward::LiPe {
                expansion: self.lipe_expansion,
                depthwise: self.depthwise_lipe,
            }
        } else {
            FeedForward::Mlp {
                expansion: self.lipe_expansion,
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("bad net config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
