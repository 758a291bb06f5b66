//! Dual-branch sector classifiers: a shallow linear byte branch plus a deep
//! 4-stage convolutional or pooling-transformer image branch over the
//! bit-shift image, fused by a single linear head.

mod audit;
pub mod blocks;
mod bytenet;
mod checkpoint;
pub mod layers;

pub use audit::{count_params_and_macs, stage_shape_chain, AuditReport};
pub use bytenet::{bytes_to_tensor, images_to_tensor, BranchMode, ByteNetModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData, TensorBlob};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    FormatError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ByteResnet,
    ByteFormer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper512,
    Paper4096,
    Mini,
}

/// Full architectural description; every parameter count and activation
/// shape is a pure function of this struct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub preset: Preset,
    pub sector_size: usize,
    /// Intrabyte n-gram width; image is (N_s - n + 1) x 8n.
    pub ngram_n: usize,
    pub num_classes: usize,
    /// Byte-branch feature width F0.
    pub shallow_dim: usize,
    pub stage_depths: [usize; 4],
    pub stage_channels: [usize; 4],
    /// Embedding output channels C1.
    pub embed_dim: usize,
    /// Patch size P (byte_former embedding).
    pub patch_size: usize,
    /// MLP expansion ratio r (byte_former blocks).
    pub mlp_ratio: usize,
    /// Wide-convolution kernel count K (byte_resnet embedding).
    pub ngram_embed_k: usize,
    /// Token mixer form: subtract the normalized input inside the mixer
    /// (original formulation) instead of the plain pooled map.
    pub pool_subtract_input: bool,
}

impl ModelConfig {
    pub fn preset(variant: Variant, preset: Preset, num_classes: usize) -> Self {
        let mut cfg = match preset {
            Preset::Paper512 | Preset::Paper4096 => ModelConfig {
                variant,
                preset,
                sector_size: if preset == Preset::Paper4096 { 4096 } else { 512 },
                ngram_n: 16,
                num_classes,
                shallow_dim: 128,
                stage_depths: match variant {
                    Variant::ByteResnet => [2, 2, 2, 2],
                    Variant::ByteFormer => [6, 6, 18, 6],
                },
                stage_channels: match variant {
                    Variant::ByteResnet => [64, 128, 256, 512],
                    Variant::ByteFormer => [64, 128, 320, 512],
                },
                embed_dim: match variant {
                    Variant::ByteResnet => 96,
                    Variant::ByteFormer => 64,
                },
                patch_size: 8,
                mlp_ratio: 4,
                ngram_embed_k: 96,
                pool_subtract_input: false,
            },
            // n=8 keeps the mini image narrow enough for CPU-minute training
            // runs; override ngram_n for full-width experiments
            Preset::Mini => ModelConfig {
                variant,
                preset,
                sector_size: 512,
                ngram_n: 8,
                num_classes,
                shallow_dim: 32,
                stage_depths: [1, 1, 2, 1],
                stage_channels: [16, 32, 64, 128],
                embed_dim: 16,
                patch_size: 8,
                mlp_ratio: 4,
                ngram_embed_k: 32,
                pool_subtract_input: false,
            },
        };
        // the wider 8-channel input warrants a wider patch embedding
        if variant == Variant::ByteFormer && preset == Preset::Paper4096 {
            cfg.embed_dim = 96;
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sector_size != 512 && self.sector_size != 4096 {
            return Err(ModelError::InvalidConfig(format!(
                "sector_size {} (supported: 512, 4096)",
                self.sector_size
            )));
        }
        if self.ngram_n == 0 || self.ngram_n > 512 {
            return Err(ModelError::InvalidConfig(format!("ngram_n {}", self.ngram_n)));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "num_classes {}",
                self.num_classes
            )));
        }
        if self.variant == Variant::ByteFormer && self.mlp_ratio < 1 {
            return Err(ModelError::InvalidConfig("mlp_ratio must be >= 1".into()));
        }
        if self.stage_depths.contains(&0) {
            return Err(ModelError::InvalidConfig("stage depth of 0".into()));
        }
        if self.stage_channels.contains(&0) || self.embed_dim == 0 || self.shallow_dim == 0 {
            return Err(ModelError::InvalidConfig("zero-width layer".into()));
        }
        Ok(())
    }

    /// Image shape (H, W, channels) produced by the sector transform.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let per_channel = 512.min(self.sector_size);
        let h = per_channel - self.ngram_n + 1;
        let w = 8 * self.ngram_n;
        let c = self.sector_size / per_channel;
        (h, w, c)
    }
}
