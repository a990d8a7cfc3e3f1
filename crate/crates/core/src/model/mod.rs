//! Scale-aware masked autoencoder.
//!
//! Forward: visible tokens are embedded (dual path for coarse tokens), run
//! through a pre-norm transformer encoder, projected to the decoder width,
//! scattered back into the full canonical sequence with a shared mask token,
//! tagged with decoder positions and a per-scale embedding, decoded, and the
//! masked tokens are reconstructed by one head per scale. The loss normalizes
//! each scale by `|M_s| · V_s`.
//!
//! Every stage has a hand-written reverse pass; [`backward`] returns exact
//! gradients of [`LossReport::total`] with respect to every parameter.

mod block;
mod checkpoint;
mod embed;
mod forward;
pub mod ops;
mod params;
mod posenc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::TokenizerError;

pub use block::{block_backward, block_forward, BlockCache};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use embed::{apply_phi, downsample_patch, embed_token, sub_patches};
pub use forward::{
    backward, backward_into, decoder_inputs, encoder_forward, forward_loss, forward_with_tape, patch_normalize,
    reconstruct, scale_aware_loss, Sample, Tape, PATCH_NORM_VAR_FLOOR,
};
pub use params::{BlockParams, LinearParams, ModelParams, NormParams, ParamLayout, TensorEntry, TensorRef};
pub use posenc::{positional_embedding, sinusoid_3d};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("positional embedding needs at least 6 channels, got {0}")]
    BadDim(usize),
    #[error("expected {expected} voxels, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("encoder needs at least one visible token")]
    EmptyInput,
    #[error("{got} latents for {expected} visible tokens")]
    CountMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub num_scales: usize,
    pub base_edge: usize,
    pub frames: usize,
    pub mask_ratio: f64,
    pub patch_norm_targets: bool,
    pub mlp_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale configuration used for training runs and gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            embed_dim: 16,
            enc_depth: 2,
            enc_heads: 2,
            dec_dim: 64,
            dec_depth: 1,
            dec_heads: 4,
            num_scales: 2,
            base_edge: 4,
            frames: 4,
            mask_ratio: 0.75,
            patch_norm_targets: false,
            mlp_ratio: 4.0,
        }
    }

    /// Full-size pretraining hyperparameters (T = 40 frames per block).
    pub fn full_size() -> Self {
        ModelConfig {
            embed_dim: 768,
            enc_depth: 12,
            enc_heads: 12,
            dec_dim: 512,
            dec_depth: 8,
            dec_heads: 16,
            num_scales: 2,
            base_edge: 4,
            frames: 40,
            mask_ratio: 0.75,
            patch_norm_targets: false,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.enc_heads == 0 || !self.embed_dim.is_multiple_of(self.enc_heads) {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.enc_heads));
        }
        if self.dec_heads == 0 || !self.dec_dim.is_multiple_of(self.dec_heads) {
            return bad(format!("dec_dim {} not divisible by {} heads", self.dec_dim, self.dec_heads));
        }
        if self.embed_dim < 6 || self.dec_dim < 6 {
            return bad("embed_dim and dec_dim must be at least 6".into());
        }
        if self.num_scales == 0 || self.num_scales > 6 {
            return bad(format!("num_scales {} out of range", self.num_scales));
        }
        if self.base_edge == 0 || self.frames == 0 {
            return bad("base_edge and frames must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn mlp_hidden(&self, dim: usize) -> usize {
        ((dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Length of a flattened base patch, `T · base_edge³`.
    pub fn patch_len(&self) -> usize {
        self.frames * self.base_edge.pow(3)
    }

    /// `V_s`, spatial voxels of a scale-`s` token.
    pub fn voxels(&self, scale: usize) -> usize {
        (self.base_edge << scale).pow(3)
    }

    pub fn coarse_edge(&self) -> usize {
        self.base_edge << (self.num_scales - 1)
    }
}

/// Loss value with its per-scale decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub per_scale: Vec<f64>,
    /// `|M_s|`.
    pub masked_counts: Vec<usize>,
    /// `V_s`.
    pub voxel_volumes: Vec<usize>,
}
