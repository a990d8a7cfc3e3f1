//! Mixed-scale tokenization: background pruning, complexity gating, token
//! layouts and masking plans.
//!
//! A token is an axis-aligned cube of edge `base_edge · 2^s` (scale `s`,
//! `0` = finest) spanning every frame. Its origin is a multiple of its own
//! edge. Layouts list tokens in canonical order: scale descending, then
//! z, y, x of the origin.

mod background;
mod mask;
mod partition;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{self, ComplexityError, ComplexityMap};
use crate::volume::{crop_or_pad, zscore_global, Volume4D, VolumeError};

pub use background::{prune_background, ForegroundMask};
pub use mask::{sample_mask, sample_mask_with, MaskPlan, MaskStrategy};
pub use partition::{partition, token_count_report, TokenCountReport};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("token at {origin:?} (edge {edge}) lies outside volume {dims:?}")]
    OutOfBounds {
        origin: [usize; 3],
        edge: usize,
        dims: [usize; 3],
    },
    #[error("bad tokenizer config: {0}")]
    BadConfig(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TokenizerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRec {
    #[serde(rename = "o")]
    pub origin: [usize; 3],
    #[serde(rename = "s")]
    pub scale: usize,
    #[serde(skip)]
    pub linear_index: usize,
}

impl TokenRec {
    #[inline]
    pub fn edge(&self, base_edge: usize) -> usize {
        base_edge << self.scale
    }

    /// Voxel-coordinate centre of the token cube.
    pub fn center(&self, base_edge: usize) -> [f64; 3] {
        let half = (self.edge(base_edge) as f64 - 1.0) / 2.0;
        self.origin.map(|o| o as f64 + half)
    }

    /// Canonical ordering key: scale descending, then z, y, x.
    pub fn order_key(&self) -> (std::cmp::Reverse<usize>, usize, usize, usize) {
        (std::cmp::Reverse(self.scale), self.origin[2], self.origin[1], self.origin[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub tau: f64,
    pub base_edge: usize,
    pub num_scales: usize,
    pub bg_thresh: f64,
    /// Re-test each sub-patch of a subdivided cell against the background
    /// threshold and drop the ones that fail.
    pub retest_children: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            tau: 0.25,
            base_edge: 4,
            num_scales: 2,
            bg_thresh: 1e-3,
            retest_children: true,
        }
    }
}

impl TokenizerConfig {
    pub fn coarse_edge(&self) -> usize {
        self.base_edge << (self.num_scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_edge == 0 || self.num_scales == 0 || self.num_scales > 8 {
            return Err(TokenizerError::BadConfig(format!(
                "base_edge {} / scales {} out of range",
                self.base_edge, self.num_scales
            )));
        }
        if self.tau.is_nan() || self.bg_thresh.is_nan() {
            return Err(TokenizerError::BadConfig("tau and bg_thresh must be numbers".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub tokens: Vec<TokenRec>,
    pub base_edge: usize,
    pub num_scales: usize,
    pub volume_dims: [usize; 4],
    pub tau: f64,
    pub bg_thresh: f64,
}

#[derive(Serialize)]
struct LayoutJson<'a> {
    dims: [usize; 4],
    base_edge: usize,
    #[serde(rename = "K")]
    k: usize,
    tau: f64,
    bg_thresh: f64,
    tokens: &'a [TokenRec],
}

#[derive(Deserialize)]
struct LayoutJsonOwned {
    dims: [usize; 4],
    base_edge: usize,
    #[serde(rename = "K")]
    k: usize,
    tau: f64,
    bg_thresh: f64,
    tokens: Vec<TokenRec>,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Spatial voxel count `V_s` of a scale-`s` token.
    pub fn voxels_per_token(&self, scale: usize) -> usize {
        (self.base_edge << scale).pow(3)
    }

    pub fn frames(&self) -> usize {
        self.volume_dims[3]
    }

    /// Builds a layout from arbitrary tokens, sorting them canonically and
    /// assigning linear indices.
    pub fn from_tokens(
        mut tokens: Vec<TokenRec>,
        base_edge: usize,
        num_scales: usize,
        volume_dims: [usize; 4],
        tau: f64,
        bg_thresh: f64,
    ) -> Self {
        tokens.sort_by_key(|t| t.order_key());
        for (i, t) in tokens.iter_mut().enumerate() {
            t.linear_index = i;
        }
        TokenLayout {
            tokens,
            base_edge,
            num_scales,
            volume_dims,
            tau,
            bg_thresh,
        }
    }

    pub fn to_json(&self) -> String {
        let tau = if self.tau.is_finite() { self.tau } else { f64::MAX };
        serde_json::to_string(&LayoutJson {
            dims: self.volume_dims,
            base_edge: self.base_edge,
            k: self.num_scales,
            tau,
            bg_thresh: self.bg_thresh,
            tokens: &self.tokens,
        })
        .expect("layout serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let j: LayoutJsonOwned = serde_json::from_str(s)?;
        Ok(Self::from_tokens(j.tokens, j.base_edge, j.k, j.dims, j.tau, j.bg_thresh))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Gathers a token's voxels in (t, z, y, x) order, x fastest.
pub fn extract_token_voxels(vol: &Volume4D, tok: &TokenRec, base_edge: usize) -> Result<Vec<f32>> {
    let edge = tok.edge(base_edge);
    let dims = vol.spatial_dims();
    if (0..3).any(|a| tok.origin[a] + edge > dims[a]) {
        return Err(TokenizerError::OutOfBounds {
            origin: tok.origin,
            edge,
            dims,
        });
    }
    let [h, w, _] = dims;
    let [ox, oy, oz] = tok.origin;
    let mut out = Vec::with_capacity(vol.frames() * edge * edge * edge);
    for t in 0..vol.frames() {
        let f = vol.frame(t);
        for z in oz..oz + edge {
            for y in oy..oy + edge {
                let row = (z * w + y) * h;
                out.extend_from_slice(&f[row + ox..row + ox + edge]);
            }
        }
    }
    Ok(out)
}

/// Everything the model needs from one input volume.
#[derive(Debug, Clone)]
pub struct Tokenized {
    /// Padded, globally z-scored volume; token voxels are read from here.
    pub normalized: Volume4D,
    pub complexity: ComplexityMap,
    pub foreground: ForegroundMask,
    pub layout: TokenLayout,
}

/// Pads to a multiple of the coarse edge, prunes background on the raw
/// intensities, z-scores, scores variance and partitions.
pub fn tokenize_volume(vol: &Volume4D, cfg: &TokenizerConfig) -> Result<Tokenized> {
    cfg.validate()?;
    let e = cfg.coarse_edge();
    let sd = vol.spatial_dims();
    let target = sd.map(|d| d.div_ceil(e) * e);
    let padded = if target == sd { vol.clone() } else { crop_or_pad(vol, target) };

    let foreground = prune_background(&padded, e, cfg.bg_thresh)?;
    let normalized = match zscore_global(&padded) {
        Ok(z) => z,
        // Constant input: every variance is zero either way.
        Err(VolumeError::DegenerateVolume) => Volume4D::filled(padded.dims(), 0.0),
        Err(err) => return Err(err.into()),
    };
    let complexity = complexity::variance_map(&normalized, e)?;
    let layout = partition(&complexity, &foreground, cfg, Some(&normalized))?;
    Ok(Tokenized {
        normalized,
        complexity,
        foreground,
        layout,
    })
}
