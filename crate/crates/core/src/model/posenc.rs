use crate::tokenizer::TokenRec;

use super::{ModelError, Result};

/// Fixed 3D sinusoidal code of a point.
///
/// Each axis gets `2·⌊dim/6⌋` channels holding interleaved
/// `sin(c·ω_j), cos(c·ω_j)` with `ω_j = 10000^(-j/⌊dim/6⌋)`; axes are laid out
/// x, y, z. Channels left over when `dim` is not a multiple of 6 are zero.
pub fn sinusoid_3d(center: [f64; 3], dim: usize) -> Result<Vec<f64>> {
    if dim < 6 {
        return Err(ModelError::BadDim(dim));
    }
    let freqs = dim / 6;
    let per_axis = 2 * freqs;
    let mut out = vec![0.0; dim];
    for (a, &c) in center.iter().enumerate() {
        for j in 0..freqs {
            let w = 10000f64.powf(-(j as f64) / freqs as f64);
            out[a * per_axis + 2 * j] = (c * w).sin();
            out[a * per_axis + 2 * j + 1] = (c * w).cos();
        }
    }
    Ok(out)
}

/// Sinusoid at the token's voxel-space centre. Depends on the centre only;
/// scale information enters the model elsewhere.
pub fn positional_embedding(tok: &TokenRec, base_edge: usize, dim: usize) -> Result<Vec<f64>> {
    sinusoid_3d(tok.center(base_edge), dim)
}
