use serde::Serialize;

use crate::complexity::{cube_variance, ComplexityMap};
use crate::volume::Volume4D;

use super::{ForegroundMask, Result, TokenLayout, TokenRec, TokenizerConfig, TokenizerError};

/// Coarse-to-fine partition of the foreground.
///
/// A foreground coarse cell scoring below `tau` becomes one token at scale
/// `K-1`; otherwise it splits into its 2³ children. Children that fail the
/// background test are dropped when `retest_children` is set. With `K > 2`
/// intermediate children are re-gated on their own variance, read from
/// `normalized` (required in that case).
pub fn partition(
    cmap: &ComplexityMap,
    fg: &ForegroundMask,
    cfg: &TokenizerConfig,
    normalized: Option<&Volume4D>,
) -> Result<TokenLayout> {
    cfg.validate()?;
    let e = cfg.coarse_edge();
    if cmap.coarse_edge != e || fg.coarse_edge != e {
        return Err(TokenizerError::GridMismatch(format!(
            "coarse edge: map {} / foreground {} / config {e}",
            cmap.coarse_edge, fg.coarse_edge
        )));
    }
    if cmap.grid_dims != fg.grid_dims {
        return Err(TokenizerError::GridMismatch(format!(
            "map grid {:?} vs foreground grid {:?}",
            cmap.grid_dims, fg.grid_dims
        )));
    }
    if let Some(v) = normalized {
        if v.spatial_dims() != fg.spatial_dims() {
            return Err(TokenizerError::GridMismatch(format!(
                "volume {:?} vs foreground {:?}",
                v.spatial_dims(),
                fg.spatial_dims()
            )));
        }
    } else if cfg.num_scales > 2 {
        return Err(TokenizerError::BadConfig(
            "more than two scales needs the normalized volume for per-level gating".into(),
        ));
    }

    let top = cfg.num_scales - 1;
    let mut tokens = Vec::new();
    let [gx, gy, gz] = cmap.grid_dims;
    for z in 0..gz {
        for y in 0..gy {
            for x in 0..gx {
                if !fg.cell(x, y, z) {
                    continue;
                }
                let origin = [x * e, y * e, z * e];
                if top == 0 || cmap.score(x, y, z) < cfg.tau {
                    tokens.push(TokenRec {
                        origin,
                        scale: top,
                        linear_index: 0,
                    });
                } else {
                    subdivide(origin, top, fg, cfg, normalized, &mut tokens);
                }
            }
        }
    }

    let frames = normalized.map_or(fg.frames(), |v| v.frames());
    let [h, w, d] = fg.spatial_dims();
    Ok(TokenLayout::from_tokens(
        tokens,
        cfg.base_edge,
        cfg.num_scales,
        [h, w, d, frames],
        cfg.tau,
        cfg.bg_thresh,
    ))
}

fn subdivide(
    origin: [usize; 3],
    scale: usize,
    fg: &ForegroundMask,
    cfg: &TokenizerConfig,
    normalized: Option<&Volume4D>,
    out: &mut Vec<TokenRec>,
) {
    let child_scale = scale - 1;
    let ce = cfg.base_edge << child_scale;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let o = [origin[0] + dx * ce, origin[1] + dy * ce, origin[2] + dz * ce];
                if cfg.retest_children && !fg.is_foreground(o, ce) {
                    continue;
                }
                let keep = child_scale == 0
                    || normalized.is_some_and(|v| cube_variance(v, o, ce) < cfg.tau);
                if keep {
                    out.push(TokenRec {
                        origin: o,
                        scale: child_scale,
                        linear_index: 0,
                    });
                } else {
                    subdivide(o, child_scale, fg, cfg, normalized, out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenCountReport {
    pub per_scale: Vec<usize>,
    pub total: usize,
    /// Foreground coarse cells.
    pub foreground_cells: usize,
    /// Fine tokens needed to tile the foreground coarse cells uniformly.
    pub uniform_fine_total: usize,
    /// Fine tokens needed to tile the whole volume uniformly.
    pub full_fine_total: usize,
    /// `total / full_fine_total`.
    pub reduction_ratio: f64,
}

impl TokenCountReport {
    /// `total / uniform_fine_total`: the saving within the foreground.
    pub fn foreground_ratio(&self) -> f64 {
        if self.uniform_fine_total == 0 {
            0.0
        } else {
            self.total as f64 / self.uniform_fine_total as f64
        }
    }

    /// The stable one-line report, `tokens=<N> fine=<n0> coarse=<n1> ...`.
    pub fn summary_line(&self) -> String {
        let coarse = self.per_scale.last().copied().unwrap_or(0);
        let fine = if self.per_scale.len() > 1 { self.per_scale[0] } else { 0 };
        format!(
            "tokens={} fine={} coarse={} uniform_fine={} reduction={}",
            self.total, fine, coarse, self.uniform_fine_total, self.reduction_ratio
        )
    }
}

pub fn token_count_report(layout: &TokenLayout) -> TokenCountReport {
    let k = layout.num_scales;
    let mut per_scale = vec![0usize; k];
    let coarse_edge = layout.base_edge << (k - 1);
    let mut cells: Vec<[usize; 3]> = Vec::new();
    for t in &layout.tokens {
        per_scale[t.scale] += 1;
        cells.push(t.origin.map(|o| o / coarse_edge));
    }
    cells.sort_unstable();
    cells.dedup();
    let per_cell = 1usize << (3 * (k - 1));
    let [h, w, d, _] = layout.volume_dims;
    let b = layout.base_edge;
    let full_fine_total = (h / b) * (w / b) * (d / b);
    let total = layout.tokens.len();
    TokenCountReport {
        total,
        foreground_cells: cells.len(),
        uniform_fine_total: cells.len() * per_cell,
        full_fine_total,
        reduction_ratio: if full_fine_total == 0 {
            0.0
        } else {
            total as f64 / full_fine_total as f64
        },
        per_scale,
    }
}
