//! Per-coarse-patch complexity scores.
//!
//! All maps share one grid: the volume's spatial dims divided by
//! `coarse_edge`, cells indexed x-fastest. Each cell's score depends only on
//! the voxels of that cell (and, for the Laplacian, their 26-neighbours), so
//! cells are evaluated in parallel with a fixed accumulation order inside the
//! cell; results do not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{resample_spatial_trilinear, Volume4D};

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error("spatial dims {dims:?} are not divisible by {edge}")]
    NotDivisible { dims: [usize; 3], edge: usize },
    #[error("entropy needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ComplexityError> = std::result::Result<T, E>;

/// Entropy log guard.
pub const ENTROPY_EPS: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 512;
pub const DEFAULT_RECON_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Variance,
    Entropy,
    Laplacian,
    ReconMse,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Variance, Metric::Entropy, Metric::Laplacian, Metric::ReconMse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Variance => "variance",
            Metric::Entropy => "entropy",
            Metric::Laplacian => "laplacian",
            Metric::ReconMse => "recon_mse",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variance" => Ok(Metric::Variance),
            "entropy" => Ok(Metric::Entropy),
            "laplacian" => Ok(Metric::Laplacian),
            "mse" | "recon_mse" => Ok(Metric::ReconMse),
            _ => Err(format!("unknown metric '{s}' (valid: variance, entropy, laplacian, mse)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityMap {
    #[serde(rename = "grid")]
    pub grid_dims: [usize; 3],
    pub coarse_edge: usize,
    pub metric: Metric,
    pub scores: Vec<f64>,
}

impl ComplexityMap {
    #[inline]
    pub fn cell_index(&self, gx: usize, gy: usize, gz: usize) -> usize {
        (gz * self.grid_dims[1] + gy) * self.grid_dims[0] + gx
    }

    #[inline]
    pub fn score(&self, gx: usize, gy: usize, gz: usize) -> f64 {
        self.scores[self.cell_index(gx, gy, gz)]
    }

    pub fn num_cells(&self) -> usize {
        self.scores.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("complexity map serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn grid_for(dims: [usize; 3], edge: usize) -> Result<[usize; 3]> {
    if edge == 0 || dims.iter().any(|d| d % edge != 0) {
        return Err(ComplexityError::NotDivisible { dims, edge });
    }
    Ok([dims[0] / edge, dims[1] / edge, dims[2] / edge])
}

/// Evaluates `f(origin)` for every cell, in parallel, in grid order.
fn per_cell(grid: [usize; 3], edge: usize, f: impl Fn([usize; 3]) -> f64 + Sync) -> Vec<f64> {
    let [gx, gy, gz] = grid;
    (0..gx * gy * gz)
        .into_par_iter()
        .map(|c| {
            let x = c % gx;
            let y = (c / gx) % gy;
            let z = c / (gx * gy);
            f([x * edge, y * edge, z * edge])
        })
        .collect()
}

/// Visits the voxel offsets of one cube in z, y, x order.
#[inline]
fn for_cube(frame_dims: [usize; 3], origin: [usize; 3], edge: usize, mut f: impl FnMut(usize)) {
    let [h, w, _] = frame_dims;
    for z in origin[2]..origin[2] + edge {
        for y in origin[1]..origin[1] + edge {
            let row = (z * w + y) * h;
            for x in origin[0]..origin[0] + edge {
                f(row + x);
            }
        }
    }
}

/// Per-voxel mean over time; output has T = 1.
pub fn temporal_mean(vol: &Volume4D) -> Volume4D {
    let [h, w, d, t] = vol.dims();
    let n = vol.frame_len();
    let mut acc = vec![0f64; n];
    for ti in 0..t {
        for (a, &v) in acc.iter_mut().zip(vol.frame(ti)) {
            *a += v as f64;
        }
    }
    let data = acc.into_iter().map(|a| (a / t as f64) as f32).collect();
    Volume4D::new([h, w, d, 1], data, vol.spacing_mm, vol.tr_seconds).expect("mean of finite values")
}

/// Mean over frames of the within-patch population variance,
/// `E_P[I_t^2] - E_P[I_t]^2`, with `E_P` a non-overlapping average pool.
pub fn variance_map(vol: &Volume4D, coarse_edge: usize) -> Result<ComplexityMap> {
    let sd = vol.spatial_dims();
    let grid = grid_for(sd, coarse_edge)?;
    let scores = per_cell(grid, coarse_edge, |o| cube_variance(vol, o, coarse_edge));
    Ok(ComplexityMap {
        grid_dims: grid,
        coarse_edge,
        metric: Metric::Variance,
        scores,
    })
}

/// Time-aggregated variance of one cube; the per-cell score of
/// [`variance_map`].
pub fn cube_variance(vol: &Volume4D, origin: [usize; 3], edge: usize) -> f64 {
    let sd = vol.spatial_dims();
    let t = vol.frames();
    let n = (edge * edge * edge) as f64;
    let mut acc = 0.0;
    for ti in 0..t {
        let f = vol.frame(ti);
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for_cube(sd, origin, edge, |i| {
            let v = f[i] as f64;
            s1 += v;
            s2 += v * v;
        });
        let m = s1 / n;
        acc += (s2 / n - m * m).max(0.0);
    }
    acc / t as f64
}

/// Local Shannon entropy (bits) of the temporal-mean volume. Bins span the
/// global min..max of the temporal mean.
pub fn entropy_map(vol: &Volume4D, coarse_edge: usize, bins: usize) -> Result<ComplexityMap> {
    let sd = vol.spatial_dims();
    let grid = grid_for(sd, coarse_edge)?;
    if bins < 2 {
        return Err(ComplexityError::TooFewBins(bins));
    }
    let mean = temporal_mean(vol);
    let f = mean.data();
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let mk = |scores| ComplexityMap {
        grid_dims: grid,
        coarse_edge,
        metric: Metric::Entropy,
        scores,
    };
    if !(hi > lo) {
        return Ok(mk(vec![0.0; grid.iter().product()]));
    }
    let scale = bins as f64 / (hi - lo);
    let n = (coarse_edge * coarse_edge * coarse_edge) as f64;
    let scores = per_cell(grid, coarse_edge, |o| {
        let mut hist = vec![0u32; bins];
        for_cube(sd, o, coarse_edge, |i| {
            let k = (((f[i] as f64 - lo) * scale) as usize).min(bins - 1);
            hist[k] += 1;
        });
        let h: f64 = hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * (p + ENTROPY_EPS).log2()
            })
            .sum();
        h.max(0.0)
    });
    Ok(mk(scores))
}

/// Border handling of the Laplacian stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianBorder {
    /// Out-of-volume neighbours take the nearest in-volume value, so a
    /// constant volume has zero response everywhere.
    #[default]
    Replicate,
    /// Out-of-volume neighbours are 0.
    Zero,
}

/// Mean absolute response of the 26-neighbour Laplacian (centre -26) applied
/// to the temporal-mean volume, with replicated borders.
pub fn laplacian_map(vol: &Volume4D, coarse_edge: usize) -> Result<ComplexityMap> {
    laplacian_map_with(vol, coarse_edge, LaplacianBorder::default())
}

pub fn laplacian_map_with(vol: &Volume4D, coarse_edge: usize, border: LaplacianBorder) -> Result<ComplexityMap> {
    let sd = vol.spatial_dims();
    let grid = grid_for(sd, coarse_edge)?;
    let response = laplacian_response_with(&temporal_mean(vol), border);
    let n = (coarse_edge * coarse_edge * coarse_edge) as f64;
    let scores = per_cell(grid, coarse_edge, |o| {
        let mut s = 0.0;
        for_cube(sd, o, coarse_edge, |i| s += response[i].abs());
        s / n
    });
    Ok(ComplexityMap {
        grid_dims: grid,
        coarse_edge,
        metric: Metric::Laplacian,
        scores,
    })
}

/// Signed 26-neighbour Laplacian of the first frame, replicated borders.
pub fn laplacian_response(vol: &Volume4D) -> Vec<f64> {
    laplacian_response_with(vol, LaplacianBorder::default())
}

pub fn laplacian_response_with(vol: &Volume4D, border: LaplacianBorder) -> Vec<f64> {
    let [h, w, d] = vol.spatial_dims();
    let f = vol.frame(0);
    // Neighbour coordinate along an axis of length n, or None for a zero.
    let nb = |c: usize, delta: isize, n: usize| -> Option<usize> {
        let v = c as isize + delta;
        if (0..n as isize).contains(&v) {
            Some(v as usize)
        } else {
            match border {
                LaplacianBorder::Replicate => Some(v.clamp(0, n as isize - 1) as usize),
                LaplacianBorder::Zero => None,
            }
        }
    };
    let mut out = vec![0f64; h * w * d];
    out.par_chunks_mut(h * w).enumerate().for_each(|(z, plane)| {
        for y in 0..w {
            for x in 0..h {
                let mut s = 0.0;
                for dz in -1isize..=1 {
                    let Some(zz) = nb(z, dz, d) else { continue };
                    for dy in -1isize..=1 {
                        let Some(yy) = nb(y, dy, w) else { continue };
                        for dx in -1isize..=1 {
                            let Some(xx) = nb(x, dx, h) else { continue };
                            let v = f[(zz * w + yy) * h + xx] as f64;
                            s += if dx == 0 && dy == 0 && dz == 0 { -26.0 * v } else { v };
                        }
                    }
                }
                plane[y * h + x] = s;
            }
        }
    });
    out
}

/// Mean squared error between the temporal mean and its
/// average-pool-by-`factor` then align-corners-trilinear reconstruction.
pub fn recon_error_map(vol: &Volume4D, coarse_edge: usize, factor: usize) -> Result<ComplexityMap> {
    let sd = vol.spatial_dims();
    let grid = grid_for(sd, coarse_edge)?;
    grid_for(sd, factor)?;
    let mean = temporal_mean(vol);
    let pooled = avg_pool3(&mean, factor);
    let recon = resample_spatial_trilinear(&pooled, sd);
    let (a, b) = (mean.data(), recon.data());
    let n = (coarse_edge * coarse_edge * coarse_edge) as f64;
    let scores = per_cell(grid, coarse_edge, |o| {
        let mut s = 0.0;
        for_cube(sd, o, coarse_edge, |i| s += (a[i] as f64 - b[i] as f64).powi(2));
        s / n
    });
    Ok(ComplexityMap {
        grid_dims: grid,
        coarse_edge,
        metric: Metric::ReconMse,
        scores,
    })
}

/// Non-overlapping spatial average pooling of every frame. Dims must be
/// divisible by `k`.
pub fn avg_pool3(vol: &Volume4D, k: usize) -> Volume4D {
    let [h, w, d, t] = vol.dims();
    let (ph, pw, pd) = (h / k, w / k, d / k);
    let n = (k * k * k) as f64;
    let mut out = Vec::with_capacity(ph * pw * pd * t);
    for ti in 0..t {
        let f = vol.frame(ti);
        for z in 0..pd {
            for y in 0..pw {
                for x in 0..ph {
                    let mut s = 0.0f64;
                    for_cube([h, w, d], [x * k, y * k, z * k], k, |i| s += f[i] as f64);
                    out.push((s / n) as f32);
                }
            }
        }
    }
    let mut res = Volume4D::new([ph, pw, pd, t], out, vol.spacing_mm, vol.tr_seconds).expect("pooled volume");
    for s in res.spacing_mm.iter_mut() {
        *s *= k as f64;
    }
    res
}

/// Dispatches to the metric's map with default parameters.
pub fn compute_map(vol: &Volume4D, metric: Metric, coarse_edge: usize) -> Result<ComplexityMap> {
    match metric {
        Metric::Variance => variance_map(vol, coarse_edge),
        Metric::Entropy => entropy_map(vol, coarse_edge, DEFAULT_BINS),
        Metric::Laplacian => laplacian_map(vol, coarse_edge),
        Metric::ReconMse => recon_error_map(vol, coarse_edge, DEFAULT_RECON_FACTOR),
    }
}
