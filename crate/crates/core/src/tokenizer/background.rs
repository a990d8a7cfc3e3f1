use crate::complexity::{temporal_mean, ComplexityError};
use crate::volume::Volume4D;

use super::Result;

/// Foreground decision for cubes of any size, plus the precomputed coarse
/// grid.
///
/// The test input is the temporal-mean intensity divided by its global
/// maximum, so values lie in `[0, 1]` for non-negative volumes. A cube is
/// background when its mean normalized intensity is below `bg_thresh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    spatial_dims: [usize; 3],
    frames: usize,
    normalized_mean: Vec<f64>,
    pub bg_thresh: f64,
    pub coarse_edge: usize,
    pub grid_dims: [usize; 3],
    /// `true` = foreground, x-fastest over the coarse grid.
    pub cells: Vec<bool>,
}

impl ForegroundMask {
    pub fn spatial_dims(&self) -> [usize; 3] {
        self.spatial_dims
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn cube_mean(&self, origin: [usize; 3], edge: usize) -> f64 {
        let [h, w, _] = self.spatial_dims;
        let mut s = 0.0;
        for z in origin[2]..origin[2] + edge {
            for y in origin[1]..origin[1] + edge {
                let row = (z * w + y) * h;
                s += self.normalized_mean[row + origin[0]..row + origin[0] + edge].iter().sum::<f64>();
            }
        }
        s / (edge * edge * edge) as f64
    }

    pub fn is_foreground(&self, origin: [usize; 3], edge: usize) -> bool {
        self.cube_mean(origin, edge) >= self.bg_thresh
    }

    pub fn cell(&self, gx: usize, gy: usize, gz: usize) -> bool {
        self.cells[(gz * self.grid_dims[1] + gy) * self.grid_dims[0] + gx]
    }

    pub fn foreground_cells(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

pub fn prune_background(vol: &Volume4D, coarse_edge: usize, bg_thresh: f64) -> Result<ForegroundMask> {
    let sd = vol.spatial_dims();
    if coarse_edge == 0 || sd.iter().any(|d| d % coarse_edge != 0) {
        return Err(ComplexityError::NotDivisible {
            dims: sd,
            edge: coarse_edge,
        }
        .into());
    }
    let mean = temporal_mean(vol);
    let max = mean.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    // A volume without positive intensity has no foreground at all.
    let normalized_mean: Vec<f64> = if max > 0.0 {
        mean.data().iter().map(|&v| v as f64 / max).collect()
    } else {
        vec![f64::NEG_INFINITY; mean.data().len()]
    };
    let grid_dims = sd.map(|d| d / coarse_edge);
    let mut mask = ForegroundMask {
        spatial_dims: sd,
        frames: vol.frames(),
        normalized_mean,
        bg_thresh,
        coarse_edge,
        grid_dims,
        cells: Vec::new(),
    };
    let [gx, gy, gz] = grid_dims;
    let mut cells = Vec::with_capacity(gx * gy * gz);
    for z in 0..gz {
        for y in 0..gy {
            for x in 0..gx {
                cells.push(mask.is_foreground([x * coarse_edge, y * coarse_edge, z * coarse_edge], coarse_edge));
            }
        }
    }
    mask.cells = cells;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_is_background() {
        let m = prune_background(&Volume4D::filled([8, 8, 8, 2], 0.0), 4, 1e-3).unwrap();
        assert_eq!(m.foreground_cells(), 0);
        let m = prune_background(&Volume4D::filled([8, 8, 8, 2], 0.0), 4, 0.0).unwrap();
        assert_eq!(m.foreground_cells(), 0);
    }

    #[test]
    fn single_bright_patch() {
        let v = Volume4D::from_fn([16, 8, 8, 2], |x, y, z, _| if x >= 8 && y < 8 && z < 8 { 1.0 } else { 0.0 }).unwrap();
        let m = prune_background(&v, 8, 1e-3).unwrap();
        assert_eq!(m.cells, vec![false, true]);
    }

    #[test]
    fn threshold_is_on_normalized_mean() {
        // Two cells with means 1000 and 0.5 -> normalized 1 and 5e-4.
        let v = Volume4D::from_fn([8, 4, 4, 1], |x, _, _, _| if x < 4 { 1000.0 } else { 0.5 }).unwrap();
        let m = prune_background(&v, 4, 1e-3).unwrap();
        assert_eq!(m.cells, vec![true, false]);
    }

    #[test]
    fn not_divisible() {
        assert!(prune_background(&Volume4D::filled([6, 8, 8, 1], 1.0), 4, 1e-3).is_err());
    }
}
