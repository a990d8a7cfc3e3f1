//! Independent reference implementations used by the integration tests.
//! Written for clarity, not speed, and sharing no code with the library.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

use std::collections::BTreeSet;

use dynpatch::Volume4D;

/// Two-pass population variance of one cube, averaged over frames.
pub fn naive_cube_variance(vol: &Volume4D, origin: [usize; 3], edge: usize) -> f64 {
    let t = vol.frames();
    let mut acc = 0.0;
    for ti in 0..t {
        let mut vals = Vec::with_capacity(edge * edge * edge);
        for z in 0..edge {
            for y in 0..edge {
                for x in 0..edge {
                    vals.push(vol.get(origin[0] + x, origin[1] + y, origin[2] + z, ti) as f64);
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        acc += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    }
    acc / t as f64
}

/// Mean temporal-mean intensity of a cube divided by the global maximum of
/// the temporal mean.
pub struct Foreground {
    dims: [usize; 3],
    mean: Vec<f64>,
    max: f64,
}

impl Foreground {
    pub fn new(vol: &Volume4D) -> Self {
        let [h, w, d, t] = vol.dims();
        let mut mean = vec![0.0; h * w * d];
        for z in 0..d {
            for y in 0..w {
                for x in 0..h {
                    let s: f64 = (0..t).map(|ti| vol.get(x, y, z, ti) as f64).sum();
                    mean[(z * w + y) * h + x] = s / t as f64;
                }
            }
        }
        let max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Foreground { dims: [h, w, d], mean, max }
    }

    pub fn keeps(&self, origin: [usize; 3], edge: usize, thresh: f64) -> bool {
        if !(self.max > 0.0) {
            return false;
        }
        let [h, w, _] = self.dims;
        let mut s = 0.0;
        for z in 0..edge {
            for y in 0..edge {
                for x in 0..edge {
                    s += self.mean[((origin[2] + z) * w + origin[1] + y) * h + origin[0] + x];
                }
            }
        }
        s / (edge * edge * edge) as f64 / self.max >= thresh
    }
}

/// Global z-score in f64, rounded to f32 per entry.
pub fn naive_zscore(vol: &Volume4D) -> Volume4D {
    let d = vol.data();
    let n = d.len() as f64;
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    Volume4D::from_data(vol.dims(), d.iter().map(|&v| ((v as f64 - mean) / sd) as f32).collect()).unwrap()
}

/// Recursive coarse-to-fine partition of a raw volume whose spatial dims are
/// already multiples of the coarse edge. Returns `(origin, scale)` pairs.
pub fn brute_force_partition(
    raw: &Volume4D,
    tau: f64,
    base: usize,
    k: usize,
    bg: f64,
) -> BTreeSet<([usize; 3], usize)> {
    let fg = Foreground::new(raw);
    let z = naive_zscore(raw);
    let coarse = base << (k - 1);
    let [h, w, d] = raw.spatial_dims();
    let mut out = BTreeSet::new();

    fn split(
        o: [usize; 3],
        s: usize,
        base: usize,
        tau: f64,
        bg: f64,
        fg: &Foreground,
        z: &Volume4D,
        out: &mut BTreeSet<([usize; 3], usize)>,
    ) {
        let ce = base << (s - 1);
        for c in 0..8 {
            let co = [o[0] + (c & 1) * ce, o[1] + (c >> 1 & 1) * ce, o[2] + (c >> 2) * ce];
            if !fg.keeps(co, ce, bg) {
                continue;
            }
            if s - 1 == 0 || naive_cube_variance(z, co, ce) < tau {
                out.insert((co, s - 1));
            } else {
                split(co, s - 1, base, tau, bg, fg, z, out);
            }
        }
    }

    for oz in (0..d).step_by(coarse) {
        for oy in (0..w).step_by(coarse) {
            for ox in (0..h).step_by(coarse) {
                let o = [ox, oy, oz];
                if !fg.keeps(o, coarse, bg) {
                    continue;
                }
                if k == 1 || naive_cube_variance(&z, o, coarse) < tau {
                    out.insert((o, k - 1));
                } else {
                    split(o, k - 1, base, tau, bg, &fg, &z, &mut out);
                }
            }
        }
    }
    out
}

/// Average pooling of a `(t, z, y, x)` cube; sums in z, y, x order and
/// multiplies by the reciprocal.
pub fn naive_pool(voxels: &[f32], frames: usize, edge: usize, factor: usize) -> Vec<f32> {
    let oe = edge / factor;
    let inv = 1.0 / (factor * factor * factor) as f32;
    let at = |t: usize, x: usize, y: usize, z: usize| voxels[((t * edge + z) * edge + y) * edge + x];
    let mut out = Vec::new();
    for t in 0..frames {
        for z in 0..oe {
            for y in 0..oe {
                for x in 0..oe {
                    let mut s = 0.0f32;
                    for dz in 0..factor {
                        for dy in 0..factor {
                            for dx in 0..factor {
                                s += at(t, x * factor + dx, y * factor + dy, z * factor + dz);
                            }
                        }
                    }
                    out.push(s * inv);
                }
            }
        }
    }
    out
}

/// `b + W x` row by row, `W` stored `[dout, din]`.
pub fn naive_affine(w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let mut s = 0.0f32;
            for (i, &xi) in x.iter().enumerate() {
                s += xi * w[o * x.len() + i];
            }
            bo + s
        })
        .collect()
}

/// A NIfTI-1 single-file image: 348-byte header, 4 extension bytes, then
/// float32 data, all in the requested byte order.
pub fn nifti_f32(dims: [usize; 4], spacing: [f32; 3], tr: f32, data: &[f32], big_endian: bool) -> Vec<u8> {
    let i16b = |v: i16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let i32b = |v: i32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let f32b = |v: f32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };

    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&i32b(348));
    let dim = [4i16, dims[0] as i16, dims[1] as i16, dims[2] as i16, dims[3] as i16, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&i16b(*d));
    }
    h[70..72].copy_from_slice(&i16b(16));
    h[72..74].copy_from_slice(&i16b(32));
    let pixdim = [1.0f32, spacing[0], spacing[1], spacing[2], tr, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&f32b(*p));
    }
    h[108..112].copy_from_slice(&f32b(352.0));
    h[112..116].copy_from_slice(&f32b(1.0));
    h[344..348].copy_from_slice(b"n+1\0");
    for v in data {
        h.extend_from_slice(&f32b(*v));
    }
    h
}
