//! Synthetic 4D phantoms: a centred ellipsoid holding a smooth baseline,
//! temporally modulated Gaussian blobs and white noise; zero outside.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::volume::Volume4D;

use super::{Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub edge: usize,
    pub frames: usize,
    /// Ellipsoid semi-axes as fractions of half the edge, x/y/z.
    pub semi_axes: [f64; 3],
    /// Baseline level inside the ellipsoid.
    pub baseline: f64,
    /// Amplitude of the slow spatial baseline variation.
    pub baseline_ripple: f64,
    pub n_blobs: usize,
    pub blob_amplitude: (f64, f64),
    /// Gaussian envelope width in voxels.
    pub blob_sigma: (f64, f64),
    /// Temporal frequency in cycles over the whole series.
    pub blob_frequency: (f64, f64),
    pub noise_sigma: f64,
    /// The edge must be a multiple of this (the coarse patch edge).
    pub grid_multiple: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            edge: 64,
            frames: 8,
            semi_axes: [0.8, 0.7, 0.75],
            baseline: 1.0,
            baseline_ripple: 0.05,
            n_blobs: 6,
            blob_amplitude: (0.5, 1.5),
            blob_sigma: (2.0, 5.0),
            blob_frequency: (0.5, 2.0),
            noise_sigma: 0.02,
            grid_multiple: 8,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Smaller phantom used by the toy training runs.
    pub fn toy(seed: u64) -> Self {
        PhantomSpec {
            edge: 32,
            frames: 4,
            n_blobs: 4,
            blob_sigma: (1.5, 3.5),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::BadSpec(m));
        if self.edge == 0 || self.frames == 0 || self.grid_multiple == 0 {
            return bad("edge, frames and grid_multiple must be positive".into());
        }
        if !self.edge.is_multiple_of(self.grid_multiple) {
            return bad(format!("edge {} is not a multiple of {}", self.edge, self.grid_multiple));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad(format!("semi-axes {:?} must lie in (0, 1]", self.semi_axes));
        }
        for (name, (lo, hi)) in [
            ("blob_amplitude", self.blob_amplitude),
            ("blob_sigma", self.blob_sigma),
            ("blob_frequency", self.blob_frequency),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi}) must be positive and ordered"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.baseline > 0.0 && self.baseline_ripple >= 0.0) {
            return bad("noise_sigma and baseline_ripple must be non-negative, baseline positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Blob {
    pub center: [f64; 3],
    pub sigma: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Blob parameters drawn for `spec`; centres lie inside the ellipsoid shrunk
/// to 70% so blobs sit in the interior.
pub(crate) fn blobs(spec: &PhantomSpec) -> Vec<Blob> {
    let mut rng = rng::stream(spec.seed, &[rng::TAG_PHANTOM]);
    let half = spec.edge as f64 / 2.0;
    (0..spec.n_blobs)
        .map(|_| {
            let center = loop {
                let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break std::array::from_fn(|a| half - 0.5 + 0.7 * u[a] * spec.semi_axes[a] * half);
                }
            };
            Blob {
                center,
                sigma: range(&mut rng, spec.blob_sigma),
                amplitude: range(&mut rng, spec.blob_amplitude),
                frequency: range(&mut rng, spec.blob_frequency),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume4D> {
    spec.validate()?;
    let (n, t_len) = (spec.edge, spec.frames);
    let half = n as f64 / 2.0;
    let c = half - 0.5;
    let blobs = blobs(spec);
    let mut noise_rng = rng::stream(spec.seed, &[rng::TAG_NOISE]);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid std");
    let tau = std::f64::consts::TAU;

    let mut data = vec![0f32; n * n * n * t_len];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64, y as f64, z as f64];
                let r2: f64 = (0..3).map(|a| ((p[a] - c) / (spec.semi_axes[a] * half)).powi(2)).sum();
                if r2 > 1.0 {
                    continue;
                }
                let base = spec.baseline
                    + spec.baseline_ripple
                        * ((tau * p[0] / n as f64).cos() + (tau * p[1] / n as f64).sin() + (tau * p[2] / n as f64).cos())
                        / 3.0;
                let env: Vec<f64> = blobs
                    .iter()
                    .map(|b| {
                        let d2: f64 = (0..3).map(|a| (p[a] - b.center[a]).powi(2)).sum();
                        b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                    })
                    .collect();
                for t in 0..t_len {
                    let mut v = base;
                    for (b, e) in blobs.iter().zip(&env) {
                        v += e * (tau * b.frequency * t as f64 / t_len as f64 + b.phase).sin();
                    }
                    if spec.noise_sigma > 0.0 {
                        v += noise.sample(&mut noise_rng);
                    }
                    data[((t * n + z) * n + y) * n + x] = v as f32;
                }
            }
        }
    }
    Ok(Volume4D::from_data([n, n, n, t_len], data)?)
}
