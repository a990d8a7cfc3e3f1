//! Central-difference verification of the analytic backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{backward, forward_loss, forward_with_tape, ModelConfig, ModelParams, ParamLayout, Sample};
use crate::rng;
use crate::tokenizer::{sample_mask, MaskPlan, TokenLayout, TokenRec};

use super::Result;

/// Multiplies the analytic gradient at `indices` by `factor` before
/// comparison; used to show the checker catches a wrong backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFault {
    pub indices: Vec<usize>,
    pub factor: f64,
}

impl GradFault {
    /// Every entry of every reconstruction head.
    pub fn all_heads(layout: &ParamLayout, factor: f64) -> Self {
        GradFault {
            indices: layout.heads.iter().flat_map(|h| h.range()).collect(),
            factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Step is `step_scale · (1 + |θ|)`.
    pub step_scale: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero are judged by absolute error.
    pub abs_floor: f64,
    /// Above this many parameters a seeded, per-tensor stratified subsample
    /// is checked; `None` checks everything.
    pub max_params: Option<usize>,
    /// Std of the perturbation added to the initial parameters, so zero
    /// initialized paths carry signal.
    pub perturb: f64,
    pub fault: Option<GradFault>,
}

impl GradcheckConfig {
    /// C = 16, encoder depth 2, 12 tokens, 2-voxel base patches of 2 frames.
    pub fn toy(num_scales: usize, patch_norm: bool) -> Self {
        GradcheckConfig {
            model: ModelConfig {
                dec_dim: 16,
                dec_heads: 2,
                base_edge: 2,
                frames: 2,
                num_scales,
                patch_norm_targets: patch_norm,
                ..ModelConfig::toy()
            },
            seed: 0,
            step_scale: 1e-5,
            tolerance: 1e-6,
            abs_floor: 1e-3,
            max_params: Some(10_000),
            perturb: 0.05,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst entry.
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub total_params: usize,
    pub loss: f64,
    pub pass: bool,
}

/// The fixed 12-token sample: with K ≥ 2, four top-scale tokens and one
/// top-scale cell split into eight children; with K = 1, twelve base tokens
/// in a row. Voxels are standard normal.
pub fn gradcheck_fixture(cfg: &ModelConfig, seed: u64) -> (Sample<f64>, MaskPlan) {
    let b = cfg.base_edge;
    let k = cfg.num_scales;
    let mut tokens = Vec::with_capacity(12);
    let dims = if k == 1 {
        for i in 0..12 {
            tokens.push(TokenRec {
                origin: [i * b, 0, 0],
                scale: 0,
                linear_index: 0,
            });
        }
        [12 * b, b, b, cfg.frames]
    } else {
        let e = cfg.coarse_edge();
        for i in 0..4 {
            tokens.push(TokenRec {
                origin: [i * e, 0, 0],
                scale: k - 1,
                linear_index: 0,
            });
        }
        let h = e / 2;
        for c in 0..8 {
            tokens.push(TokenRec {
                origin: [4 * e + (c & 1) * h, (c >> 1 & 1) * h, (c >> 2) * h],
                scale: k - 2,
                linear_index: 0,
            });
        }
        [5 * e, e, e, cfg.frames]
    };
    let layout = TokenLayout::from_tokens(tokens, b, k, dims, 0.0, 0.0);
    let mut rng = rng::stream(seed, &[rng::TAG_GRADCHECK, 1]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let voxels = layout
        .tokens
        .iter()
        .map(|t| (0..cfg.frames * cfg.voxels(t.scale)).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let plan = sample_mask(&layout, cfg.mask_ratio, rng::derive_seed(seed, &[rng::TAG_GRADCHECK, 2]));
    (
        Sample {
            tokens: layout.tokens,
            voxels,
        },
        plan,
    )
}

fn select(layout: &ParamLayout, max: Option<usize>, seed: u64, forced: &[usize]) -> Vec<usize> {
    let total = layout.total;
    let Some(max) = max.filter(|&m| total > m) else {
        return (0..total).collect();
    };
    let mut rng = rng::stream(seed, &[rng::TAG_GRADCHECK, 3]);
    let mut out: Vec<usize> = forced.to_vec();
    for e in &layout.entries {
        let want = ((max as f64 * e.len as f64 / total as f64).round() as usize).max(e.len.min(4));
        let mut idx: Vec<usize> = (e.offset..e.offset + e.len).collect();
        for i in 0..want.min(idx.len()) {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        out.extend_from_slice(&idx[..want.min(idx.len())]);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Compares analytic and central-difference gradients of the total loss on
/// the fixture, in 64-bit arithmetic.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut params = ModelParams::<f64>::init(&cfg.model, cfg.seed)?;
    if cfg.perturb > 0.0 {
        let mut rng = rng::stream(cfg.seed, &[rng::TAG_GRADCHECK, 4]);
        let normal = Normal::new(0.0, cfg.perturb).expect("valid std");
        for v in &mut params.data {
            *v += normal.sample(&mut rng);
        }
    }
    let (sample, plan) = gradcheck_fixture(&cfg.model, cfg.seed);
    let (loss, tape) = forward_with_tape(&params, &sample, &plan)?;
    let mut analytic = backward(&params, &tape);
    let forced = match &cfg.fault {
        Some(f) => {
            for &i in &f.indices {
                analytic[i] *= f.factor;
            }
            f.indices.clone()
        }
        None => Vec::new(),
    };
    let indices = select(&params.layout, cfg.max_params, cfg.seed, &forced);

    let numeric: Vec<f64> = indices
        .par_iter()
        .map_init(
            || params.clone(),
            |p, &i| {
                let theta = p.data[i];
                let h = cfg.step_scale * (1.0 + theta.abs());
                p.data[i] = theta + h;
                let up = forward_loss(p, &sample, &plan).map(|l| l.total);
                p.data[i] = theta - h;
                let down = forward_loss(p, &sample, &plan).map(|l| l.total);
                p.data[i] = theta;
                Ok((up? - down?) / (2.0 * h))
            },
        )
        .collect::<Result<_, crate::model::ModelError>>()?;

    let mut worst = (0.0f64, indices.first().copied().unwrap_or(0), 0.0, 0.0);
    for (&i, &n) in indices.iter().zip(&numeric) {
        let a = analytic[i];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(cfg.abs_floor);
        if err > worst.0 || err.is_nan() {
            worst = (err, i, a, n);
        }
    }
    let (max_rel_err, worst_index, a, n) = worst;
    let worst_param = match params.layout.locate(worst_index) {
        Some((e, j)) => format!("{}[{j}]", e.name),
        None => format!("#{worst_index}"),
    };
    Ok(GradcheckReport {
        max_rel_err,
        worst_param,
        worst_index,
        analytic: a,
        numeric: n,
        checked: indices.len(),
        total_params: params.num_params(),
        loss: loss.total,
        pass: max_rel_err < cfg.tolerance,
    })
}
