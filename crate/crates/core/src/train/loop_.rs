//! The toy pretraining loop.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::model::{backward, forward_loss, forward_with_tape, save_checkpoint, ModelConfig, ModelParams, Sample};
use crate::real::Real;
use crate::rng;
use crate::tokenizer::{sample_mask, tokenize_volume, TokenLayout, TokenizerConfig};
use crate::volume::Volume4D;

use super::{adamw_step, lr_at, make_phantom, AdamState, PhantomSpec, Result, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_per_scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyRun<F> {
    pub params: ModelParams<F>,
    pub steps: Vec<StepRecord>,
    /// Mean total loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl<F: Real> ToyRun<F> {
    /// Writes `loss.csv` and `model.ckpt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join("loss.csv"))?;
        write_loss_csv(&self.steps, self.params.config.num_scales, std::io::BufWriter::new(f))?;
        save_checkpoint(&self.params, dir.join("model.ckpt"))?;
        Ok(())
    }
}

/// `epoch,step,lr,loss_total,loss_scale_0..` with one row per optimizer step.
pub fn write_loss_csv<W: Write>(steps: &[StepRecord], num_scales: usize, mut w: W) -> Result<()> {
    write!(w, "epoch,step,lr,loss_total")?;
    for s in 0..num_scales {
        write!(w, ",loss_scale_{s}")?;
    }
    writeln!(w)?;
    for r in steps {
        write!(w, "{},{},{:e},{:e}", r.epoch, r.step, r.lr, r.loss_total)?;
        for v in &r.loss_per_scale {
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Generates and tokenizes phantoms with the tokenizer defaults at the
/// model's patch geometry.
pub fn prepare_samples<F: Real>(cfg: &ModelConfig, specs: &[PhantomSpec]) -> Result<Vec<(TokenLayout, Sample<F>)>> {
    let vols = specs.iter().map(make_phantom).collect::<Result<Vec<_>>>()?;
    samples_from_volumes(cfg, &vols)
}

/// Tokenizes volumes with the tokenizer defaults at the model's patch
/// geometry.
pub fn samples_from_volumes<F: Real>(cfg: &ModelConfig, vols: &[Volume4D]) -> Result<Vec<(TokenLayout, Sample<F>)>> {
    let tcfg = TokenizerConfig {
        base_edge: cfg.base_edge,
        num_scales: cfg.num_scales,
        ..TokenizerConfig::default()
    };
    vols.iter()
        .map(|vol| {
            if vol.frames() != cfg.frames {
                return Err(TrainError::BadConfig(format!(
                    "volume has {} frames, model expects {}",
                    vol.frames(),
                    cfg.frames
                )));
            }
            let tok = tokenize_volume(vol, &tcfg)?;
            let sample = Sample::from_volume(&tok.normalized, &tok.layout)?;
            Ok((tok.layout, sample))
        })
        .collect()
}

fn mask_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    rng::derive_seed(seed, &[rng::TAG_MASK, epoch as u64, sample as u64])
}

/// Trains from a fresh initialization on the given phantoms; see
/// [`train_on_volumes`].
pub fn train_toy<F: Real>(model: &ModelConfig, cfg: &TrainConfig, specs: &[PhantomSpec]) -> Result<ToyRun<F>> {
    cfg.validate()?;
    let data = prepare_samples::<F>(model, specs)?;
    train_on(model, cfg, &data)
}

/// Trains from a fresh initialization on already loaded volumes. Each epoch
/// is one pass in sample order, in batches of `batch`; every (sample, epoch)
/// pair gets its own mask.
pub fn train_on_volumes<F: Real>(model: &ModelConfig, cfg: &TrainConfig, vols: &[Volume4D]) -> Result<ToyRun<F>> {
    cfg.validate()?;
    let data = samples_from_volumes::<F>(model, vols)?;
    train_on(model, cfg, &data)
}

/// Trains on pre-tokenized samples.
pub fn train_on<F: Real>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &[(TokenLayout, Sample<F>)],
) -> Result<ToyRun<F>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::BadConfig("no training samples".into()));
    }
    let mut params = ModelParams::<F>::init(model, cfg.seed)?;
    let mut state = AdamState::new(params.num_params());
    let per_epoch = data.len().div_ceil(cfg.batch);
    let total = cfg.epochs * per_epoch;
    let mut steps = Vec::with_capacity(total);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let k = model.num_scales;
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for (b, chunk) in data.chunks(cfg.batch).enumerate() {
            let step = epoch * per_epoch + b;
            let first = b * cfg.batch;
            let results = chunk
                .par_iter()
                .enumerate()
                .map(|(j, (layout, sample))| {
                    let plan = sample_mask(layout, model.mask_ratio, mask_seed(cfg.seed, epoch, first + j));
                    let (loss, tape) = forward_with_tape(&params, sample, &plan)?;
                    Ok((loss, backward(&params, &tape)))
                })
                .collect::<Result<Vec<_>, crate::model::ModelError>>()?;
            let mut grads = params.zeros_like();
            let mut per_scale = vec![0.0; k];
            let mut loss_total = 0.0;
            for (loss, g) in &results {
                for (a, &v) in grads.iter_mut().zip(g) {
                    *a += v;
                }
                loss_total += loss.total;
                for (a, v) in per_scale.iter_mut().zip(&loss.per_scale) {
                    *a += v;
                }
            }
            let inv = 1.0 / results.len() as f64;
            let invf = F::of(inv);
            for g in &mut grads {
                *g *= invf;
            }
            let lr = lr_at(step, total, cfg);
            adamw_step(&mut params.data, &grads, &mut state, lr, cfg)?;
            epoch_sum += loss_total;
            steps.push(StepRecord {
                epoch,
                step,
                lr,
                loss_total: loss_total * inv,
                loss_per_scale: per_scale.into_iter().map(|v| v * inv).collect(),
            });
        }
        epoch_losses.push(epoch_sum / data.len() as f64);
    }
    Ok(ToyRun {
        params,
        steps,
        epoch_losses,
    })
}

/// Mean total loss over `samples`, each under `n_masks` seeded masks at
/// `ratio`.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    samples: &[(TokenLayout, Sample<F>)],
    ratio: f64,
    seed: u64,
    n_masks: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (layout, sample)) in samples.iter().enumerate() {
        for m in 0..n_masks {
            let plan = sample_mask(layout, ratio, rng::derive_seed(seed, &[rng::TAG_MASK, u64::MAX - m as u64, i as u64]));
            sum += forward_loss(params, sample, &plan)?.total;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
