use crate::real::Real;
use crate::tokenizer::{extract_token_voxels, MaskPlan, TokenLayout, TokenRec};
use crate::volume::Volume4D;

use super::block::{block_backward, block_forward, linear_bwd, BlockCache};
use super::embed::{embed_backward, embed_forward, EmbedCache};
use super::ops::linear_forward;
use super::params::ModelParams;
use super::posenc::sinusoid_3d;
use super::{LossReport, ModelError, Result};

/// Variance floor used when standardizing targets.
pub const PATCH_NORM_VAR_FLOOR: f64 = 1e-6;

/// Neumaier-compensated sum; keeps loss values reproducible to the last bit
/// of the exact sum so finite differences of the loss are not swamped by
/// accumulation error.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// One tokenized input: tokens in canonical order with their voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub tokens: Vec<TokenRec>,
    pub voxels: Vec<Vec<F>>,
}

impl<F: Real> Sample<F> {
    pub fn from_volume(vol: &Volume4D, layout: &TokenLayout) -> Result<Self> {
        let voxels = layout
            .tokens
            .iter()
            .map(|t| {
                extract_token_voxels(vol, t, layout.base_edge).map(|v| v.into_iter().map(|x| F::of(x as f64)).collect())
            })
            .collect::<Result<Vec<Vec<F>>, _>>()?;
        Ok(Sample {
            tokens: layout.tokens.clone(),
            voxels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Activations recorded by [`forward_with_tape`].
#[derive(Debug, Clone)]
pub struct Tape<F> {
    n: usize,
    visible: Vec<usize>,
    scales: Vec<usize>,
    embed: EmbedCache<F>,
    enc: Vec<BlockCache<F>>,
    enc_out: Vec<F>,
    dec: Vec<BlockCache<F>>,
    decoded: Vec<F>,
    /// Masked token indices grouped by scale.
    masked_by_scale: Vec<Vec<usize>>,
    /// Per scale, `dL/dpred` rows for the masked tokens of that scale.
    dpred: Vec<Vec<F>>,
}

fn encoder_pos<F: Real>(tokens: &[TokenRec], base_edge: usize, dim: usize) -> Result<Vec<Vec<F>>> {
    tokens
        .iter()
        .map(|t| Ok(sinusoid_3d(t.center(base_edge), dim)?.into_iter().map(F::of).collect()))
        .collect()
}

fn run_blocks<F: Real>(
    p: &ModelParams<F>,
    blocks: &[super::BlockParams],
    mut x: Vec<F>,
    n: usize,
) -> (Vec<F>, Vec<BlockCache<F>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for blk in blocks {
        let (y, c) = block_forward(p, blk, &x, n);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

/// Runs the encoder blocks over `n` visible embeddings (`n × C`).
pub fn encoder_forward<F: Real>(params: &ModelParams<F>, visible: &[F], n: usize) -> Result<Vec<F>> {
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    let c = params.config.embed_dim;
    if visible.len() != n * c {
        return Err(ModelError::ShapeMismatch(format!("{} values for {n} × {c}", visible.len())));
    }
    Ok(run_blocks(params, &params.layout.enc, visible.to_vec(), n).0)
}

/// Builds the full decoder sequence: projected latents at visible slots, the
/// mask token elsewhere, plus the decoder positional code and scale row.
pub fn decoder_inputs<F: Real>(
    params: &ModelParams<F>,
    latents: &[F],
    tokens: &[TokenRec],
    plan: &MaskPlan,
) -> Result<Vec<F>> {
    let dd = params.config.dec_dim;
    if plan.masked.len() != tokens.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "mask plan over {} tokens, layout has {}",
            plan.masked.len(),
            tokens.len()
        )));
    }
    let expected = plan.masked.iter().filter(|&&m| !m).count();
    if latents.len() != expected * dd {
        return Err(ModelError::CountMismatch {
            expected,
            got: latents.len() / dd,
        });
    }
    let mask = params.get(params.layout.mask_token);
    let table = params.get(params.layout.scale_table);
    let mut out = Vec::with_capacity(tokens.len() * dd);
    let mut v = 0;
    for (tok, &m) in tokens.iter().zip(&plan.masked) {
        let pos = sinusoid_3d(tok.center(params.config.base_edge), dd)?;
        let src = if m {
            mask
        } else {
            v += 1;
            &latents[(v - 1) * dd..v * dd]
        };
        let e = &table[tok.scale * dd..(tok.scale + 1) * dd];
        out.extend((0..dd).map(|c| src[c] + F::of(pos[c]) + e[c]));
    }
    Ok(out)
}

/// Applies the per-scale head `ψ_s` to every decoded row.
pub fn reconstruct<F: Real>(params: &ModelParams<F>, decoded: &[F], tokens: &[TokenRec]) -> Vec<Vec<F>> {
    let dd = params.config.dec_dim;
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let h = &params.layout.heads[t.scale];
            linear_forward(&decoded[i * dd..(i + 1) * dd], 1, params.get(h.w), params.get(h.b), dd, h.dout)
        })
        .collect()
}

/// Standardizes a target to zero mean and unit variance, flooring the variance.
pub fn patch_normalize<F: Real>(y: &[F]) -> Vec<F> {
    let n = y.len() as f64;
    let mean = y.iter().map(|&v| v.to_f64()).sum::<f64>() / n;
    let var = y.iter().map(|&v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
    let sd = var.max(PATCH_NORM_VAR_FLOOR).sqrt();
    y.iter().map(|&v| F::of((v.to_f64() - mean) / sd)).collect()
}

/// Scale-normalized masked reconstruction loss.
///
/// `per_scale[s] = Σ_{i∈M_s} ‖pred_i − y_i‖² / (|M_s| · V_s)`, summed over
/// scales; scales without masked tokens contribute 0.
pub fn scale_aware_loss<F: Real>(
    predictions: &[Vec<F>],
    targets: &[Vec<F>],
    tokens: &[TokenRec],
    base_edge: usize,
    num_scales: usize,
    plan: &MaskPlan,
    patch_norm: bool,
) -> Result<LossReport> {
    let n = tokens.len();
    if predictions.len() != n || targets.len() != n || plan.masked.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "{} predictions, {} targets, {} mask entries for {n} tokens",
            predictions.len(),
            targets.len(),
            plan.masked.len()
        )));
    }
    let mut sums = vec![Compensated::default(); num_scales];
    let mut counts = vec![0usize; num_scales];
    for (i, tok) in tokens.iter().enumerate() {
        if !plan.masked[i] {
            continue;
        }
        if tok.scale >= num_scales {
            return Err(ModelError::ShapeMismatch(format!("token scale {} ≥ {num_scales}", tok.scale)));
        }
        let (p, y) = (&predictions[i], &targets[i]);
        if p.len() != y.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "token {i}: prediction {} vs target {}",
                p.len(),
                y.len()
            )));
        }
        let y = if patch_norm { patch_normalize(y) } else { y.clone() };
        for (&a, &b) in p.iter().zip(&y) {
            sums[tok.scale].add((a - b).to_f64().powi(2));
        }
        counts[tok.scale] += 1;
    }
    Ok(report(sums.into_iter().map(Compensated::value).collect(), counts, base_edge))
}

fn report(sums: Vec<f64>, counts: Vec<usize>, base_edge: usize) -> LossReport {
    let volumes: Vec<usize> = (0..sums.len()).map(|s| (base_edge << s).pow(3)).collect();
    let per_scale: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .zip(&volumes)
        .map(|((&sum, &m), &v)| if m == 0 { 0.0 } else { sum / (m * v) as f64 })
        .collect();
    LossReport {
        total: per_scale.iter().sum(),
        per_scale,
        masked_counts: counts,
        voxel_volumes: volumes,
    }
}

/// Full forward pass recording everything [`backward`] needs.
pub fn forward_with_tape<F: Real>(
    params: &ModelParams<F>,
    sample: &Sample<F>,
    plan: &MaskPlan,
) -> Result<(LossReport, Tape<F>)> {
    let cfg = &params.config;
    let n = sample.len();
    if sample.voxels.len() != n || plan.masked.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "{n} tokens, {} voxel rows, {} mask entries",
            sample.voxels.len(),
            plan.masked.len()
        )));
    }
    let visible = plan.visible_indices();
    if visible.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let vis_tokens: Vec<TokenRec> = visible.iter().map(|&i| sample.tokens[i]).collect();
    let vis_voxels: Vec<&[F]> = visible.iter().map(|&i| sample.voxels[i].as_slice()).collect();
    let pos = encoder_pos::<F>(&vis_tokens, cfg.base_edge, cfg.embed_dim)?;
    let (z, embed) = embed_forward(params, &vis_tokens, &vis_voxels, &pos)?;

    let nv = visible.len();
    let (enc_out, enc) = run_blocks(params, &params.layout.enc, z, nv);
    let e2d = &params.layout.enc_to_dec;
    let latents = linear_forward(&enc_out, nv, params.get(e2d.w), params.get(e2d.b), e2d.din, e2d.dout);
    let u = decoder_inputs(params, &latents, &sample.tokens, plan)?;
    let (decoded, dec) = run_blocks(params, &params.layout.dec, u, n);

    let k = cfg.num_scales;
    let dd = cfg.dec_dim;
    let mut masked_by_scale = vec![Vec::new(); k];
    for (i, t) in sample.tokens.iter().enumerate() {
        if plan.masked[i] {
            masked_by_scale[t.scale].push(i);
        }
    }
    let mut sums = vec![Compensated::default(); k];
    let mut dpred = Vec::with_capacity(k);
    for (s, idx) in masked_by_scale.iter().enumerate() {
        let head = &params.layout.heads[s];
        let mut rows = Vec::with_capacity(idx.len() * dd);
        for &i in idx {
            rows.extend_from_slice(&decoded[i * dd..(i + 1) * dd]);
        }
        let pred = linear_forward(&rows, idx.len(), params.get(head.w), params.get(head.b), dd, head.dout);
        let denom = F::of((idx.len().max(1) * cfg.voxels(s)) as f64);
        let two = F::of(2.0);
        let mut d = Vec::with_capacity(pred.len());
        for (r, &i) in idx.iter().enumerate() {
            let y = &sample.voxels[i];
            if y.len() != head.dout {
                return Err(ModelError::LengthMismatch {
                    expected: head.dout,
                    got: y.len(),
                });
            }
            let y = if cfg.patch_norm_targets { patch_normalize(y) } else { y.clone() };
            for (&a, &b) in pred[r * head.dout..(r + 1) * head.dout].iter().zip(&y) {
                let diff = a - b;
                sums[s].add(diff.to_f64().powi(2));
                d.push(two * diff / denom);
            }
        }
        dpred.push(d);
    }
    let counts = masked_by_scale.iter().map(Vec::len).collect();
    let loss = report(sums.into_iter().map(Compensated::value).collect(), counts, cfg.base_edge);
    let tape = Tape {
        n,
        visible,
        scales: sample.tokens.iter().map(|t| t.scale).collect(),
        embed,
        enc,
        enc_out,
        dec,
        decoded,
        masked_by_scale,
        dpred,
    };
    Ok((loss, tape))
}

/// Loss of one sample under a mask plan.
pub fn forward_loss<F: Real>(params: &ModelParams<F>, sample: &Sample<F>, plan: &MaskPlan) -> Result<LossReport> {
    forward_with_tape(params, sample, plan).map(|(l, _)| l)
}

/// Exact gradient of the total loss with respect to every parameter.
pub fn backward<F: Real>(params: &ModelParams<F>, tape: &Tape<F>) -> Vec<F> {
    let mut grads = params.zeros_like();
    backward_into(params, tape, &mut grads);
    grads
}

/// Accumulates the gradient of `tape`'s loss into `grads`.
pub fn backward_into<F: Real>(params: &ModelParams<F>, tape: &Tape<F>, grads: &mut [F]) {
    let l = &params.layout;
    let dd = params.config.dec_dim;
    let n = tape.n;

    let mut d_dec = vec![F::zero(); n * dd];
    for (s, idx) in tape.masked_by_scale.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let mut rows = Vec::with_capacity(idx.len() * dd);
        for &i in idx {
            rows.extend_from_slice(&tape.decoded[i * dd..(i + 1) * dd]);
        }
        let dx = linear_bwd(params, grads, &l.heads[s], &rows, &tape.dpred[s], idx.len(), true).expect("dx");
        for (r, &i) in idx.iter().enumerate() {
            d_dec[i * dd..(i + 1) * dd].copy_from_slice(&dx[r * dd..(r + 1) * dd]);
        }
    }

    let mut du = d_dec;
    for (blk, cache) in l.dec.iter().zip(&tape.dec).rev() {
        du = block_backward(params, grads, blk, cache, &du);
    }

    let mut is_visible = vec![false; n];
    for &i in &tape.visible {
        is_visible[i] = true;
    }
    let mut dlat = Vec::with_capacity(tape.visible.len() * dd);
    for i in 0..n {
        let row = &du[i * dd..(i + 1) * dd];
        let s = tape.scales[i];
        let st = l.scale_table.offset + s * dd;
        for (g, &d) in grads[st..st + dd].iter_mut().zip(row) {
            *g += d;
        }
        if is_visible[i] {
            dlat.extend_from_slice(row);
        } else {
            for (g, &d) in grads[l.mask_token.range()].iter_mut().zip(row) {
                *g += d;
            }
        }
    }

    let nv = tape.visible.len();
    let mut dz = linear_bwd(params, grads, &l.enc_to_dec, &tape.enc_out, &dlat, nv, true).expect("dx");
    for (blk, cache) in l.enc.iter().zip(&tape.enc).rev() {
        dz = block_backward(params, grads, blk, cache, &dz);
    }
    embed_backward(params, grads, &tape.embed, &dz);
}
