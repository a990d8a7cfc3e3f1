use rayon::prelude::*;

use crate::real::Real;

use super::ops::{
    dot, gelu_backward, gelu_forward, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward,
    NormCache,
};
use super::params::{BlockParams, LinearParams, ModelParams, NormParams};

/// Activations saved by [`block_forward`] for [`block_backward`].
#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    n: usize,
    ln1: NormCache<F>,
    attn_in: Vec<F>,
    qkv: Vec<F>,
    /// Softmax probabilities, `heads × n × n`.
    probs: Vec<F>,
    ctx: Vec<F>,
    ln2: NormCache<F>,
    mlp_in: Vec<F>,
    hidden_pre: Vec<F>,
    hidden: Vec<F>,
}

fn linear<F: Real>(p: &ModelParams<F>, l: &LinearParams, x: &[F], rows: usize) -> Vec<F> {
    linear_forward(x, rows, p.get(l.w), p.get(l.b), l.din, l.dout)
}

pub(crate) fn linear_bwd<F: Real>(
    p: &ModelParams<F>,
    grads: &mut [F],
    l: &LinearParams,
    x: &[F],
    dy: &[F],
    rows: usize,
    want_dx: bool,
) -> Option<Vec<F>> {
    let (dw, db) = grads[l.range()].split_at_mut(l.w.len);
    linear_backward(x, dy, rows, p.get(l.w), l.din, l.dout, dw, db, want_dx)
}

fn norm<F: Real>(p: &ModelParams<F>, nrm: &NormParams, x: &[F]) -> (Vec<F>, NormCache<F>) {
    layer_norm_forward(x, nrm.dim, p.get(nrm.gamma), p.get(nrm.beta))
}

fn norm_bwd<F: Real>(p: &ModelParams<F>, grads: &mut [F], nrm: &NormParams, cache: &NormCache<F>, dy: &[F]) -> Vec<F> {
    let (dg, db) = grads[nrm.gamma.offset..nrm.beta.offset + nrm.beta.len].split_at_mut(nrm.gamma.len);
    layer_norm_backward(dy, nrm.dim, p.get(nrm.gamma), cache, dg, db)
}

fn add<F: Real>(a: &[F], b: &[F]) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Multi-head softmax attention core on packed `[q | k | v]` rows.
fn attention<F: Real>(qkv: &[F], n: usize, dim: usize, heads: usize) -> (Vec<F>, Vec<F>) {
    let d = dim / heads;
    let scale = F::one() / F::of(d as f64).sqrt();
    let stride = 3 * dim;
    let mut probs = vec![F::zero(); heads * n * n];
    probs.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let (h, i) = (r / n, r % n);
        let q = &qkv[i * stride + h * d..i * stride + (h + 1) * d];
        let mut max = F::neg_infinity();
        for (j, s) in row.iter_mut().enumerate() {
            let k = &qkv[j * stride + dim + h * d..j * stride + dim + (h + 1) * d];
            *s = dot(q, k) * scale;
            max = max.max(*s);
        }
        let mut sum = F::zero();
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    });
    let mut ctx = vec![F::zero(); n * dim];
    ctx.par_chunks_mut(dim).enumerate().for_each(|(i, out)| {
        for h in 0..heads {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let o = &mut out[h * d..(h + 1) * d];
            for (j, &pj) in p.iter().enumerate() {
                let v = &qkv[j * stride + 2 * dim + h * d..j * stride + 2 * dim + (h + 1) * d];
                for (oc, &vc) in o.iter_mut().zip(v) {
                    *oc += pj * vc;
                }
            }
        }
    });
    (probs, ctx)
}

fn attention_backward<F: Real>(qkv: &[F], probs: &[F], dctx: &[F], n: usize, dim: usize, heads: usize) -> Vec<F> {
    let d = dim / heads;
    let scale = F::one() / F::of(d as f64).sqrt();
    let stride = 3 * dim;
    // dS = P ⊙ (dP - rowsum(P ⊙ dP)), dP_ij = <dctx_i, v_j>.
    let mut ds = vec![F::zero(); heads * n * n];
    ds.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let (h, i) = (r / n, r % n);
        let p = &probs[r * n..(r + 1) * n];
        let g = &dctx[i * dim + h * d..i * dim + (h + 1) * d];
        let mut acc = F::zero();
        for (j, dsj) in row.iter_mut().enumerate() {
            let v = &qkv[j * stride + 2 * dim + h * d..j * stride + 2 * dim + (h + 1) * d];
            *dsj = dot(g, v);
            acc += p[j] * *dsj;
        }
        for (dsj, &pj) in row.iter_mut().zip(p) {
            *dsj = pj * (*dsj - acc);
        }
    });
    let mut dqkv = vec![F::zero(); n * stride];
    dqkv.par_chunks_mut(stride).enumerate().for_each(|(r, out)| {
        for h in 0..heads {
            let (dq, rest) = out[h * d..].split_at_mut(d);
            let _ = rest;
            for j in 0..n {
                let s = ds[(h * n + r) * n + j];
                if s != F::zero() {
                    let k = &qkv[j * stride + dim + h * d..j * stride + dim + (h + 1) * d];
                    for (a, &kc) in dq.iter_mut().zip(k) {
                        *a += scale * s * kc;
                    }
                }
            }
        }
        for h in 0..heads {
            for i in 0..n {
                let s = ds[(h * n + i) * n + r];
                let p = probs[(h * n + i) * n + r];
                let q = &qkv[i * stride + h * d..i * stride + (h + 1) * d];
                let g = &dctx[i * dim + h * d..i * dim + (h + 1) * d];
                let dk = &mut out[dim + h * d..dim + (h + 1) * d];
                for (a, &qc) in dk.iter_mut().zip(q) {
                    *a += scale * s * qc;
                }
                let dv = &mut out[2 * dim + h * d..2 * dim + (h + 1) * d];
                for (a, &gc) in dv.iter_mut().zip(g) {
                    *a += p * gc;
                }
            }
        }
    });
    dqkv
}

/// One pre-norm block over `n` rows of width `blk.dim`.
pub fn block_forward<F: Real>(p: &ModelParams<F>, blk: &BlockParams, x: &[F], n: usize) -> (Vec<F>, BlockCache<F>) {
    let dim = blk.dim;
    let (attn_in, ln1) = norm(p, &blk.ln1, x);
    let qkv = linear(p, &blk.qkv, &attn_in, n);
    let (probs, ctx) = attention(&qkv, n, dim, blk.heads);
    let attn_out = linear(p, &blk.proj, &ctx, n);
    let x1 = add(x, &attn_out);
    let (mlp_in, ln2) = norm(p, &blk.ln2, &x1);
    let hidden_pre = linear(p, &blk.fc1, &mlp_in, n);
    let hidden = gelu_forward(&hidden_pre);
    let mlp_out = linear(p, &blk.fc2, &hidden, n);
    let y = add(&x1, &mlp_out);
    (
        y,
        BlockCache {
            n,
            ln1,
            attn_in,
            qkv,
            probs,
            ctx,
            ln2,
            mlp_in,
            hidden_pre,
            hidden,
        },
    )
}

/// Accumulates parameter gradients into `grads` and returns `dx`.
pub fn block_backward<F: Real>(
    p: &ModelParams<F>,
    grads: &mut [F],
    blk: &BlockParams,
    cache: &BlockCache<F>,
    dy: &[F],
) -> Vec<F> {
    let n = cache.n;
    let dhidden = linear_bwd(p, grads, &blk.fc2, &cache.hidden, dy, n, true).expect("dx");
    let dpre = gelu_backward(&cache.hidden_pre, &dhidden);
    let dmlp_in = linear_bwd(p, grads, &blk.fc1, &cache.mlp_in, &dpre, n, true).expect("dx");
    let mut dx1 = norm_bwd(p, grads, &blk.ln2, &cache.ln2, &dmlp_in);
    for (a, &b) in dx1.iter_mut().zip(dy) {
        *a += b;
    }
    let dctx = linear_bwd(p, grads, &blk.proj, &cache.ctx, &dx1, n, true).expect("dx");
    let dqkv = attention_backward(&cache.qkv, &cache.probs, &dctx, n, blk.dim, blk.heads);
    let dattn_in = linear_bwd(p, grads, &blk.qkv, &cache.attn_in, &dqkv, n, true).expect("dx");
    let mut dx = norm_bwd(p, grads, &blk.ln1, &cache.ln1, &dattn_in);
    for (a, &b) in dx.iter_mut().zip(&dx1) {
        *a += b;
    }
    dx
}
