//! Dual-path multi-scale token embedding.
//!
//! A scale-0 token is embedded as `φ(patch) + p`. A scale-`s` token adds a
//! residual detail path:
//!
//! ```text
//! z = φ(P↓) + ZeroMLP(Agg(φ(P_grid))) + p
//! ```
//!
//! where `P↓` is the patch average-pooled by `2^s` down to the base edge,
//! `P_grid` is its `(2^s)³` grid of base-edge sub-patches, and `Agg` merges
//! 2×2×2 neighbourhoods of sub-patch features with one shared affine map,
//! applied `s` times. `φ` is one shared affine map for all three uses.

use crate::real::Real;
use crate::tokenizer::TokenRec;

use super::block::linear_bwd;
use super::ops::{gelu_backward, gelu_forward, linear_forward};
use super::params::ModelParams;
use super::{positional_embedding, ModelError, Result};

/// Spatial average pooling of a `(t, z, y, x)` cube of edge `edge` by `factor`.
pub fn downsample_patch<F: Real>(voxels: &[F], frames: usize, edge: usize, factor: usize) -> Vec<F> {
    let out_edge = edge / factor;
    let inv = F::one() / F::of((factor * factor * factor) as f64);
    let mut out = Vec::with_capacity(frames * out_edge.pow(3));
    for t in 0..frames {
        let f = &voxels[t * edge.pow(3)..(t + 1) * edge.pow(3)];
        for z in 0..out_edge {
            for y in 0..out_edge {
                for x in 0..out_edge {
                    let mut s = F::zero();
                    for dz in 0..factor {
                        for dy in 0..factor {
                            let row = ((z * factor + dz) * edge + y * factor + dy) * edge + x * factor;
                            for dx in 0..factor {
                                s += f[row + dx];
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

/// Splits a cube into `(edge/sub)³` sub-cubes, x-fastest grid order, each
/// flattened `(t, z, y, x)`.
pub fn sub_patches<F: Real>(voxels: &[F], frames: usize, edge: usize, sub: usize) -> Vec<Vec<F>> {
    let n = edge / sub;
    let mut out = Vec::with_capacity(n * n * n);
    for cz in 0..n {
        for cy in 0..n {
            for cx in 0..n {
                let mut p = Vec::with_capacity(frames * sub.pow(3));
                for t in 0..frames {
                    let base = t * edge.pow(3);
                    for z in 0..sub {
                        for y in 0..sub {
                            let row = base + ((cz * sub + z) * edge + cy * sub + y) * edge + cx * sub;
                            p.extend_from_slice(&voxels[row..row + sub]);
                        }
                    }
                }
                out.push(p);
            }
        }
    }
    out
}

/// `φ` applied to one flattened base patch.
pub fn apply_phi<F: Real>(params: &ModelParams<F>, patch: &[F]) -> Vec<F> {
    let l = &params.layout.phi;
    linear_forward(patch, 1, params.get(l.w), params.get(l.b), l.din, l.dout)
}

/// Embeds a single token at the encoder width.
pub fn embed_token<F: Real>(params: &ModelParams<F>, tok: &TokenRec, voxels: &[F]) -> Result<Vec<F>> {
    let pos = positional_embedding(tok, params.config.base_edge, params.config.embed_dim)?;
    let pos: Vec<F> = pos.into_iter().map(F::of).collect();
    let (z, _) = embed_forward(params, std::slice::from_ref(tok), &[voxels], &[pos])?;
    Ok(z)
}

/// One level of 2×2×2 grid aggregation.
#[derive(Debug, Clone)]
struct AggLevel<F> {
    /// Concatenated children, `rows × 8C`.
    input: Vec<F>,
    /// Source row in the previous level for each of the 8 slots of each row.
    gather: Vec<usize>,
    rows: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EmbedCache<F> {
    phi_in: Vec<F>,
    phi_rows: usize,
    /// Row of `φ(patch)` / `φ(P↓)` for each token.
    direct: Vec<usize>,
    levels: Vec<AggLevel<F>>,
    /// (token position, level, row) of every multi-scale token's aggregate.
    coarse: Vec<(usize, usize, usize)>,
    zero_in: Vec<F>,
    zero_pre: Vec<F>,
    zero_hidden: Vec<F>,
}

/// Batched embedding of `tokens` with their voxel vectors and positional
/// codes; returns `N × C`.
pub(crate) fn embed_forward<F: Real, V: AsRef<[F]>>(
    p: &ModelParams<F>,
    tokens: &[TokenRec],
    voxels: &[V],
    pos: &[Vec<F>],
) -> Result<(Vec<F>, EmbedCache<F>)> {
    let cfg = &p.config;
    let c = cfg.embed_dim;
    let (b, t) = (cfg.base_edge, cfg.frames);
    let plen = cfg.patch_len();

    let mut phi_in: Vec<F> = Vec::new();
    let mut direct = Vec::with_capacity(tokens.len());
    // Per multi-scale token: (position, scale, rows of its sub-patch grid).
    let mut grids: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut rows = 0usize;
    for (i, (tok, vox)) in tokens.iter().zip(voxels).enumerate() {
        let vox = vox.as_ref();
        if tok.scale >= cfg.num_scales {
            return Err(ModelError::ShapeMismatch(format!(
                "token scale {} with {} scales",
                tok.scale, cfg.num_scales
            )));
        }
        let edge = b << tok.scale;
        let expected = t * edge.pow(3);
        if vox.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                got: vox.len(),
            });
        }
        if tok.scale == 0 {
            phi_in.extend_from_slice(vox);
            direct.push(rows);
            rows += 1;
            continue;
        }
        phi_in.extend(downsample_patch(vox, t, edge, 1 << tok.scale));
        direct.push(rows);
        rows += 1;
        let subs = sub_patches(vox, t, edge, b);
        let ids: Vec<usize> = (rows..rows + subs.len()).collect();
        for s in subs {
            phi_in.extend(s);
        }
        rows += ids.len();
        grids.push((i, tok.scale, ids));
    }
    let phi = &p.layout.phi;
    debug_assert_eq!(phi_in.len(), rows * plen);
    let phi_out = linear_forward(&phi_in, rows, p.get(phi.w), p.get(phi.b), plen, c);

    // Hierarchical aggregation; outs[0] is phi_out, outs[l] the output of
    // aggregation level l.
    let agg = &p.layout.grid_agg;
    let mut outs: Vec<Vec<F>> = vec![phi_out];
    let mut levels: Vec<AggLevel<F>> = Vec::new();
    let mut coarse = Vec::new();
    let mut cur: Vec<(usize, usize, Vec<usize>)> = grids.into_iter().map(|(i, s, ids)| (i, 1 << s, ids)).collect();
    while !cur.is_empty() {
        let level = outs.len();
        let prev = &outs[level - 1];
        let mut input = Vec::new();
        let mut gather = Vec::new();
        let mut next = Vec::with_capacity(cur.len());
        let mut out_rows = 0;
        for (tok, side, ids) in cur {
            let half = side / 2;
            let mut new_ids = Vec::with_capacity(half.pow(3));
            for z in 0..half {
                for y in 0..half {
                    for x in 0..half {
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let src = ids[((2 * z + dz) * side + 2 * y + dy) * side + 2 * x + dx];
                                    gather.push(src);
                                    input.extend_from_slice(&prev[src * c..(src + 1) * c]);
                                }
                            }
                        }
                        new_ids.push(out_rows);
                        out_rows += 1;
                    }
                }
            }
            if half == 1 {
                coarse.push((tok, level, new_ids[0]));
            } else {
                next.push((tok, half, new_ids));
            }
        }
        let out = linear_forward(&input, out_rows, p.get(agg.w), p.get(agg.b), 8 * c, c);
        levels.push(AggLevel {
            input,
            gather,
            rows: out_rows,
        });
        outs.push(out);
        cur = next;
    }

    // Residual detail path for multi-scale tokens.
    let mut zero_in = Vec::with_capacity(coarse.len() * c);
    for &(_, level, row) in &coarse {
        zero_in.extend_from_slice(&outs[level][row * c..(row + 1) * c]);
    }
    let (f1, f2) = (&p.layout.zero_fc1, &p.layout.zero_fc2);
    let nc = coarse.len();
    let zero_pre = linear_forward(&zero_in, nc, p.get(f1.w), p.get(f1.b), f1.din, f1.dout);
    let zero_hidden = gelu_forward(&zero_pre);
    let zero_out = linear_forward(&zero_hidden, nc, p.get(f2.w), p.get(f2.b), f2.din, f2.dout);

    let phi_out = &outs[0];
    let mut z = Vec::with_capacity(tokens.len() * c);
    for (i, &r) in direct.iter().enumerate() {
        z.extend_from_slice(&phi_out[r * c..(r + 1) * c]);
        debug_assert_eq!(pos[i].len(), c);
    }
    for (k, &(i, _, _)) in coarse.iter().enumerate() {
        for (a, &d) in z[i * c..(i + 1) * c].iter_mut().zip(&zero_out[k * c..(k + 1) * c]) {
            *a += d;
        }
    }
    for (i, pi) in pos.iter().enumerate() {
        for (a, &q) in z[i * c..(i + 1) * c].iter_mut().zip(pi) {
            *a += q;
        }
    }

    Ok((
        z,
        EmbedCache {
            phi_in,
            phi_rows: rows,
            direct,
            levels,
            coarse,
            zero_in,
            zero_pre,
            zero_hidden,
        },
    ))
}

/// Accumulates embedding parameter gradients given `dz` (`N × C`).
pub(crate) fn embed_backward<F: Real>(p: &ModelParams<F>, grads: &mut [F], cache: &EmbedCache<F>, dz: &[F]) {
    let c = p.config.embed_dim;
    let mut d_levels: Vec<Vec<F>> = Vec::with_capacity(cache.levels.len() + 1);
    d_levels.push(vec![F::zero(); cache.phi_rows * c]);
    for lvl in &cache.levels {
        d_levels.push(vec![F::zero(); lvl.rows * c]);
    }
    for (i, &r) in cache.direct.iter().enumerate() {
        for (a, &g) in d_levels[0][r * c..(r + 1) * c].iter_mut().zip(&dz[i * c..(i + 1) * c]) {
            *a += g;
        }
    }

    let nc = cache.coarse.len();
    if nc > 0 {
        let mut dzero = Vec::with_capacity(nc * c);
        for &(i, _, _) in &cache.coarse {
            dzero.extend_from_slice(&dz[i * c..(i + 1) * c]);
        }
        let (f1, f2) = (p.layout.zero_fc1, p.layout.zero_fc2);
        let dhidden = linear_bwd(p, grads, &f2, &cache.zero_hidden, &dzero, nc, true).expect("dx");
        let dpre = gelu_backward(&cache.zero_pre, &dhidden);
        let dzero_in = linear_bwd(p, grads, &f1, &cache.zero_in, &dpre, nc, true).expect("dx");
        for (k, &(_, level, row)) in cache.coarse.iter().enumerate() {
            for (a, &g) in d_levels[level][row * c..(row + 1) * c].iter_mut().zip(&dzero_in[k * c..(k + 1) * c]) {
                *a += g;
            }
        }
        let agg = p.layout.grid_agg;
        for level in (1..d_levels.len()).rev() {
            let lvl = &cache.levels[level - 1];
            let dout = std::mem::take(&mut d_levels[level]);
            let dinput = linear_bwd(p, grads, &agg, &lvl.input, &dout, lvl.rows, true).expect("dx");
            let prev = &mut d_levels[level - 1];
            for (slot, &src) in lvl.gather.iter().enumerate() {
                for (a, &g) in prev[src * c..(src + 1) * c].iter_mut().zip(&dinput[slot * c..(slot + 1) * c]) {
                    *a += g;
                }
            }
        }
    }

    let phi = p.layout.phi;
    linear_bwd(p, grads, &phi, &cache.phi_in, &d_levels[0], cache.phi_rows, false);
}
