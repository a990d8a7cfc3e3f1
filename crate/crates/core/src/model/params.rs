//! Flat parameter storage.
//!
//! Every learnable tensor lives in one contiguous buffer; [`ParamLayout`]
//! maps names and roles to ranges. Gradients use a buffer of the same length
//! and layout, which keeps the optimizer, the finite-difference checker and
//! the checkpoint writer independent of the architecture.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::rng;

use super::{ModelConfig, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef {
    pub offset: usize,
    pub len: usize,
}

impl TensorRef {
    #[inline]
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Weight (`out × in`) immediately followed by bias (`out`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub w: TensorRef,
    pub b: TensorRef,
    pub din: usize,
    pub dout: usize,
}

impl LinearParams {
    /// Combined range of weight and bias.
    pub fn range(&self) -> Range<usize> {
        self.w.offset..self.b.offset + self.b.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: TensorRef,
    pub beta: TensorRef,
    pub dim: usize,
}

/// Pre-norm transformer block: `x + Attn(LN1 x)`, then `x + MLP(LN2 x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub ln1: NormParams,
    pub qkv: LinearParams,
    pub proj: LinearParams,
    pub ln2: NormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
    pub dim: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub phi: LinearParams,
    pub grid_agg: LinearParams,
    pub zero_fc1: LinearParams,
    pub zero_fc2: LinearParams,
    pub enc: Vec<BlockParams>,
    pub enc_to_dec: LinearParams,
    pub mask_token: TensorRef,
    pub scale_table: TensorRef,
    pub dec: Vec<BlockParams>,
    pub heads: Vec<LinearParams>,
    pub entries: Vec<TensorEntry>,
    pub total: usize,
}

#[derive(Default)]
struct Builder {
    entries: Vec<TensorEntry>,
    total: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> TensorRef {
        let len = shape.iter().product();
        let r = TensorRef {
            offset: self.total,
            len,
        };
        self.entries.push(TensorEntry {
            name,
            shape,
            offset: self.total,
            len,
        });
        self.total += len;
        r
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearParams {
        let w = self.tensor(format!("{name}.weight"), vec![dout, din]);
        let b = self.tensor(format!("{name}.bias"), vec![dout]);
        LinearParams { w, b, din, dout }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormParams {
        let gamma = self.tensor(format!("{name}.gamma"), vec![dim]);
        let beta = self.tensor(format!("{name}.beta"), vec![dim]);
        NormParams { gamma, beta, dim }
    }

    fn block(&mut self, name: &str, dim: usize, heads: usize, hidden: usize) -> BlockParams {
        BlockParams {
            ln1: self.norm(&format!("{name}.ln1"), dim),
            qkv: self.linear(&format!("{name}.attn.qkv"), dim, 3 * dim),
            proj: self.linear(&format!("{name}.attn.proj"), dim, dim),
            ln2: self.norm(&format!("{name}.ln2"), dim),
            fc1: self.linear(&format!("{name}.mlp.fc1"), dim, hidden),
            fc2: self.linear(&format!("{name}.mlp.fc2"), hidden, dim),
            dim,
            heads,
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.embed_dim;
        let dd = cfg.dec_dim;
        let mut b = Builder::default();
        let phi = b.linear("phi", cfg.patch_len(), c);
        let grid_agg = b.linear("grid_agg", 8 * c, c);
        let zero_fc1 = b.linear("zero_mlp.fc1", c, cfg.mlp_hidden(c));
        let zero_fc2 = b.linear("zero_mlp.fc2", cfg.mlp_hidden(c), c);
        let enc = (0..cfg.enc_depth)
            .map(|i| b.block(&format!("enc.{i}"), c, cfg.enc_heads, cfg.mlp_hidden(c)))
            .collect();
        let enc_to_dec = b.linear("enc_to_dec", c, dd);
        let mask_token = b.tensor("mask_token".into(), vec![dd]);
        let scale_table = b.tensor("scale_table".into(), vec![cfg.num_scales, dd]);
        let dec = (0..cfg.dec_depth)
            .map(|i| b.block(&format!("dec.{i}"), dd, cfg.dec_heads, cfg.mlp_hidden(dd)))
            .collect();
        let heads = (0..cfg.num_scales)
            .map(|s| b.linear(&format!("psi.{s}"), dd, cfg.frames * cfg.voxels(s)))
            .collect();
        ParamLayout {
            phi,
            grid_agg,
            zero_fc1,
            zero_fc2,
            enc,
            enc_to_dec,
            mask_token,
            scale_table,
            dec,
            heads,
            entries: b.entries,
            total: b.total,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Tensor holding flat index `idx`, and the index within that tensor.
    pub fn locate(&self, idx: usize) -> Option<(&TensorEntry, usize)> {
        let pos = self.entries.partition_point(|e| e.offset + e.len <= idx);
        self.entries.get(pos).map(|e| (e, idx - e.offset))
    }

    fn linears(&self) -> Vec<LinearParams> {
        let mut v = vec![self.phi, self.grid_agg, self.zero_fc1, self.zero_fc2, self.enc_to_dec];
        for blk in self.enc.iter().chain(&self.dec) {
            v.extend([blk.qkv, blk.proj, blk.fc1, blk.fc2]);
        }
        v.extend(self.heads.iter().copied());
        v
    }

    fn norms(&self) -> Vec<NormParams> {
        self.enc.iter().chain(&self.dec).flat_map(|b| [b.ln1, b.ln2]).collect()
    }
}

/// Model parameters in scalar type `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<F>,
}

impl<F: Real> ModelParams<F> {
    /// Seeded initialization: Xavier-uniform weights, zero biases, unit layer
    /// norms, `N(0, 0.02²)` mask token and scale table, and an all-zero final
    /// ZeroMLP layer.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut data = vec![0f64; layout.total];
        let mut rng = rng::stream(seed, &[rng::TAG_INIT]);
        for lin in layout.linears() {
            if lin == layout.zero_fc2 {
                continue;
            }
            let a = (6.0 / (lin.din + lin.dout) as f64).sqrt();
            for v in &mut data[lin.w.range()] {
                *v = rng.random_range(-a..a);
            }
        }
        for n in layout.norms() {
            data[n.gamma.range()].fill(1.0);
        }
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for r in [layout.mask_token, layout.scale_table] {
            for v in &mut data[r.range()] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            data: data.into_iter().map(F::of).collect(),
        })
    }

    pub fn from_data(config: &ModelConfig, data: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if data.len() != layout.total {
            return Err(super::ModelError::ShapeMismatch(format!(
                "{} values for {} parameters",
                data.len(),
                layout.total
            )));
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            data,
        })
    }

    #[inline]
    pub fn get(&self, t: TensorRef) -> &[F] {
        &self.data[t.range()]
    }

    #[inline]
    pub fn get_mut(&mut self, t: TensorRef) -> &mut [F] {
        &mut self.data[t.range()]
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// A zeroed gradient buffer with this layout.
    pub fn zeros_like(&self) -> Vec<F> {
        vec![F::zero(); self.data.len()]
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.entry(name).map(|e| &self.data[e.offset..e.offset + e.len])
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|&v| G::of(v.to_f64())).collect(),
        }
    }
}
