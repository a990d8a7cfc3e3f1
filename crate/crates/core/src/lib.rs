//! Complexity-gated dynamic patch tokenization for 4D volumetric time series,
//! and a scale-aware masked autoencoder trained on the resulting mixed-scale
//! token sequences.
//!
//! The pipeline is:
//!
//! 1. [`volume`]: load / preprocess a [`Volume4D`] (NIfTI-1 subset or the raw
//!    `.vol` format).
//! 2. [`complexity`]: score every coarse patch ([`ComplexityMap`]).
//! 3. [`tokenizer`]: prune background, gate coarse vs fine, and build the
//!    [`TokenLayout`] and a [`MaskPlan`].
//! 4. [`model`]: dual-path embedding, transformer encoder/decoder,
//!    per-scale heads and the scale-normalized loss, with an analytic
//!    backward pass.
//! 5. [`train`]: AdamW, warmup-cosine schedule, seeded phantoms and the
//!    finite-difference gradient checker.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod model;
pub mod real;
pub mod rng;
pub mod tokenizer;
pub mod train;
pub mod volume;

pub use complexity::{ComplexityError, ComplexityMap, LaplacianBorder, Metric};
pub use model::{LossReport, ModelConfig, ModelError, ModelParams};
pub use real::Real;
pub use tokenizer::{MaskPlan, TokenLayout, TokenRec, TokenizerConfig, TokenizerError};
pub use train::{PhantomSpec, TrainConfig, TrainError};
pub use volume::{Volume4D, VolumeError};
