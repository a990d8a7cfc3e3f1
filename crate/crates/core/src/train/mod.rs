//! Desk-scale optimization: seeded phantoms, the warmup-cosine schedule,
//! AdamW, the toy pretraining loop and the finite-difference gradient check.

mod adamw;
mod gradcheck;
mod loop_;
mod phantom;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::tokenizer::TokenizerError;
use crate::volume::VolumeError;

pub use adamw::{adamw_step, AdamState};
pub use gradcheck::{gradcheck, gradcheck_fixture, GradFault, GradcheckConfig, GradcheckReport};
pub use loop_::{
    evaluate, prepare_samples, samples_from_volumes, train_on, train_on_volumes, train_toy, write_loss_csv, StepRecord,
    ToyRun,
};
pub use phantom::{make_phantom, PhantomSpec};
pub use schedule::{lr_at, warmup_steps};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad phantom spec: {0}")]
    BadSpec(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            min_lr: 1e-6,
            betas: (0.9, 0.95),
            weight_decay: 0.05,
            warmup_epochs: 5,
            epochs: 35,
            batch: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the toy overfitting run: the default optimizer with a
    /// larger peak rate, since a model this small trained for a few hundred
    /// steps barely moves at 2e-4.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad(format!("need 0 <= min_lr <= lr, got {} and {}", self.min_lr, self.lr));
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!("warmup_epochs {} > epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas {:?} outside [0, 1)", self.betas));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.min_lr, c.betas, c.weight_decay, c.warmup_epochs), (2e-4, 1e-6, (0.9, 0.95), 0.05, 5));
        c.validate().unwrap();
        let bad = TrainConfig { min_lr: 1.0, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            warmup_epochs: 50,
            ..c
        };
        assert!(bad.validate().is_err());
    }
}
