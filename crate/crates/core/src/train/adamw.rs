use crate::real::Real;

use super::{Result, TrainConfig, TrainError};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }
}

const EPS: f64 = 1e-8;

/// One AdamW update with bias-corrected moments and decoupled decay
/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`.
pub fn adamw_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let (b1f, b2f) = (F::of(b1), F::of(b2));
    let (one_b1, one_b2) = (F::of(1.0 - b1), F::of(1.0 - b2));
    let (c1, c2) = (F::of(c1), F::of(c2));
    let lr_f = F::of(lr);
    let decay = F::of(lr * cfg.weight_decay);
    let eps = F::of(EPS);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1f * state.m[i] + one_b1 * g;
        state.v[i] = b2f * state.v[i] + one_b2 * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] = params[i] - decay * params[i] - lr_f * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = vec![1.5f64, -2.0, 0.0];
        let mut s = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
        assert_eq!(s.m, vec![0.0; 3]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g and v̂ = g² after one step, so the move is lr·g/(|g| + ε).
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let (theta, g, lr) = (0.7f64, -0.3f64, 1e-2);
        let mut p = vec![theta];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[g], &mut s, lr, &cfg).unwrap();
        let expect = theta - lr * 0.1 * theta - lr * g / (g.abs() + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn pure_decay_shrinks_by_factor() {
        let cfg = TrainConfig::default();
        let mut p = vec![2.0f64, -4.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0; 2], &mut s, 1e-2, &cfg).unwrap();
        let f = 1.0 - 1e-2 * 0.05;
        assert!((p[0] - 2.0 * f).abs() < 1e-15 && (p[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::<f32>::new(2);
        assert!(adamw_step(&mut [0.0f32; 2], &[0.0; 3], &mut s, 0.1, &TrainConfig::default()).is_err());
    }
}
