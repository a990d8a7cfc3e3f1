use proptest::prelude::*;

use dynpatch::train::{adamw_step, gradcheck, lr_at, train_toy, warmup_steps, AdamState, GradcheckConfig};
use dynpatch::{ModelConfig, PhantomSpec, TrainConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schedule_shape(epochs in 1usize..60, warm in 0usize..60, per_epoch in 1usize..20, lr in 1e-5f64..1e-1) {
        let cfg = TrainConfig { lr, min_lr: lr / 100.0, epochs, warmup_epochs: warm.min(epochs), ..TrainConfig::default() };
        let total = epochs * per_epoch;
        let w = warmup_steps(total, &cfg);
        let xs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &cfg)).collect();
        prop_assert!(xs.iter().all(|&x| x >= 0.0 && x <= lr * (1.0 + 1e-12)));
        if w > 0 {
            prop_assert_eq!(xs[0], 0.0);
        }
        if w < total {
            prop_assert!((xs[w] - lr).abs() <= 1e-12 * lr);
            prop_assert!(xs[w..].windows(2).all(|p| p[1] <= p[0]));
            // Continuity: no jump larger than one warmup increment at the boundary.
            if w > 0 {
                prop_assert!(xs[w] - xs[w - 1] <= lr / w as f64 * (1.0 + 1e-9));
            }
        }
        if total > w + 1 {
            prop_assert!((xs[total - 1] - cfg.min_lr).abs() <= 1e-12);
        }
    }

    #[test]
    fn adamw_zero_gradient_is_identity(theta in prop::collection::vec(-10.0f64..10.0, 1..40), lr in 0.0f64..1.0) {
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut p = theta.clone();
        let mut st = AdamState::<f64>::new(p.len());
        for _ in 0..3 {
            adamw_step(&mut p, &vec![0.0; theta.len()], &mut st, lr, &cfg).unwrap();
        }
        prop_assert_eq!(&p, &theta);
        prop_assert!(st.m.iter().chain(&st.v).all(|&x| x == 0.0));
        prop_assert_eq!(st.t, 3);
    }

    #[test]
    fn adamw_pure_decay(theta in prop::collection::vec(-10.0f64..10.0, 1..40), lr in 0.0f64..0.1, wd in 0.0f64..1.0) {
        let cfg = TrainConfig { weight_decay: wd, ..TrainConfig::default() };
        let mut p = theta.clone();
        adamw_step(&mut p, &vec![0.0; theta.len()], &mut AdamState::new(theta.len()), lr, &cfg).unwrap();
        for (a, b) in p.iter().zip(&theta) {
            prop_assert!((a - b * (1.0 - lr * wd)).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn gradcheck_passes_at_low_mask_ratio() {
    for k in [1, 2] {
        for pn in [false, true] {
            let mut cfg = GradcheckConfig::toy(k, pn);
            cfg.model.mask_ratio = 0.25;
            cfg.seed = 3;
            let r = gradcheck(&cfg).unwrap();
            assert!(r.pass, "K={k} patch_norm={pn}: {r:?}");
        }
    }
}

#[test]
fn short_runs_are_bit_identical() {
    let model = ModelConfig { frames: 2, ..ModelConfig::toy() };
    let specs: Vec<PhantomSpec> = (0..3).map(|s| PhantomSpec { frames: 2, ..PhantomSpec::toy(s) }).collect();
    let cfg = TrainConfig { epochs: 6, warmup_epochs: 1, batch: 2, seed: 7, ..TrainConfig::toy() };
    let a = train_toy::<f32>(&model, &cfg, &specs).unwrap();
    let b = train_toy::<f32>(&model, &cfg, &specs).unwrap();
    assert_eq!(a.steps.len(), 12);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.params, b.params);
    let c = train_toy::<f32>(&model, &TrainConfig { seed: 8, ..cfg }, &specs).unwrap();
    assert_ne!(a.steps, c.steps);
}
