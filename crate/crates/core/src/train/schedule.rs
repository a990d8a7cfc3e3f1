use super::TrainConfig;

/// Warmup length in steps: the warmup share of epochs applied to the run.
pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    if cfg.epochs == 0 {
        return 0;
    }
    (total_steps * cfg.warmup_epochs) / cfg.epochs
}

/// Linear ramp from 0 to `lr` over the warmup steps, then cosine decay
/// reaching `min_lr` exactly at the final step.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let w = warmup_steps(total_steps, cfg);
    if step < w {
        return cfg.lr * step as f64 / w as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(w);
    if span == 0 {
        return cfg.lr;
    }
    let progress = ((step - w) as f64 / span as f64).min(1.0);
    cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let total = 200;
        assert_eq!(warmup_steps(total, &cfg), 50);
        assert_eq!(lr_at(0, total, &cfg), 0.0);
        assert_eq!(lr_at(50, total, &cfg), 2e-4);
        assert!((lr_at(199, total, &cfg) - 1e-6).abs() < 1e-12);
        assert!((lr_at(25, total, &cfg) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn monotone_after_warmup() {
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let total = 137;
        let w = warmup_steps(total, &cfg);
        for s in w..total - 1 {
            assert!(lr_at(s + 1, total, &cfg) <= lr_at(s, total, &cfg));
        }
        // Continuous at the boundary: the last warmup step approaches lr.
        assert!((lr_at(w - 1, total, &cfg) - cfg.lr).abs() <= cfg.lr / w as f64 + 1e-18);
    }
}
