mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use dynpatch::tokenizer::{partition, prune_background, sample_mask, token_count_report, tokenize_volume};
use dynpatch::{ComplexityMap, Metric, TokenizerConfig, Volume4D};

/// 16³ volume made of 4³ blocks that are either empty or noisy around a
/// per-block level, so foreground, background and both gate outcomes occur.
fn blocky_volume(frames: usize) -> impl Strategy<Value = Volume4D> {
    let blocks = prop::collection::vec((0u8..4, 0.0f32..3.0), 64);
    let noise = prop::collection::vec(-1.0f32..1.0, 16 * 16 * 16 * frames);
    (blocks, noise).prop_map(move |(blocks, noise)| {
        Volume4D::from_fn([16, 16, 16, frames], |x, y, z, t| {
            let (kind, level) = blocks[(z / 4 * 4 + y / 4) * 4 + x / 4];
            let n = noise[((t * 16 + z) * 16 + y) * 16 + x];
            match kind {
                0 => 0.0,
                1 => 1.0 + level,
                _ => 1.0 + level + n * level,
            }
        })
        .unwrap()
    })
}

fn pairs(layout: &dynpatch::TokenLayout) -> BTreeSet<([usize; 3], usize)> {
    layout.tokens.iter().map(|t| (t.origin, t.scale)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_matches_oracle(v in blocky_volume(3), tau in 0.0f64..1.5, k in 1usize..4) {
        let base = if k == 3 { 2 } else { 4 };
        let cfg = TokenizerConfig { tau, base_edge: base, num_scales: k, ..TokenizerConfig::default() };
        let layout = tokenize_volume(&v, &cfg).unwrap().layout;
        prop_assert_eq!(pairs(&layout), common::brute_force_partition(&v, tau, base, k, cfg.bg_thresh));
    }

    #[test]
    fn tokens_are_disjoint_and_cover_foreground(v in blocky_volume(2), tau in 0.0f64..1.5) {
        let cfg = TokenizerConfig { tau, ..TokenizerConfig::default() };
        let t = tokenize_volume(&v, &cfg).unwrap();
        let mut occ = vec![0u8; 16 * 16 * 16];
        for tok in &t.layout.tokens {
            let e = tok.edge(cfg.base_edge);
            for z in 0..e {
                for y in 0..e {
                    for x in 0..e {
                        occ[((tok.origin[2] + z) * 16 + tok.origin[1] + y) * 16 + tok.origin[0] + x] += 1;
                    }
                }
            }
        }
        prop_assert!(occ.iter().all(|&c| c <= 1));
        let fg = common::Foreground::new(&v);
        for z in (0..16).step_by(4) {
            for y in (0..16).step_by(4) {
                for x in (0..16).step_by(4) {
                    let cell = [x / 8 * 8, y / 8 * 8, z / 8 * 8];
                    let want = fg.keeps(cell, 8, cfg.bg_thresh) && fg.keeps([x, y, z], 4, cfg.bg_thresh)
                        || fg.keeps(cell, 8, cfg.bg_thresh) && t.layout.tokens.iter().any(|k| k.origin == cell && k.scale == 1);
                    prop_assert_eq!(occ[(z * 16 + y) * 16 + x] == 1, want, "block {:?}", [x, y, z]);
                }
            }
        }
    }

    #[test]
    fn raising_tau_never_adds_tokens(
        v in blocky_volume(2),
        scores in prop::collection::vec(0.0f64..2.0, 8),
        a in 0.0f64..2.0,
        b in 0.0f64..2.0,
    ) {
        let fg = prune_background(&v, 8, 1e-3).unwrap();
        let cmap = ComplexityMap { grid_dims: [2, 2, 2], coarse_edge: 8, metric: Metric::Variance, scores };
        let (lo, hi) = (a.min(b), a.max(b));
        let n = |tau| partition(&cmap, &fg, &TokenizerConfig { tau, ..TokenizerConfig::default() }, None).unwrap().len();
        prop_assert!(n(hi) <= n(lo));
    }

    #[test]
    fn masks_are_deterministic(v in blocky_volume(2), ratio in 0.0f64..1.0, seed in any::<u64>()) {
        let layout = tokenize_volume(&v, &TokenizerConfig::default()).unwrap().layout;
        let a = sample_mask(&layout, ratio, seed);
        let b = sample_mask(&layout, ratio, seed);
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn report_totals(v in blocky_volume(2), tau in 0.0f64..1.5) {
        let layout = tokenize_volume(&v, &TokenizerConfig { tau, ..TokenizerConfig::default() }).unwrap().layout;
        let r = token_count_report(&layout);
        prop_assert_eq!(r.total, r.per_scale.iter().sum::<usize>());
        prop_assert_eq!(r.uniform_fine_total, 8 * r.foreground_cells);
        prop_assert_eq!(r.full_fine_total, 64);
    }
}
