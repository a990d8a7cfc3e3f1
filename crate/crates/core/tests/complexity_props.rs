mod common;

use proptest::prelude::*;

use dynpatch::complexity::{compute_map, entropy_map, laplacian_response, variance_map, DEFAULT_BINS, ENTROPY_EPS};
use dynpatch::{Metric, Volume4D};

fn random_volume(dims: [usize; 4]) -> impl Strategy<Value = Volume4D> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-4.0f32..4.0, n).prop_map(move |d| Volume4D::from_data(dims, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constant_volume_scores_zero(c in -1e3f32..1e3, t in 1usize..4) {
        let v = Volume4D::filled([8, 8, 8, t], c);
        for m in Metric::ALL {
            let map = compute_map(&v, m, 4).unwrap();
            let tol = if m == Metric::Entropy { 1e-10 } else { 0.0 };
            prop_assert!(map.scores.iter().all(|s| s.abs() <= tol), "{:?}", m);
        }
    }

    #[test]
    fn variance_shift_and_scale(v in random_volume([8, 8, 8, 2]), c in -50f32..50.0, a in 0.1f32..5.0) {
        let base = variance_map(&v, 4).unwrap();
        let shifted = Volume4D::from_data(v.dims(), v.data().iter().map(|x| x + c).collect()).unwrap();
        let scaled = Volume4D::from_data(v.dims(), v.data().iter().map(|x| x * a).collect()).unwrap();
        let s = variance_map(&shifted, 4).unwrap();
        let k = variance_map(&scaled, 4).unwrap();
        let a2 = (a as f64).powi(2);
        for i in 0..base.scores.len() {
            prop_assert!((s.scores[i] - base.scores[i]).abs() < 1e-5);
            prop_assert!((k.scores[i] - a2 * base.scores[i]).abs() <= 1e-5 * a2 * base.scores[i]);
        }
    }

    #[test]
    fn variance_matches_naive_loop(v in random_volume([16, 16, 16, 4])) {
        let map = variance_map(&v, 8).unwrap();
        for gz in 0..2 {
            for gy in 0..2 {
                for gx in 0..2 {
                    let naive = common::naive_cube_variance(&v, [gx * 8, gy * 8, gz * 8], 8);
                    prop_assert!((map.score(gx, gy, gz) - naive).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn entropy_is_bounded(v in random_volume([8, 8, 8, 2]), bins in 2usize..600) {
        let map = entropy_map(&v, 4, bins).unwrap();
        let top = (bins as f64).log2() + 1e-9;
        prop_assert!(map.scores.iter().all(|&s| s >= -ENTROPY_EPS && s <= top));
    }

    #[test]
    fn laplacian_of_affine_field_is_zero_inside(c in prop::array::uniform4(-2.0f32..2.0)) {
        let n = 6;
        let v = Volume4D::from_fn([n, n, n, 2], |x, y, z, t| {
            c[0] + c[1] * x as f32 + c[2] * y as f32 + c[3] * z as f32 + t as f32
        }).unwrap();
        let r = laplacian_response(&v);
        for z in 1..n - 1 {
            for y in 1..n - 1 {
                for x in 1..n - 1 {
                    prop_assert!(r[(z * n + y) * n + x].abs() < 1e-4);
                }
            }
        }
    }
}

#[test]
fn default_bins_cap() {
    let v = Volume4D::from_fn([8, 8, 8, 1], |x, y, z, _| (x + 8 * y + 64 * z) as f32).unwrap();
    let m = entropy_map(&v, 8, DEFAULT_BINS).unwrap();
    assert!((m.scores[0] - 9.0).abs() < 1e-6);
}
