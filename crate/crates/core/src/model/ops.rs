//! Row-major dense primitives and their reverse passes.
//!
//! Matrices are `&[F]` with an explicit row count; a linear layer's weight is
//! `out × in`. Work is split across rows (or output units for weight
//! gradients) only, so every output element is accumulated in a fixed order
//! and results are identical for any thread count.

use rayon::prelude::*;

use crate::real::Real;

pub const LN_EPS: f64 = 1e-5;

/// Below this many multiply-adds the sequential path is used.
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x Wᵀ + b` for `rows` inputs of width `din`.
pub fn linear_forward<F: Real>(x: &[F], rows: usize, w: &[F], b: &[F], din: usize, dout: usize) -> Vec<F> {
    debug_assert_eq!(x.len(), rows * din);
    debug_assert_eq!(w.len(), dout * din);
    debug_assert_eq!(b.len(), dout);
    let mut y = vec![F::zero(); rows * dout];
    if rows == 0 || dout == 0 {
        return y;
    }
    let row = |(xi, yi): (&[F], &mut [F])| {
        for (o, yo) in yi.iter_mut().enumerate() {
            *yo = b[o] + dot(xi, &w[o * din..(o + 1) * din]);
        }
    };
    if rows * din * dout >= PAR_THRESHOLD {
        x.par_chunks(din).zip(y.par_chunks_mut(dout)).for_each(row);
    } else {
        x.chunks(din).zip(y.chunks_mut(dout)).for_each(row);
    }
    y
}

/// Accumulates `dW += dyᵀ x`, `db += Σ dy` and returns `dx = dy W` when asked.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<F: Real>(
    x: &[F],
    dy: &[F],
    rows: usize,
    w: &[F],
    din: usize,
    dout: usize,
    dw: &mut [F],
    db: &mut [F],
    want_dx: bool,
) -> Option<Vec<F>> {
    debug_assert_eq!(dy.len(), rows * dout);
    let big = rows * din * dout >= PAR_THRESHOLD;
    let wgrad = |(o, (dwo, dbo)): (usize, (&mut [F], &mut F))| {
        for i in 0..rows {
            let g = dy[i * dout + o];
            if g != F::zero() {
                axpy(g, &x[i * din..(i + 1) * din], dwo);
            }
            *dbo += g;
        }
    };
    if big {
        dw.par_chunks_mut(din).zip(db.par_iter_mut()).enumerate().for_each(wgrad);
    } else {
        dw.chunks_mut(din).zip(db.iter_mut()).enumerate().for_each(wgrad);
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![F::zero(); rows * din];
    let row = |(dyi, dxi): (&[F], &mut [F])| {
        for (o, &g) in dyi.iter().enumerate() {
            if g != F::zero() {
                axpy(g, &w[o * din..(o + 1) * din], dxi);
            }
        }
    };
    if big {
        dy.par_chunks(dout).zip(dx.par_chunks_mut(din)).for_each(row);
    } else {
        dy.chunks(dout).zip(dx.chunks_mut(din)).for_each(row);
    }
    Some(dx)
}

/// Saved statistics of a layer norm.
#[derive(Debug, Clone, Default)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm_forward<F: Real>(x: &[F], dim: usize, gamma: &[F], beta: &[F]) -> (Vec<F>, NormCache<F>) {
    let rows = x.len() / dim;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let n = F::of(dim as f64);
    let eps = F::of(LN_EPS);
    for r in 0..rows {
        let xi = &x[r * dim..(r + 1) * dim];
        let mean = xi.iter().copied().sum::<F>() / n;
        let var = xi.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..dim {
            let h = (xi[c] - mean) * rs;
            xhat[r * dim + c] = h;
            y[r * dim + c] = gamma[c] * h + beta[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Real>(
    dy: &[F],
    dim: usize,
    gamma: &[F],
    cache: &NormCache<F>,
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Vec<F> {
    let rows = dy.len() / dim;
    let mut dx = vec![F::zero(); dy.len()];
    let n = F::of(dim as f64);
    for r in 0..rows {
        let dyi = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut sum_dxh = F::zero();
        let mut sum_dxh_xh = F::zero();
        for c in 0..dim {
            dgamma[c] += dyi[c] * xh[c];
            dbeta[c] += dyi[c];
            let dxh = dyi[c] * gamma[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        let (m1, m2) = (sum_dxh / n, sum_dxh_xh / n);
        let rs = cache.rstd[r];
        for c in 0..dim {
            let dxh = dyi[c] * gamma[c];
            dx[r * dim + c] = rs * (dxh - m1 - xh[c] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    F::of(0.5) * x * (F::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    F::of(0.5) * (F::one() + t) + F::of(0.5) * x * (F::one() - t * t) * du
}

pub fn gelu_forward<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| gelu(v)).collect()
}

pub fn gelu_backward<F: Real>(x: &[F], dy: &[F]) -> Vec<F> {
    x.iter().zip(dy).map(|(&v, &g)| g * gelu_grad(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let a = f(&xp);
            xp[i] = x[i] - h;
            let b = f(&xp);
            xp[i] = x[i];
            g[i] = (a - b) / (2.0 * h);
        }
        g
    }

    #[test]
    fn linear_matches_hand_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0, 0.0, 0.5, -1.0, 2.0, 2.0];
        let b = [0.5, 0.0, -1.0];
        let y = linear_forward(&x, 2, &w, &b, 2, 3);
        assert_eq!(y, vec![1.5, -1.5, 5.0, 3.5, -2.5, 13.0]);
    }

    #[test]
    fn linear_backward_matches_differences() {
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).cos()).collect();
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let r: Vec<f64> = (0..8).map(|i| (i as f64 + 0.5).ln()).collect();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&linear_forward(x, 2, w, b, 3, 4), &r);
        let mut dw = vec![0.0; 12];
        let mut db = vec![0.0; 4];
        let dx = linear_backward(&x, &r, 2, &w, 3, 4, &mut dw, &mut db, true).unwrap();
        let ndx = numeric(|x| loss(x, &w, &b), &x);
        let ndw = numeric(|w| loss(&x, w, &b), &w);
        let ndb = numeric(|b| loss(&x, &w, b), &b);
        for (a, n) in dx.iter().chain(&dw).chain(&db).zip(ndx.iter().chain(&ndw).chain(&ndb)) {
            assert!((a - n).abs() < 1e-8, "{a} vs {n}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).sin() * 2.0).collect();
        let g: Vec<f64> = (0..5).map(|i| 1.0 + 0.1 * i as f64).collect();
        let bt: Vec<f64> = (0..5).map(|i| 0.05 * i as f64).collect();
        let r: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).cos()).collect();
        let loss = |x: &[f64], g: &[f64], b: &[f64]| dot(&layer_norm_forward(x, 5, g, b).0, &r);
        let (_, cache) = layer_norm_forward(&x, 5, &g, &bt);
        let mut dg = vec![0.0; 5];
        let mut db = vec![0.0; 5];
        let dx = layer_norm_backward(&r, 5, &g, &cache, &mut dg, &mut db);
        let ndx = numeric(|x| loss(x, &g, &bt), &x);
        let ndg = numeric(|g| loss(&x, g, &bt), &g);
        for (a, n) in dx.iter().chain(&dg).zip(ndx.iter().chain(&ndg)) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
        assert_eq!(db, (0..5).map(|c| r[c] + r[c + 5]).collect::<Vec<_>>());
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.3, 1.7, 4.0f64] {
            let h = 1e-6;
            let n = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - n).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }
}
