use super::{Result, Volume4D, VolumeError};

/// Global z-scoring: one mean and one population std over every H·W·D·T entry.
pub fn zscore_global(vol: &Volume4D) -> Result<Volume4D> {
    let data = vol.data();
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if data.len() < 2 || !(var > 0.0) {
        return Err(VolumeError::DegenerateVolume);
    }
    let inv_std = 1.0 / var.sqrt();
    let out = data.iter().map(|&v| ((v as f64 - mean) * inv_std) as f32).collect();
    Ok(vol.with_data(vol.dims(), out))
}

/// Center-crops or symmetrically zero-pads each spatial axis. An odd excess
/// goes to the high side. Time is untouched.
pub fn crop_or_pad(vol: &Volume4D, target: [usize; 3]) -> Volume4D {
    let [h, w, d, t] = vol.dims();
    let src = [h, w, d];
    // out[i] = src[i - shift]; shift > 0 pads, shift < 0 crops.
    let shift: Vec<isize> = (0..3)
        .map(|a| {
            if target[a] >= src[a] {
                ((target[a] - src[a]) / 2) as isize
            } else {
                -(((src[a] - target[a]) / 2) as isize)
            }
        })
        .collect();
    let [th, tw, td] = target;
    let mut out = vec![0f32; th * tw * td * t];
    for ti in 0..t {
        for z in 0..td {
            let sz = z as isize - shift[2];
            if sz < 0 || sz >= d as isize {
                continue;
            }
            for y in 0..tw {
                let sy = y as isize - shift[1];
                if sy < 0 || sy >= w as isize {
                    continue;
                }
                for x in 0..th {
                    let sx = x as isize - shift[0];
                    if sx < 0 || sx >= h as isize {
                        continue;
                    }
                    out[((ti * td + z) * tw + y) * th + x] = vol.get(sx as usize, sy as usize, sz as usize, ti);
                }
            }
        }
    }
    vol.with_data([th, tw, td, t], out)
}

/// Source coordinate and blend weight for align-corners linear interpolation.
fn align_corners(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    if n_in == 1 || n_out == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
    let lo = (pos.floor() as usize).min(n_in - 1);
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, pos - lo as f64)
}

/// Per-frame align-corners trilinear resampling to `target` spatial dims.
pub fn resample_spatial_trilinear(vol: &Volume4D, target: [usize; 3]) -> Volume4D {
    let [h, w, d, t] = vol.dims();
    if target == [h, w, d] {
        return vol.clone();
    }
    let [th, tw, td] = target;
    let ax: Vec<_> = (0..th).map(|i| align_corners(i, h, th)).collect();
    let ay: Vec<_> = (0..tw).map(|i| align_corners(i, w, tw)).collect();
    let az: Vec<_> = (0..td).map(|i| align_corners(i, d, td)).collect();
    let mut out = Vec::with_capacity(th * tw * td * t);
    for ti in 0..t {
        let f = vol.frame(ti);
        let at = |x: usize, y: usize, z: usize| f[(z * w + y) * h + x] as f64;
        for &(z0, z1, fz) in &az {
            for &(y0, y1, fy) in &ay {
                for &(x0, x1, fx) in &ax {
                    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                    let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                    let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                    let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                    let c0 = c00 * (1.0 - fy) + c10 * fy;
                    let c1 = c01 * (1.0 - fy) + c11 * fy;
                    out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
                }
            }
        }
    }
    let mut res = vol.with_data([th, tw, td, t], out);
    for (s, (&n_in, &n_out)) in res.spacing_mm.iter_mut().zip([h, w, d].iter().zip(target.iter())) {
        *s *= n_in as f64 / n_out as f64;
    }
    res
}

/// Per-voxel linear interpolation onto a grid of step `target_tr` covering
/// `[0, (T-1)·tr]`.
pub fn resample_time_linear(vol: &Volume4D, target_tr: f64) -> Result<Volume4D> {
    let t = vol.frames();
    if t < 2 {
        return Err(VolumeError::TooFewFrames(t));
    }
    if !(target_tr.is_finite() && target_tr > 0.0) {
        return Err(VolumeError::BadDims(format!("target TR {target_tr} must be positive")));
    }
    if target_tr == vol.tr_seconds {
        return Ok(vol.clone());
    }
    let span = (t - 1) as f64 * vol.tr_seconds;
    let new_t = (span / target_tr + 1e-9).floor() as usize + 1;
    let n = vol.frame_len();
    let mut out = Vec::with_capacity(n * new_t);
    for k in 0..new_t {
        let pos = (k as f64 * target_tr / vol.tr_seconds).min((t - 1) as f64);
        let lo = (pos.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let f = pos - lo as f64;
        let (a, b) = (vol.frame(lo), vol.frame(hi));
        out.extend(a.iter().zip(b).map(|(&a, &b)| (a as f64 * (1.0 - f) + b as f64 * f) as f32));
    }
    let [h, w, d, _] = vol.dims();
    let mut res = vol.with_data([h, w, d, new_t], out);
    res.tr_seconds = target_tr;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_two_values() {
        let v = Volume4D::from_data([2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        assert_eq!(zscore_global(&v).unwrap().data(), &[-1.0, 1.0]);
        assert!(matches!(
            zscore_global(&Volume4D::filled([2, 2, 2, 2], 4.0)),
            Err(VolumeError::DegenerateVolume)
        ));
    }

    #[test]
    fn pad_places_block_at_offset_one() {
        let v = Volume4D::from_fn([4, 4, 4, 1], |x, y, z, _| (1 + x + 4 * y + 16 * z) as f32).unwrap();
        let p = crop_or_pad(&v, [6, 6, 6]);
        assert_eq!(p.dims(), [6, 6, 6, 1]);
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let inside = (1..5).contains(&x) && (1..5).contains(&y) && (1..5).contains(&z);
                    let expect = if inside { v.get(x - 1, y - 1, z - 1, 0) } else { 0.0 };
                    assert_eq!(p.get(x, y, z, 0), expect);
                }
            }
        }
    }

    #[test]
    fn crop_takes_central_block() {
        let v = Volume4D::from_fn([8, 8, 8, 2], |x, y, z, t| (x + 8 * y + 64 * z + 512 * t) as f32).unwrap();
        let c = crop_or_pad(&v, [4, 4, 4]);
        for t in 0..2 {
            for z in 0..4 {
                for y in 0..4 {
                    for x in 0..4 {
                        assert_eq!(c.get(x, y, z, t), v.get(x + 2, y + 2, z + 2, t));
                    }
                }
            }
        }
        assert_eq!(crop_or_pad(&v, [8, 8, 8]), v);
    }

    #[test]
    fn odd_excess_goes_high() {
        let v = Volume4D::from_fn([5, 1, 1, 1], |x, _, _, _| x as f32).unwrap();
        assert_eq!(crop_or_pad(&v, [2, 1, 1]).data(), &[1.0, 2.0]);
        assert_eq!(crop_or_pad(&v, [8, 1, 1]).data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn trilinear_two_to_four() {
        let v = Volume4D::from_data([2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        let r = resample_spatial_trilinear(&v, [4, 1, 1]);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in r.data().iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
        assert_eq!(r.spacing_mm, [0.5, 1.0, 1.0]);
        assert_eq!(resample_spatial_trilinear(&v, [2, 1, 1]), v);
    }

    #[test]
    fn trilinear_reproduces_ramp() {
        let v = Volume4D::from_fn([5, 3, 4, 2], |x, _, _, _| x as f32).unwrap();
        let r = resample_spatial_trilinear(&v, [9, 5, 7]);
        for x in 0..9 {
            let expect = x as f64 * 4.0 / 8.0;
            assert!((r.get(x, 2, 3, 1) as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn time_resample_halves_tr() {
        let v = Volume4D::from_data([1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let r = resample_time_linear(&v, 0.5).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0, 2.0]);
        assert_eq!(r.tr_seconds, 0.5);
        assert_eq!(resample_time_linear(&v, 1.0).unwrap(), v);
        let one = Volume4D::filled([1, 1, 1, 1], 0.0);
        assert!(matches!(resample_time_linear(&one, 0.5), Err(VolumeError::TooFewFrames(1))));
    }
}
