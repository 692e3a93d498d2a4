//! Small spatial filters shared by the encoders, teachers, losses and metrics.

use crate::real::Real;

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 3×3 Sobel responses with edge replication: `(sx, sy)`, where `sx` responds
/// to horizontal change (columns) and `sy` to vertical change (rows).
pub fn sobel<F: Real>(data: &[F], width: usize, height: usize) -> (Vec<F>, Vec<F>) {
    assert_eq!(data.len(), width * height);
    let two = F::lit(2.0);
    let mut sx = vec![F::zero(); data.len()];
    let mut sy = vec![F::zero(); data.len()];
    for y in 0..height {
        let ym = clamp_idx(y as isize - 1, height) * width;
        let y0 = y * width;
        let yp = clamp_idx(y as isize + 1, height) * width;
        for x in 0..width {
            let xm = clamp_idx(x as isize - 1, width);
            let xp = clamp_idx(x as isize + 1, width);
            let (a, b, c) = (data[ym + xm], data[ym + x], data[ym + xp]);
            let (d, f) = (data[y0 + xm], data[y0 + xp]);
            let (g, h, i) = (data[yp + xm], data[yp + x], data[yp + xp]);
            sx[y0 + x] = (c + two * f + i) - (a + two * d + g);
            sy[y0 + x] = (g + two * h + i) - (a + two * b + c);
        }
    }
    (sx, sy)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable correlation without padding: output is `(w-k+1)×(h-k+1)`.
pub fn filter_valid<F: Real>(data: &[F], width: usize, height: usize, taps: &[F]) -> Vec<F> {
    let k = taps.len();
    assert!(width >= k && height >= k);
    let ow = width - k + 1;
    let oh = height - k + 1;
    let mut horiz = vec![F::zero(); ow * height];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        let out = &mut horiz[y * ow..(y + 1) * ow];
        for (t, &w) in taps.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(&row[t..t + ow]) {
                *o += w * v;
            }
        }
    }
    let mut out = vec![F::zero(); ow * oh];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (t, &w) in taps.iter().enumerate() {
            let src = &horiz[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w-k+1)×(h-k+1)` map back onto `w×h`.
pub fn filter_valid_adjoint<F: Real>(map: &[F], width: usize, height: usize, taps: &[F]) -> Vec<F> {
    let k = taps.len();
    let ow = width - k + 1;
    let oh = height - k + 1;
    assert_eq!(map.len(), ow * oh);
    let mut horiz = vec![F::zero(); ow * height];
    for y in 0..oh {
        let src = &map[y * ow..(y + 1) * ow];
        for (t, &w) in taps.iter().enumerate() {
            let dst = &mut horiz[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    let mut out = vec![F::zero(); width * height];
    for y in 0..height {
        let src = &horiz[y * ow..(y + 1) * ow];
        let row = &mut out[y * width..(y + 1) * width];
        for (t, &w) in taps.iter().enumerate() {
            for (o, &v) in row[t..t + ow].iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    out
}

/// Separable correlation with edge replication, output the same size as input.
pub fn filter_replicate(data: &[f32], width: usize, height: usize, taps: &[f64]) -> Vec<f32> {
    let r = (taps.len() / 2) as isize;
    let mut horiz = vec![0.0f64; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                acc += w * row[clamp_idx(x as isize + t as isize - r, width)] as f64;
            }
            horiz[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                acc += w * horiz[clamp_idx(y as isize + t as isize - r, height) * width + x];
            }
            out[y * width + x] = acc as f32;
        }
    }
    out
}

/// Box mean over an odd `window`×`window` neighbourhood with edge replication.
pub fn box_mean_replicate(data: &[f32], width: usize, height: usize, window: usize) -> Vec<f32> {
    assert!(window % 2 == 1, "box window must be odd");
    let taps = vec![1.0 / window as f64; window];
    filter_replicate(data, width, height, &taps)
}
