//! Gaussian-window SSIM on the 0..255 scale, with its gradient.
//!
//! 11×11 window, σ = 1.5, C1 = (0.01·255)², C2 = (0.03·255)². The mean is
//! taken over the "valid" positions where the window fits entirely.

use crate::error::{Error, Result};
use crate::filters::{filter_valid, filter_valid_adjoint, gaussian_taps};
use crate::real::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check(x_len: usize, y_len: usize, w: usize, h: usize) -> Result<()> {
    if x_len != w * h || y_len != w * h {
        return Err(Error::ShapeMismatch(format!("SSIM inputs must both be {w}x{h}")));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok(())
}

struct Moments<F> {
    mx: Vec<F>,
    my: Vec<F>,
    sxx: Vec<F>,
    syy: Vec<F>,
    sxy: Vec<F>,
}

fn moments<F: Real>(x: &[F], y: &[F], w: usize, h: usize, taps: &[F]) -> Moments<F> {
    let mx = filter_valid(x, w, h, taps);
    let my = filter_valid(y, w, h, taps);
    let xx: Vec<F> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<F> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<F> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let exx = filter_valid(&xx, w, h, taps);
    let eyy = filter_valid(&yy, w, h, taps);
    let exy = filter_valid(&xy, w, h, taps);
    let sxx = exx.iter().zip(&mx).map(|(&e, &m)| e - m * m).collect();
    let syy = eyy.iter().zip(&my).map(|(&e, &m)| e - m * m).collect();
    let sxy = exy.iter().zip(mx.iter().zip(&my)).map(|(&e, (&a, &b))| e - a * b).collect();
    Moments { mx, my, sxx, syy, sxy }
}

fn taps<F: Real>() -> Vec<F> {
    gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(F::from_f64).collect()
}

/// Mean SSIM between two planes.
pub fn ssim<F: Real>(x: &[F], y: &[F], w: usize, h: usize) -> Result<f64> {
    check(x.len(), y.len(), w, h)?;
    let m = moments(x, y, w, h, &taps::<F>());
    let (c1, c2) = (SSIM_C1, SSIM_C2);
    let mut acc = 0.0f64;
    for p in 0..m.mx.len() {
        let (mx, my) = (m.mx[p].as_f64(), m.my[p].as_f64());
        let num = (2.0 * mx * my + c1) * (2.0 * m.sxy[p].as_f64() + c2);
        let den = (mx * mx + my * my + c1) * (m.sxx[p].as_f64() + m.syy[p].as_f64() + c2);
        acc += num / den;
    }
    Ok(acc / m.mx.len() as f64)
}

/// Mean SSIM and its gradient with respect to `y` (`x` held fixed).
pub fn ssim_with_grad<F: Real>(x: &[F], y: &[F], w: usize, h: usize) -> Result<(f64, Vec<F>)> {
    check(x.len(), y.len(), w, h)?;
    let taps = taps::<F>();
    let m = moments(x, y, w, h, &taps);
    let n = m.mx.len();
    let inv_n = 1.0 / n as f64;
    let (c1, c2) = (SSIM_C1, SSIM_C2);
    // Coefficients of d mean / d (mu_y, E[y^2], E[xy]) per window position.
    let mut d_my = vec![F::zero(); n];
    let mut d_eyy = vec![F::zero(); n];
    let mut d_exy = vec![F::zero(); n];
    let mut acc = 0.0f64;
    for p in 0..n {
        let (mx, my) = (m.mx[p].as_f64(), m.my[p].as_f64());
        let (sxx, syy, sxy) = (m.sxx[p].as_f64(), m.syy[p].as_f64(), m.sxy[p].as_f64());
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sxx + syy + c2;
        let s = a1 * a2 / (b1 * b2);
        acc += s;
        // d s / d a1 = s/a1, d s / d a2 = s/a2, d s / d b1 = -s/b1, d s / d b2 = -s/b2
        // a1: d/d my = 2 mx; a2 = 2(exy - mx my) + c2: d/d my = -2 mx, d/d exy = 2
        // b1: d/d my = 2 my; b2 = (eyy - my^2) + ...: d/d my = -2 my, d/d eyy = 1
        let ds_da1 = a2 / (b1 * b2);
        let ds_da2 = a1 / (b1 * b2);
        let ds_db1 = -s / b1;
        let ds_db2 = -s / b2;
        let g_my = ds_da1 * 2.0 * mx + ds_da2 * (-2.0 * mx) + ds_db1 * 2.0 * my + ds_db2 * (-2.0 * my);
        d_my[p] = F::from_f64(g_my * inv_n);
        d_eyy[p] = F::from_f64(ds_db2 * inv_n);
        d_exy[p] = F::from_f64(ds_da2 * 2.0 * inv_n);
    }
    let g_my = filter_valid_adjoint(&d_my, w, h, &taps);
    let g_eyy = filter_valid_adjoint(&d_eyy, w, h, &taps);
    let g_exy = filter_valid_adjoint(&d_exy, w, h, &taps);
    let two = F::lit(2.0);
    let grad = (0..w * h).map(|q| g_my[q] + two * y[q] * g_eyy[q] + x[q] * g_exy[q]).collect();
    Ok((acc * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_similarity_is_one() {
        let x: Vec<f64> = (0..400).map(|i| ((i * 37) % 255) as f64).collect();
        assert!((ssim(&x, &x, 20, 20).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_small() {
        let x = vec![0.0f64; 100];
        assert!(ssim(&x, &x, 10, 10).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (w, h) = (16, 16);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
        let (_, g) = ssim_with_grad(&x, &y, w, h).unwrap();
        let step = 1e-3;
        let mut worst: f64 = 0.0;
        for q in 0..w * h {
            let mut yp = y.clone();
            yp[q] += step;
            let mut ym = y.clone();
            ym[q] -= step;
            let fd = (ssim(&x, &yp, w, h).unwrap() - ssim(&x, &ym, w, h).unwrap()) / (2.0 * step);
            worst = worst.max((fd - g[q]).abs() / fd.abs().max(g[q].abs()).max(1e-9));
        }
        assert!(worst < 1e-3, "worst {worst}");
    }
}
