//! Synthetic registered infrared/visible pairs for tests, examples and benchmarks.
//!
//! Each plane is a sum of random low-frequency waves stretched to the full
//! 0..=255 range, plus a few hard-edged objects, so the (visible, infrared)
//! value pairs cover the whole square and the gradient axis sees both flat
//! regions and edges. Values are whole numbers and survive an 8-bit PNG round trip.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::{save_png_gray, save_png_rgb, ColorImage, ImagePair, ImagePlane};

fn wave_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.random_range(0.3..1.0),
                rng.random_range(-2.5..2.5) / w as f64,
                rng.random_range(-2.5..2.5) / h as f64,
                rng.random_range(0.0..TAU),
            ]
        })
        .collect();
    let mut f = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            f[y * w + x] = waves.iter().map(|[a, fx, fy, ph]| a * (TAU * (fx * x as f64 + fy * y as f64) + ph).sin()).sum();
        }
    }
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    f.iter_mut().for_each(|v| *v = (*v - lo) / span * 255.0);
    f
}

fn paint_objects(rng: &mut ChaCha8Rng, f: &mut [f64], w: usize, h: usize, count: usize) {
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let rx = rng.random_range(0.04..0.15) * w as f64;
        let ry = rng.random_range(0.04..0.15) * h as f64;
        let value = rng.random_range(0.0..255.0);
        let ellipse = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if ellipse { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    f[y * w + x] = value;
                }
            }
        }
    }
}

/// One synthetic pair; the same arguments always give the same images.
pub fn synthetic_pair(width: usize, height: usize, seed: u64) -> ImagePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width, height);
    let mut ir = wave_field(&mut rng, w, h);
    paint_objects(&mut rng, &mut ir, w, h, 3);
    let mut lum = wave_field(&mut rng, w, h);
    paint_objects(&mut rng, &mut lum, w, h, 3);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-25.0..25.0));
    let ir_plane = ImagePlane::from_fn(w, h, |x, y| ir[y * w + x].round() as f32);
    let vis = ColorImage::from_fn(w, h, |x, y| {
        let l = lum[y * w + x];
        // tint fades towards black and white so the luminance range stays full
        let fade = (l.min(255.0 - l) / 64.0).min(1.0);
        tint.map(|t| (l + t * fade).clamp(0.0, 255.0).round() as f32)
    });
    ImagePair::new(ir_plane, vis).expect("planes share dimensions")
}

pub fn synthetic_dataset(count: usize, width: usize, height: usize, seed: u64) -> Vec<ImagePair> {
    (0..count).map(|k| synthetic_pair(width, height, seed.wrapping_mul(1_000_003).wrapping_add(k as u64))).collect()
}

/// Independent uniform noise in every plane.
pub fn noise_pair(width: usize, height: usize, seed: u64) -> ImagePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ir = ImagePlane::from_fn(width, height, |_, _| rng.random_range(0..=255u8) as f32);
    let vis = ColorImage::from_fn(width, height, |_, _| std::array::from_fn(|_| rng.random_range(0..=255u8) as f32));
    ImagePair::new(ir, vis).expect("planes share dimensions")
}

/// Writes `<dir>/ir/NNN.png` and `<dir>/vis/NNN.png` for every pair.
pub fn write_dataset(dir: &Path, pairs: &[ImagePair]) -> Result<()> {
    for sub in ["ir", "vis"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir.join(sub), e))?;
    }
    for (k, p) in pairs.iter().enumerate() {
        let name = format!("{k:03}.png");
        save_png_gray(&dir.join("ir").join(&name), &p.ir)?;
        save_png_rgb(&dir.join("vis").join(&name), &p.vis)?;
    }
    Ok(())
}
