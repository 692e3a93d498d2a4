//! Fusion quality metrics on luminance planes: MI, EN, CC, SSIM and Q^AB/F.
//!
//! Conventions: base-2 logarithms over 256-bin histograms of rounded values;
//! MI is summed over both sources, CC and SSIM are averaged over both sources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::sobel;
use crate::imgio::ImagePlane;

fn check_dims(fused: &ImagePlane, a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    for (what, other) in [("fused vs infrared", a), ("fused vs visible", b)] {
        if !fused.same_dims(other) {
            return Err(Error::DimensionMismatch {
                what,
                left_w: fused.width(),
                left_h: fused.height(),
                right_w: other.width(),
                right_h: other.height(),
            });
        }
    }
    Ok(())
}

#[inline]
fn bin(v: f32) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

fn plogp_sum(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-bin histogram.
pub fn entropy(img: &ImagePlane) -> f64 {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[bin(v)] += 1;
    }
    plogp_sum(&hist, img.data().len() as f64)
}

/// Mutual information in bits between two planes of equal size.
pub fn pair_mutual_information(x: &ImagePlane, y: &ImagePlane) -> f64 {
    assert!(x.same_dims(y));
    let n = x.data().len() as f64;
    let mut joint = vec![0u64; 256 * 256];
    let mut hx = [0u64; 256];
    let mut hy = [0u64; 256];
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (i, j) = (bin(a), bin(b));
        joint[i * 256 + j] += 1;
        hx[i] += 1;
        hy[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..256 {
        if hx[i] == 0 {
            continue;
        }
        for j in 0..256 {
            let c = joint[i * 256 + j];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (c as f64 * n / (hx[i] as f64 * hy[j] as f64)).log2();
        }
    }
    mi.max(0.0)
}

/// `MI(F, A) + MI(F, B)`.
pub fn mutual_information(fused: &ImagePlane, ir: &ImagePlane, vis_y: &ImagePlane) -> Result<f64> {
    check_dims(fused, ir, vis_y)?;
    Ok(pair_mutual_information(fused, ir) + pair_mutual_information(fused, vis_y))
}

/// Pearson correlation; 0 when either argument is constant.
pub fn pearson(x: &[f32], y: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Mean of the fused image's Pearson correlation with each source.
pub fn correlation_coefficient(fused: &ImagePlane, ir: &ImagePlane, vis_y: &ImagePlane) -> Result<f64> {
    check_dims(fused, ir, vis_y)?;
    Ok((pearson(fused.data(), ir.data()) + pearson(fused.data(), vis_y.data())) / 2.0)
}

/// Mean of SSIM(F, A) and SSIM(F, B).
pub fn ssim_metric(fused: &ImagePlane, ir: &ImagePlane, vis_y: &ImagePlane) -> Result<f64> {
    check_dims(fused, ir, vis_y)?;
    let (w, h) = (fused.width(), fused.height());
    let f: Vec<f64> = fused.data().iter().map(|&v| v as f64).collect();
    let a: Vec<f64> = ir.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = vis_y.data().iter().map(|&v| v as f64).collect();
    let s = (crate::ssim::ssim(&f, &a, w, h)? + crate::ssim::ssim(&f, &b, w, h)?) / 2.0;
    Ok(s.clamp(-1.0, 1.0))
}

// Edge-preservation sigmoid constants.
pub const QABF_GAMMA_G: f64 = 0.9994;
pub const QABF_KAPPA_G: f64 = -15.0;
pub const QABF_SIGMA_G: f64 = 0.5;
pub const QABF_GAMMA_A: f64 = 0.9879;
pub const QABF_KAPPA_A: f64 = -22.0;
pub const QABF_SIGMA_A: f64 = 0.8;

struct Edges {
    strength: Vec<f64>,
    orientation: Vec<f64>,
}

fn edges(img: &ImagePlane) -> Edges {
    let data: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let (sx, sy) = sobel(&data, img.width(), img.height());
    let strength = sx.iter().zip(&sy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let orientation = sx
        .iter()
        .zip(&sy)
        .map(|(&x, &y)| {
            if x == 0.0 && y == 0.0 {
                0.0
            } else {
                (y / x).atan()
            }
        })
        .collect();
    Edges { strength, orientation }
}

/// Preservation value of one source pixel in the fused pixel.
#[inline]
pub fn edge_preservation(g_src: f64, a_src: f64, g_fused: f64, a_fused: f64) -> f64 {
    let g = if g_src == g_fused {
        1.0
    } else if g_src > g_fused {
        g_fused / g_src
    } else {
        g_src / g_fused
    };
    let a = 1.0 - (a_src - a_fused).abs() / std::f64::consts::FRAC_PI_2;
    let qg = QABF_GAMMA_G / (1.0 + (QABF_KAPPA_G * (g - QABF_SIGMA_G)).exp());
    let qa = QABF_GAMMA_A / (1.0 + (QABF_KAPPA_A * (a - QABF_SIGMA_A)).exp());
    qg * qa
}

/// Xydeas–Petrović gradient-based fusion quality; 0 when no source has edges.
pub fn qabf(fused: &ImagePlane, ir: &ImagePlane, vis_y: &ImagePlane) -> Result<f64> {
    check_dims(fused, ir, vis_y)?;
    let ef = edges(fused);
    let ea = edges(ir);
    let eb = edges(vis_y);
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..fused.data().len() {
        let (ga, gb) = (ea.strength[p], eb.strength[p]);
        if ga > 0.0 {
            num += ga * edge_preservation(ga, ea.orientation[p], ef.strength[p], ef.orientation[p]);
        }
        if gb > 0.0 {
            num += gb * edge_preservation(gb, eb.orientation[p], ef.strength[p], ef.orientation[p]);
        }
        den += ga + gb;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mi: f64,
    pub en: f64,
    pub cc: f64,
    pub ssim: f64,
    pub qabf: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 5] = ["mi", "en", "cc", "ssim", "qabf"];

    pub fn values(&self) -> [f64; 5] {
        [self.mi, self.en, self.cc, self.ssim, self.qabf]
    }
}

/// All five metrics for one fused image against its two sources.
pub fn evaluate(fused: &ImagePlane, ir: &ImagePlane, vis_y: &ImagePlane) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mi: mutual_information(fused, ir, vis_y)?,
        en: entropy(fused),
        cc: correlation_coefficient(fused, ir, vis_y)?,
        ssim: ssim_metric(fused, ir, vis_y)?,
        qabf: qabf(fused, ir, vis_y)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mi: Summary,
    pub en: Summary,
    pub cc: Summary,
    pub ssim: Summary,
    pub qabf: Summary,
}

impl AggregateReport {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
        AggregateReport {
            mi: col(|r| r.mi),
            en: col(|r| r.en),
            cc: col(|r| r.cc),
            ssim: col(|r| r.ssim),
            qabf: col(|r| r.qabf),
        }
    }
}
