//! Classical fusion algorithms used as distillation teachers.

use std::fmt;
use std::str::FromStr;

use crate::encode::intensity_encodings;
use crate::error::{Error, Result};
use crate::imgio::{clamp_level, ImagePair, ImagePlane};

pub const DEFAULT_PYRAMID_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    /// `(n_v + n_i) / 2`
    Average,
    /// `max(n_v, n_i)`
    MaxLuminance,
    /// Laplacian-pyramid fusion: max-absolute detail selection, averaged base.
    LaplacianPyramid { levels: usize },
}

impl TeacherKind {
    pub fn name(&self) -> &'static str {
        match self {
            TeacherKind::Average => "avg",
            TeacherKind::MaxLuminance => "maxlum",
            TeacherKind::LaplacianPyramid { .. } => "lappyr",
        }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TeacherKind::LaplacianPyramid { levels } if *levels != DEFAULT_PYRAMID_LEVELS => {
                write!(f, "lappyr:{levels}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TeacherKind {
    type Err = Error;

    /// `avg`, `maxlum`, `lappyr` or `lappyr:<levels>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" => Ok(TeacherKind::Average),
            "maxlum" | "max-luminance" => Ok(TeacherKind::MaxLuminance),
            "lappyr" | "laplacian-pyramid" => Ok(TeacherKind::LaplacianPyramid { levels: DEFAULT_PYRAMID_LEVELS }),
            other => {
                if let Some(levels) = other.strip_prefix("lappyr:") {
                    let levels = levels
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad pyramid level count in {other:?}")))?;
                    if levels == 0 {
                        return Err(Error::InvalidArgument("pyramid needs at least 1 level".into()));
                    }
                    Ok(TeacherKind::LaplacianPyramid { levels })
                } else {
                    Err(Error::InvalidArgument(format!("unknown teacher {other:?} (expected avg, maxlum or lappyr)")))
                }
            }
        }
    }
}

/// Fused luminance `I_f^T` for a registered pair.
pub fn teacher_fuse(kind: TeacherKind, pair: &ImagePair) -> Result<ImagePlane> {
    let (n_i, n_v) = intensity_encodings(pair);
    teacher_fuse_planes(kind, &n_v, &n_i)
}

pub fn teacher_fuse_planes(kind: TeacherKind, n_v: &ImagePlane, n_i: &ImagePlane) -> Result<ImagePlane> {
    if !n_v.same_dims(n_i) {
        return Err(Error::DimensionMismatch {
            what: "teacher inputs",
            left_w: n_v.width(),
            left_h: n_v.height(),
            right_w: n_i.width(),
            right_h: n_i.height(),
        });
    }
    let (w, h) = (n_v.width(), n_v.height());
    let data = match kind {
        TeacherKind::Average => n_v.data().iter().zip(n_i.data()).map(|(a, b)| (a + b) / 2.0).collect(),
        TeacherKind::MaxLuminance => n_v.data().iter().zip(n_i.data()).map(|(a, b)| a.max(*b)).collect(),
        TeacherKind::LaplacianPyramid { levels } => laplacian_fuse(n_v.data(), n_i.data(), w, h, levels)?,
    };
    Ok(ImagePlane::from_raw(w, h, data.into_iter().map(clamp_level).collect()))
}

/// Deepest pyramid allowed for an image: `floor(log2(min(w, h)))`.
pub fn max_pyramid_levels(width: usize, height: usize) -> usize {
    let m = width.min(height);
    if m == 0 {
        0
    } else {
        m.ilog2() as usize
    }
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone)]
struct Level {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

fn blur(l: &Level) -> Level {
    let (w, h) = (l.w, l.h);
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                BINOMIAL.iter().enumerate().map(|(t, k)| k * l.data[y * w + at(x as isize + t as isize - 2, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                BINOMIAL.iter().enumerate().map(|(t, k)| k * tmp[at(y as isize + t as isize - 2, h) * w + x]).sum();
        }
    }
    Level { w, h, data: out }
}

fn reduce(l: &Level) -> Level {
    let b = blur(l);
    let (w, h) = (l.w.div_ceil(2), l.h.div_ceil(2));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(b.data[2 * y * l.w + 2 * x]);
        }
    }
    Level { w, h, data }
}

fn expand(l: &Level, w: usize, h: usize) -> Level {
    let mut up = Level { w, h, data: vec![0.0; w * h] };
    for y in 0..l.h {
        for x in 0..l.w {
            if 2 * y < h && 2 * x < w {
                up.data[2 * y * w + 2 * x] = 4.0 * l.data[y * l.w + x];
            }
        }
    }
    blur(&up)
}

/// Laplacian bands (finest first) followed by the low-pass base.
fn decompose(img: Level, levels: usize) -> (Vec<Level>, Level) {
    let mut bands = Vec::with_capacity(levels.saturating_sub(1));
    let mut cur = img;
    for _ in 1..levels {
        let next = reduce(&cur);
        let up = expand(&next, cur.w, cur.h);
        let data = cur.data.iter().zip(&up.data).map(|(a, b)| a - b).collect();
        bands.push(Level { w: cur.w, h: cur.h, data });
        cur = next;
    }
    (bands, cur)
}

fn reconstruct(bands: &[Level], base: Level) -> Level {
    let mut cur = base;
    for band in bands.iter().rev() {
        let up = expand(&cur, band.w, band.h);
        let data = band.data.iter().zip(&up.data).map(|(a, b)| a + b).collect();
        cur = Level { w: band.w, h: band.h, data };
    }
    cur
}

fn laplacian_fuse(a: &[f32], b: &[f32], w: usize, h: usize, levels: usize) -> Result<Vec<f32>> {
    if levels == 0 || levels > max_pyramid_levels(w, h) {
        return Err(Error::PyramidTooDeep { levels, width: w, height: h });
    }
    let to_level = |d: &[f32]| Level { w, h, data: d.iter().map(|&v| v as f64).collect() };
    let (bands_a, base_a) = decompose(to_level(a), levels);
    let (bands_b, base_b) = decompose(to_level(b), levels);
    let bands: Vec<Level> = bands_a
        .iter()
        .zip(&bands_b)
        .map(|(la, lb)| Level {
            w: la.w,
            h: la.h,
            data: la.data.iter().zip(&lb.data).map(|(&x, &y)| if x.abs() >= y.abs() { x } else { y }).collect(),
        })
        .collect();
    let base = Level {
        w: base_a.w,
        h: base_a.h,
        data: base_a.data.iter().zip(&base_b.data).map(|(x, y)| (x + y) / 2.0).collect(),
    };
    Ok(reconstruct(&bands, base).data.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::ColorImage;

    fn planes(w: usize, h: usize) -> (ImagePlane, ImagePlane) {
        (
            ImagePlane::from_fn(w, h, |x, y| (((x * 31 + y * 17) % 97) as f32 * 2.6).min(255.0)),
            ImagePlane::from_fn(w, h, |x, y| if (x / 7 + y / 5) % 2 == 0 { 230.0 } else { 12.0 }),
        )
    }

    #[test]
    fn average_pixel() {
        let pair = ImagePair::new(ImagePlane::constant(1, 1, 200.0), ColorImage::from_fn(1, 1, |_, _| [100.0; 3]))
            .unwrap();
        let out = teacher_fuse(TeacherKind::Average, &pair).unwrap();
        assert!((out.get(0, 0) - 150.0).abs() < 1e-4);
    }

    #[test]
    fn max_idempotent() {
        let (a, _) = planes(13, 9);
        let out = teacher_fuse_planes(TeacherKind::MaxLuminance, &a, &a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn pyramid_identical_inputs_reconstruct() {
        for (w, h) in [(64, 48), (37, 29), (96, 96)] {
            let (a, _) = planes(w, h);
            let out = teacher_fuse_planes(TeacherKind::LaplacianPyramid { levels: 4 }, &a, &a).unwrap();
            for (x, y) in out.data().iter().zip(a.data()) {
                assert!((x - y).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn pyramid_too_deep() {
        let (a, b) = planes(20, 20);
        assert!(teacher_fuse_planes(TeacherKind::LaplacianPyramid { levels: 4 }, &a, &b).is_ok());
        assert!(matches!(
            teacher_fuse_planes(TeacherKind::LaplacianPyramid { levels: 5 }, &a, &b),
            Err(Error::PyramidTooDeep { .. })
        ));
    }

    #[test]
    fn outputs_in_range_and_average_between_sources() {
        let (a, b) = planes(40, 33);
        for kind in [TeacherKind::Average, TeacherKind::MaxLuminance, TeacherKind::LaplacianPyramid { levels: 4 }] {
            let out = teacher_fuse_planes(kind, &a, &b).unwrap();
            assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
            assert_eq!((out.width(), out.height()), (40, 33));
        }
        let avg = teacher_fuse_planes(TeacherKind::Average, &a, &b).unwrap();
        for k in 0..avg.data().len() {
            let (x, y) = (a.data()[k], b.data()[k]);
            assert!(avg.data()[k] >= x.min(y) && avg.data()[k] <= x.max(y));
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("avg".parse::<TeacherKind>().unwrap(), TeacherKind::Average);
        assert_eq!("maxlum".parse::<TeacherKind>().unwrap(), TeacherKind::MaxLuminance);
        assert_eq!("lappyr:3".parse::<TeacherKind>().unwrap(), TeacherKind::LaplacianPyramid { levels: 3 });
        assert!("nope".parse::<TeacherKind>().is_err());
        assert_eq!(TeacherKind::LaplacianPyramid { levels: 4 }.to_string(), "lappyr");
    }
}
