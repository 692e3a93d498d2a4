//! Non-learned baseline: fill the table by binning teacher outputs.

use crate::encode::{low_order_encodings, SceneEncoderParams};
use crate::error::{Error, Result};
use crate::filters::box_mean_replicate;
use crate::imgio::{ImagePair, ImagePlane};
use crate::lut::{LutGrid4D, MmLutModel, ModelMetadata, SceneFeatureKind};
use crate::teacher::{teacher_fuse_planes, TeacherKind};

pub const DEFAULT_BOX_WINDOW: usize = 11;

/// 11×11 box mean of `(n_v + n_i) / 2`.
pub fn box_scene_feature(pair: &ImagePair) -> ImagePlane {
    let (n_i, n_v) = crate::encode::intensity_encodings(pair);
    box_scene_plane(&n_v, &n_i, DEFAULT_BOX_WINDOW)
}

pub fn box_scene_plane(n_v: &ImagePlane, n_i: &ImagePlane, window: usize) -> ImagePlane {
    let (w, h) = (n_v.width(), n_v.height());
    let mid: Vec<f32> = n_v.data().iter().zip(n_i.data()).map(|(a, b)| (a + b) / 2.0).collect();
    let out = box_mean_replicate(&mid, w, h, window);
    ImagePlane::from_raw(w, h, out.into_iter().map(crate::imgio::clamp_level).collect())
}

/// Running per-cell sums and counts over the G⁴ table.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantAccumulator {
    points: usize,
    bin_scale: f32,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl QuantAccumulator {
    pub fn new(points: usize, bin_scale: f32) -> Self {
        let n = points.pow(4);
        Self { points, bin_scale, sums: vec![0.0; n], counts: vec![0; n] }
    }

    /// Nearest grid index for a raw element value.
    #[inline]
    pub fn nearest_index(&self, value: f32) -> usize {
        ((value / self.bin_scale).round().max(0.0) as usize).min(self.points - 1)
    }

    #[inline]
    pub fn cell(&self, idx: [usize; 4]) -> usize {
        let g = self.points;
        ((idx[0] * g + idx[1]) * g + idx[2]) * g + idx[3]
    }

    /// Adds one sample at element values `(v, i, g, s)`.
    pub fn add(&mut self, values: [f32; 4], target: f32) {
        let idx = values.map(|v| self.nearest_index(v));
        self.add_at(idx, target);
    }

    pub fn add_at(&mut self, idx: [usize; 4], target: f32) {
        let c = self.cell(idx);
        self.sums[c] += target as f64;
        self.counts[c] += 1;
    }

    pub fn merge(&mut self, other: &QuantAccumulator) {
        assert_eq!(self.points, other.points);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn count(&self, idx: [usize; 4]) -> u64 {
        self.counts[self.cell(idx)]
    }

    pub fn covered_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn coverage(&self) -> f64 {
        self.covered_cells() as f64 / self.counts.len() as f64
    }

    /// Cell means, with empty cells filled by repeated averaging of already
    /// filled axis neighbours (frontier dilation).
    pub fn finish(&self) -> Result<QuantizedLut> {
        let n = self.counts.len();
        if self.covered_cells() == 0 {
            return Err(Error::EmptyDataset("no samples were accumulated".into()));
        }
        let mut values: Vec<f64> =
            (0..n).map(|c| if self.counts[c] > 0 { self.sums[c] / self.counts[c] as f64 } else { 0.0 }).collect();
        let mut filled: Vec<bool> = self.counts.iter().map(|&c| c > 0).collect();
        let g = self.points;
        let strides = [g * g * g, g * g, g, 1];
        let mut fill_passes = 0;
        let mut empty: Vec<usize> = (0..n).filter(|&c| !filled[c]).collect();
        while !empty.is_empty() {
            let mut updates = Vec::new();
            for &c in &empty {
                let (mut sum, mut cnt) = (0.0, 0u32);
                for (axis, &stride) in strides.iter().enumerate() {
                    let coord = (c / stride) % g;
                    if coord > 0 && filled[c - stride] {
                        sum += values[c - stride];
                        cnt += 1;
                    }
                    if coord + 1 < g && filled[c + stride] {
                        sum += values[c + stride];
                        cnt += 1;
                    }
                    let _ = axis;
                }
                if cnt > 0 {
                    updates.push((c, sum / cnt as f64));
                }
            }
            for &(c, v) in &updates {
                values[c] = v;
                filled[c] = true;
            }
            empty.retain(|&c| !filled[c]);
            fill_passes += 1;
        }
        let entries: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
        Ok(QuantizedLut {
            grid: LutGrid4D::new(g, self.bin_scale, entries)?,
            coverage: self.coverage(),
            covered_cells: self.covered_cells(),
            fill_passes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLut {
    pub grid: LutGrid4D<f32>,
    /// Fraction of cells that received at least one sample.
    pub coverage: f64,
    pub covered_cells: usize,
    pub fill_passes: usize,
}

/// Where the fourth coordinate comes from when building the baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantSceneFeature {
    BoxMean { window: usize },
    FrozenEncoder { params: SceneEncoderParams<f32>, downsample: usize },
}

impl QuantSceneFeature {
    fn template(&self) -> Result<MmLutModel> {
        let (kind, params, downsample) = match self {
            QuantSceneFeature::BoxMean { window } => {
                (SceneFeatureKind::BoxMean { window: *window }, SceneEncoderParams::zeros(), crate::lut::DEFAULT_DOWNSAMPLE)
            }
            QuantSceneFeature::FrozenEncoder { params, downsample } => {
                (SceneFeatureKind::Encoder, params.clone(), *downsample)
            }
        };
        let grid = LutGrid4D::constant(2, 1.0, 0.0)?;
        MmLutModel::new(grid, params, downsample, ModelMetadata::new("quantized", kind))
    }
}

/// Builds the quantized table from every pixel of `dataset`.
pub fn build_quantized_lut(
    dataset: &[ImagePair],
    teacher: TeacherKind,
    scene: &QuantSceneFeature,
    points: usize,
    bin_scale: f32,
) -> Result<QuantizedLut> {
    Ok(build_quantized_model(dataset, teacher, scene, points, bin_scale)?.1)
}

/// Builds the table and wraps it in a loadable model tagged `method = "quantized"`.
pub fn build_quantized_model(
    dataset: &[ImagePair],
    teacher: TeacherKind,
    scene: &QuantSceneFeature,
    points: usize,
    bin_scale: f32,
) -> Result<(MmLutModel, QuantizedLut)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("quantization needs at least one image pair".into()));
    }
    if points < 2 || !(bin_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid grid: {points} points, bin scale {bin_scale}")));
    }
    let mut model = scene.template()?;
    let mut acc = QuantAccumulator::new(points, bin_scale);
    for pair in dataset {
        let (n_i, n_v, g_v) = low_order_encodings(pair);
        let s_j = model.scene_plane(&n_v, &n_i);
        let target = teacher_fuse_planes(teacher, &n_v, &n_i)?;
        let (v, i, g, s, t) = (n_v.data(), n_i.data(), g_v.data(), s_j.data(), target.data());
        for p in 0..t.len() {
            acc.add([v[p], i[p], g[p], s[p]], t[p]);
        }
    }
    let q = acc.finish()?;
    model.grid = q.grid.clone();
    model.metadata.teacher = Some(teacher.to_string());
    model.metadata.coverage = Some(q.coverage);
    Ok((model, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::ColorImage;

    fn blocks_pair(levels: &[(usize, usize)], block: usize) -> ImagePair {
        let per_row = 17;
        let rows = levels.len().div_ceil(per_row);
        let (w, h) = (per_row * block, rows * block);
        let at = |x: usize, y: usize| levels.get((y / block) * per_row + x / block).copied().unwrap_or((0, 0));
        ImagePair::new(
            ImagePlane::from_fn(w, h, |x, y| (17 * at(x, y).1) as f32),
            ColorImage::from_fn(w, h, |x, y| [(17 * at(x, y).0) as f32; 3]),
        )
        .unwrap()
    }

    #[test]
    fn constant_teacher_propagates() {
        let mut acc = QuantAccumulator::new(5, 17.0);
        acc.add([0.0, 0.0, 0.0, 0.0], 128.0);
        acc.add([60.0, 20.0, 0.0, 33.0], 128.0);
        let q = acc.finish().unwrap();
        assert!(q.grid.entries().iter().all(|v| *v == 128.0));
    }

    #[test]
    fn coverage_report_and_fill() {
        let mut acc = QuantAccumulator::new(17, 17.0);
        let n = 17usize.pow(4);
        let target = n / 10;
        // spread the covered cells with a stride coprime to n
        let mut c = 0usize;
        for _ in 0..target {
            c = (c + 7919) % n;
            let idx = [c / 4913, (c / 289) % 17, (c / 17) % 17, c % 17];
            acc.add_at(idx, (c % 256) as f32);
        }
        let q = acc.finish().unwrap();
        assert!((q.coverage - 0.10).abs() <= 1.0 / n as f64 + 1e-12, "coverage {}", q.coverage);
        assert_eq!(q.grid.entries().len(), n);
        assert!(q.grid.entries().iter().all(|v| v.is_finite() && (0.0..=255.0).contains(v)));
    }

    #[test]
    fn max_teacher_on_grid_points() {
        let levels: Vec<(usize, usize)> = (0..16).flat_map(|k| (0..16).map(move |l| (k, l))).collect();
        let pair = blocks_pair(&levels, 12);
        let scene = QuantSceneFeature::BoxMean { window: 11 };
        let (model, _) =
            build_quantized_model(&[pair.clone()], TeacherKind::MaxLuminance, &scene, 17, 17.0).unwrap();
        // recompute which cells were hit and check their values
        let (n_i, n_v, g_v) = low_order_encodings(&pair);
        let s_j = model.scene_plane(&n_v, &n_i);
        let acc = QuantAccumulator::new(17, 17.0);
        let mut hit = 0;
        for p in 0..n_v.data().len() {
            let idx = [n_v.data()[p], n_i.data()[p], g_v.data()[p], s_j.data()[p]].map(|v| acc.nearest_index(v));
            let want = (17 * idx[0].max(idx[1])) as f32;
            assert_eq!(model.grid.get(idx[0], idx[1], idx[2], idx[3]), want);
            hit += 1;
        }
        assert!(hit > 0);
        assert_eq!(model.metadata.method, "quantized");
    }

    #[test]
    fn entries_within_observed_range() {
        let levels: Vec<(usize, usize)> = (3..9).flat_map(|k| (2..7).map(move |l| (k, l))).collect();
        let pair = blocks_pair(&levels, 10);
        let q = build_quantized_lut(&[pair.clone()], TeacherKind::Average, &QuantSceneFeature::BoxMean { window: 11 }, 17, 17.0)
            .unwrap();
        let t = teacher_fuse_planes(TeacherKind::Average, &crate::imgio::luminance(&pair.vis), &pair.ir).unwrap();
        let lo = t.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(q.grid.entries().iter().all(|v| *v >= lo - 1e-3 && *v <= hi + 1e-3));
    }

    #[test]
    fn deterministic() {
        let levels: Vec<(usize, usize)> = (0..40).map(|k| (k % 16, (k * 7) % 16)).collect();
        let pair = blocks_pair(&levels, 9);
        let s = QuantSceneFeature::BoxMean { window: 11 };
        let a = build_quantized_lut(&[pair.clone()], TeacherKind::MaxLuminance, &s, 17, 17.0).unwrap();
        let b = build_quantized_lut(&[pair], TeacherKind::MaxLuminance, &s, 17, 17.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset() {
        let s = QuantSceneFeature::BoxMean { window: 11 };
        assert!(matches!(build_quantized_lut(&[], TeacherKind::Average, &s, 17, 17.0), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn box_feature_examples() {
        let c = ImagePair::new(ImagePlane::constant(15, 15, 40.0), ColorImage::from_fn(15, 15, |_, _| [40.0; 3])).unwrap();
        assert!(box_scene_feature(&c).data().iter().all(|v| (*v - 40.0).abs() < 1e-4));

        // impulse of 255 in both sources at the centre of a 31x31 black image
        let (w, h, cx, cy) = (31, 31, 15, 15);
        let ir = ImagePlane::from_fn(w, h, |x, y| if (x, y) == (cx, cy) { 255.0 } else { 0.0 });
        let vis = ColorImage::from_fn(w, h, |x, y| if (x, y) == (cx, cy) { [255.0; 3] } else { [0.0; 3] });
        let f = box_scene_feature(&ImagePair::new(ir, vis).unwrap());
        for y in 0..h {
            for x in 0..w {
                let inside = x.abs_diff(cx) <= 5 && y.abs_diff(cy) <= 5;
                let want = if inside { 255.0 / 121.0 } else { 0.0 };
                assert!((f.get(x, y) - want).abs() < 1e-4, "({x},{y})");
            }
        }
        assert!(f.data().iter().all(|v| *v <= 255.0 && *v >= 0.0));
    }
}
