//! Distillation losses, grid regularizers and the combined objective.

use rayon::prelude::*;

use crate::encode::{upsample_bilinear, upsample_bilinear_adjoint, EncoderInput, SceneEncoderParams};
use crate::error::{Error, Result};
use crate::lut::{lookup_backward_with_offsets, lookup_with_offsets, LookupCoord, LutGrid4D};
use crate::real::Real;
use crate::ssim::ssim_with_grad;

/// Values are stored on the 0..=255 scale; the combined objective is
/// evaluated on intensities divided by this so the default weights keep
/// the meaning they have for images normalized to [0, 1].
pub const INTENSITY_UNIT: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_tv: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ssim: 0.1, lambda_tv: 1e-4, lambda_m: 10.0 }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { lambda_ssim: 0.0, lambda_tv: 0.0, lambda_m: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda-ssim", self.lambda_ssim), ("lambda-tv", self.lambda_tv), ("lambda-m", self.lambda_m)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("loss inputs have {a} and {b} pixels")));
    }
    Ok(())
}

/// Mean absolute difference in levels, with its subgradient with respect to `student`.
pub fn intensity_loss<F: Real>(teacher: &[F], student: &[F]) -> Result<(f64, Vec<F>)> {
    same_len(teacher.len(), student.len())?;
    if teacher.is_empty() {
        return Err(Error::InvalidArgument("intensity loss of an empty plane".into()));
    }
    let inv = 1.0 / teacher.len() as f64;
    let step = F::from_f64(inv);
    let mut sum = 0.0f64;
    let grad = teacher
        .iter()
        .zip(student)
        .map(|(&t, &y)| {
            let d = y - t;
            sum += d.abs().as_f64();
            if d > F::zero() {
                step
            } else if d < F::zero() {
                -step
            } else {
                F::zero()
            }
        })
        .collect();
    Ok((sum * inv, grad))
}

/// `1 - SSIM(teacher, student)` and its gradient with respect to `student`.
pub fn ssim_loss<F: Real>(teacher: &[F], student: &[F], width: usize, height: usize) -> Result<(f64, Vec<F>)> {
    let (s, g) = ssim_with_grad(teacher, student, width, height)?;
    Ok((1.0 - s, g.into_iter().map(|v| -v).collect()))
}

/// Value and dense entry gradient of a grid regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerTerm {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Number of adjacent pairs that decrease along an axis (monotonicity only).
    pub violations: usize,
}

/// Calls `f(a, b)` for every pair of axis-adjacent entries, `b` one step further along the axis.
fn for_each_edge(points: usize, mut f: impl FnMut(usize, usize)) {
    let n = points.pow(4);
    for stride in [points * points * points, points * points, points, 1] {
        // entries in the last layer of each block have no successor
        for start in (0..n).step_by(stride * points) {
            for c in start..start + stride * (points - 1) {
                f(c, c + stride);
            }
        }
    }
}

/// Squared differences of adjacent entries along all four axes, divided by the entry count.
pub fn tv_regularizer<E: Real>(grid: &LutGrid4D<E>) -> RegularizerTerm {
    let e = grid.entries();
    let inv = 1.0 / e.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; e.len()];
    for_each_edge(grid.points(), |a, b| {
        let d = e[a].as_f64() - e[b].as_f64();
        value += d * d;
        grad[a] += 2.0 * d * inv;
        grad[b] -= 2.0 * d * inv;
    });
    RegularizerTerm { value: value * inv, grad, violations: 0 }
}

/// Hinge penalty `max(0, current - next)` on every axis step, divided by the entry count.
pub fn monotonicity_regularizer<E: Real>(grid: &LutGrid4D<E>) -> RegularizerTerm {
    let e = grid.entries();
    let inv = 1.0 / e.len() as f64;
    let mut value = 0.0;
    let mut violations = 0;
    let mut grad = vec![0.0; e.len()];
    for_each_edge(grid.points(), |a, b| {
        let d = e[a].as_f64() - e[b].as_f64();
        if d > 0.0 {
            value += d;
            violations += 1;
            grad[a] += inv;
            grad[b] -= inv;
        }
    });
    RegularizerTerm { value: value * inv, grad, violations }
}

pub fn count_violations<E: Real>(grid: &LutGrid4D<E>) -> usize {
    let e = grid.entries();
    let mut n = 0;
    for_each_edge(grid.points(), |a, b| {
        if e[a] > e[b] {
            n += 1;
        }
    });
    n
}

/// One training crop: the fixed lookup elements and the teacher's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    pub n_v: Vec<f32>,
    pub n_i: Vec<f32>,
    pub g_v: Vec<f32>,
    pub teacher: Vec<f32>,
    /// Precomputed scene code; `None` means the encoder produces it.
    pub scene: Option<Vec<f32>>,
}

impl Sample {
    fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        let ok = [&self.n_v, &self.n_i, &self.g_v, &self.teacher].iter().all(|p| p.len() == n)
            && self.scene.as_ref().is_none_or(|s| s.len() == n);
        if !ok {
            return Err(Error::ShapeMismatch(format!("training sample planes must all be {}x{}", self.width, self.height)));
        }
        Ok(())
    }
}

/// Each term of the objective, all in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_int: f64,
    pub l_ssim: f64,
    pub r_tv: f64,
    pub r_m: f64,
    pub l_all: f64,
    pub violations: usize,
}

/// Gradients of `L_all` with respect to the stored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Per grid entry (entries on the 0..=255 scale).
    pub grid: Vec<f64>,
    /// Encoder parameters flattened in `SceneEncoderParams::tensors` order; `None` when no
    /// sample used the encoder.
    pub encoder: Option<Vec<f64>>,
}

struct SampleResult {
    l_int: f64,
    l_ssim: f64,
    /// Touched entries and their summed gradients.
    grid: Vec<(u32, f64)>,
    encoder: Option<Vec<f64>>,
}

/// Dense per-thread buffer that remembers which entries a sample touched.
#[derive(Default)]
struct SparseAccumulator {
    dense: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<u32>,
}

impl SparseAccumulator {
    fn reset(&mut self, len: usize) {
        if self.dense.len() != len {
            self.dense = vec![0.0; len];
            self.marked = vec![false; len];
        }
        self.touched.clear();
    }

    #[inline]
    fn add(&mut self, i: usize, v: f64) {
        if !self.marked[i] {
            self.marked[i] = true;
            self.touched.push(i as u32);
        }
        self.dense[i] += v;
    }

    fn drain(&mut self) -> Vec<(u32, f64)> {
        let out = self.touched.iter().map(|&i| (i, self.dense[i as usize])).collect();
        for &i in &self.touched {
            self.dense[i as usize] = 0.0;
            self.marked[i as usize] = false;
        }
        self.touched.clear();
        out
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<SparseAccumulator> = std::cell::RefCell::new(SparseAccumulator::default());
}

fn sample_pass<F: Real>(
    grid: &LutGrid4D<F>,
    encoder: &SceneEncoderParams<F>,
    downsample: usize,
    weights: &LossWeights,
    sample: &Sample,
    batch: usize,
) -> Result<SampleResult> {
    sample.validate()?;
    let (w, h) = (sample.width, sample.height);
    let n = w * h;
    let cast = |p: &[f32]| -> Vec<F> { p.iter().map(|&v| F::from_f64(v as f64)).collect() };
    let (scene, tape) = match &sample.scene {
        Some(s) => (cast(s), None),
        None => {
            let input = EncoderInput::<F>::from_planes(&sample.n_v, &sample.n_i, w, h, downsample);
            let (low, tape) = encoder.forward(&input);
            let s = upsample_bilinear(&low, input.width, input.height, w, h, downsample);
            (s, Some((tape, input.width, input.height)))
        }
    };
    let bin = F::from_f64(grid.bin_scale() as f64);
    let points = grid.points();
    let offsets = grid.corner_offsets();
    let coords: Vec<LookupCoord<F>> = (0..n)
        .map(|p| {
            let v = [sample.n_v[p], sample.n_i[p], sample.g_v[p]].map(|x| F::from_f64(x as f64));
            LookupCoord::new([v[0], v[1], v[2], scene[p]], bin, points)
        })
        .collect();
    let student: Vec<F> = coords.iter().map(|c| lookup_with_offsets(grid, c, &offsets)).collect();
    let teacher = cast(&sample.teacher);

    let (l_int, g_int) = intensity_loss(&teacher, &student)?;
    let (l_ssim, g_ssim) = if weights.lambda_ssim > 0.0 {
        ssim_loss(&teacher, &student, w, h)?
    } else {
        (0.0, vec![F::zero(); n])
    };
    let inv_b = 1.0 / batch as f64;
    let c_int = F::from_f64(inv_b / INTENSITY_UNIT);
    let c_ssim = F::from_f64(inv_b * weights.lambda_ssim);

    let mut d_scene = vec![F::zero(); n];
    let inv_bin = F::one() / bin;
    let grid_grad = SCRATCH.with_borrow_mut(|acc| {
        acc.reset(grid.entries().len());
        for p in 0..n {
            let up = c_int * g_int[p] + c_ssim * g_ssim[p];
            if up == F::zero() {
                continue;
            }
            let lg = lookup_backward_with_offsets(grid, &coords[p], up, &offsets);
            for (c, &g) in lg.entries.iter().enumerate() {
                acc.add(lg.base + offsets[c], g.as_f64());
            }
            d_scene[p] = lg.d_s_coord * inv_bin;
        }
        acc.drain()
    });
    let encoder_grad = match tape {
        Some((tape, lw, lh)) => {
            let d_low = upsample_bilinear_adjoint(&d_scene, lw, lh, w, h, downsample);
            let g = encoder.backward(tape, &d_low)?;
            Some(g.tensors().flat_map(|t| t.iter().map(|v| v.as_f64())).collect())
        }
        None => None,
    };
    Ok(SampleResult { l_int, l_ssim, grid: grid_grad, encoder: encoder_grad })
}

/// `L_all = mean_b(L_int + λ_ssim L_ssim) + λ_TV R_TV + λ_m R_m` and its gradients.
///
/// Per-sample passes may run in parallel; they are always reduced in sample order.
pub fn total_loss<F: Real>(
    grid: &LutGrid4D<F>,
    encoder: &SceneEncoderParams<F>,
    downsample: usize,
    weights: &LossWeights,
    samples: &[Sample],
    parallel: bool,
) -> Result<(LossBreakdown, Gradients)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("loss over an empty batch".into()));
    }
    weights.validate()?;
    let b = samples.len();
    let pass = |s: &Sample| sample_pass(grid, encoder, downsample, weights, s, b);
    let results: Vec<SampleResult> = if parallel {
        samples.par_iter().map(pass).collect::<Result<_>>()?
    } else {
        samples.iter().map(pass).collect::<Result<_>>()?
    };

    let mut out = LossBreakdown::default();
    let mut grid_grad = vec![0.0f64; grid.entries().len()];
    let mut enc_grad: Option<Vec<f64>> = None;
    for r in results {
        out.l_int += r.l_int / INTENSITY_UNIT / b as f64;
        out.l_ssim += r.l_ssim / b as f64;
        for &(i, g) in &r.grid {
            grid_grad[i as usize] += g;
        }
        if let Some(g) = r.encoder {
            match &mut enc_grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => enc_grad = Some(g),
            }
        }
    }

    let tv = tv_regularizer(grid);
    let mono = monotonicity_regularizer(grid);
    let u = INTENSITY_UNIT;
    out.r_tv = tv.value / (u * u);
    out.r_m = mono.value / u;
    out.violations = mono.violations;
    if weights.lambda_tv > 0.0 || weights.lambda_m > 0.0 {
        let (ct, cm) = (weights.lambda_tv / (u * u), weights.lambda_m / u);
        for ((a, t), m) in grid_grad.iter_mut().zip(&tv.grad).zip(&mono.grad) {
            *a += ct * t + cm * m;
        }
    }
    out.l_all = out.l_int + weights.lambda_ssim * out.l_ssim + weights.lambda_tv * out.r_tv + weights.lambda_m * out.r_m;
    Ok((out, Gradients { grid: grid_grad, encoder: enc_grad }))
}
