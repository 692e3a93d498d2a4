//! Five-block convolutional scene encoder with a hand-written backward pass.
//!
//! Every block is a 3×3 convolution (stride 1, zero padding 1) followed by a
//! leaky rectifier, except the last, whose single output channel goes through
//! a logistic sigmoid scaled to 0..255. Convolutions are lowered to GEMM via
//! im2col.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::ImagePlane;
use crate::real::Real;

/// Channel widths from input to output.
pub const CHANNEL_PLAN: [usize; 6] = [2, 16, 16, 16, 16, 1];
pub const LEAKY_SLOPE: f64 = 0.2;
const TAPS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<F = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> ConvBlock<F> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![F::zero(); out_channels * in_channels * TAPS],
            bias: vec![F::zero(); out_channels],
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoderParams<F = f32> {
    pub blocks: Vec<ConvBlock<F>>,
}

impl<F: Real> SceneEncoderParams<F> {
    pub fn zeros() -> Self {
        let blocks = CHANNEL_PLAN.windows(2).map(|w| ConvBlock::zeros(w[0], w[1])).collect();
        Self { blocks }
    }

    /// Uniform initialization in ±sqrt(1 / fan_in), drawn from `seed`.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        for block in &mut params.blocks {
            let bound = (1.0 / block.fan_in() as f64).sqrt();
            for w in block.weights.iter_mut().chain(block.bias.iter_mut()) {
                *w = F::from_f64(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len() + b.bias.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> SceneEncoderParams<G> {
        SceneEncoderParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    in_channels: b.in_channels,
                    out_channels: b.out_channels,
                    weights: b.weights.iter().map(|v| G::from_f64((*v).as_f64())).collect(),
                    bias: b.bias.iter().map(|v| G::from_f64((*v).as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Shape and finiteness check.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::ShapeMismatch("scene encoder has no blocks".into()));
        }
        let mut channels = self.blocks[0].in_channels;
        if channels != 2 {
            return Err(Error::ShapeMismatch(format!("scene encoder expects 2 input channels, found {channels}")));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels != channels
                || b.weights.len() != b.out_channels * b.in_channels * TAPS
                || b.bias.len() != b.out_channels
            {
                return Err(Error::ShapeMismatch(format!("scene encoder block {i} has inconsistent shape")));
            }
            if b.weights.iter().chain(&b.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("scene encoder block {i}")));
            }
            channels = b.out_channels;
        }
        if channels != 1 {
            return Err(Error::ShapeMismatch(format!("scene encoder must end in 1 channel, found {channels}")));
        }
        Ok(())
    }

    /// Iterates parameter tensors in a fixed order: block0 weights, block0 bias, block1 weights, ...
    pub fn tensors(&self) -> impl Iterator<Item = &[F]> {
        self.blocks.iter().flat_map(|b| [b.weights.as_slice(), b.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<F>> {
        self.blocks.iter_mut().flat_map(|b| [&mut b.weights, &mut b.bias])
    }

    /// Runs the network and records what the backward pass needs.
    pub fn forward(&self, input: &EncoderInput<F>) -> (Vec<F>, EncoderTape<F>) {
        let (out, tape) = self.run(input, true);
        (out, tape.expect("tape requested"))
    }

    /// Inference-only forward pass.
    pub fn infer(&self, input: &EncoderInput<F>) -> Vec<F> {
        self.run(input, false).0
    }

    fn run(&self, input: &EncoderInput<F>, record: bool) -> (Vec<F>, Option<EncoderTape<F>>) {
        let (w, h) = (input.width, input.height);
        let n = w * h;
        let slope = F::lit(LEAKY_SLOPE);
        let mut act = input.data.clone();
        let mut cols = Vec::new();
        let mut pre = Vec::new();
        let last = self.blocks.len() - 1;
        for (bi, block) in self.blocks.iter().enumerate() {
            let k = block.in_channels * TAPS;
            let col = im2col(&act, block.in_channels, w, h);
            let mut z = vec![F::zero(); block.out_channels * n];
            for (o, row) in z.chunks_exact_mut(n).enumerate() {
                row.fill(block.bias[o]);
            }
            F::gemm(
                block.out_channels,
                k,
                n,
                F::one(),
                (&block.weights, k as isize, 1),
                (&col, n as isize, 1),
                F::one(),
                (&mut z, n as isize, 1),
            );
            act = if bi == last {
                z.iter().map(|&v| F::lit(255.0) * sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| if v > F::zero() { v } else { slope * v }).collect()
            };
            if record {
                cols.push(col);
                pre.push(z);
            }
        }
        let tape = record.then(|| EncoderTape { width: w, height: h, cols, pre });
        (act, tape)
    }

    /// Exact parameter gradients given `d loss / d output` at encoder resolution.
    pub fn backward(&self, tape: EncoderTape<F>, grad_out: &[F]) -> Result<EncoderGrads<F>> {
        let (w, h) = (tape.width, tape.height);
        let n = w * h;
        if grad_out.len() != n || tape.cols.len() != self.blocks.len() || tape.pre.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "encoder tape ({}x{}, {} blocks) does not match gradient of length {} / {} blocks",
                w,
                h,
                tape.cols.len(),
                grad_out.len(),
                self.blocks.len()
            )));
        }
        let slope = F::lit(LEAKY_SLOPE);
        let last = self.blocks.len() - 1;
        // d/dz of 255*sigmoid(z)
        let mut dz: Vec<F> = tape.pre[last]
            .iter()
            .zip(grad_out)
            .map(|(&z, &g)| {
                let s = sigmoid(z);
                g * F::lit(255.0) * s * (F::one() - s)
            })
            .collect();
        let mut grads: Vec<(Vec<F>, Vec<F>)> = Vec::with_capacity(self.blocks.len());
        for bi in (0..self.blocks.len()).rev() {
            let block = &self.blocks[bi];
            let k = block.in_channels * TAPS;
            let col = &tape.cols[bi];
            let mut dw = vec![F::zero(); block.out_channels * k];
            // dW = dZ · colᵀ
            F::gemm(
                block.out_channels,
                n,
                k,
                F::one(),
                (&dz, n as isize, 1),
                (col, 1, n as isize),
                F::zero(),
                (&mut dw, k as isize, 1),
            );
            let db: Vec<F> = dz.chunks_exact(n).map(|row| row.iter().copied().sum()).collect();
            grads.push((dw, db));
            if bi > 0 {
                // dcol = Wᵀ · dZ
                let mut dcol = vec![F::zero(); k * n];
                F::gemm(
                    k,
                    block.out_channels,
                    n,
                    F::one(),
                    (&block.weights, 1, k as isize),
                    (&dz, n as isize, 1),
                    F::zero(),
                    (&mut dcol, n as isize, 1),
                );
                let dact = col2im(&dcol, block.in_channels, w, h);
                dz = dact
                    .iter()
                    .zip(&tape.pre[bi - 1])
                    .map(|(&g, &z)| if z > F::zero() { g } else { slope * g })
                    .collect();
            }
        }
        grads.reverse();
        Ok(EncoderGrads { blocks: grads })
    }
}

#[inline]
fn sigmoid<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// `[c*9 + ky*3 + kx][y*w + x] = input[c][y+ky-1][x+kx-1]` (zero outside).
fn im2col<F: Real>(input: &[F], channels: usize, w: usize, h: usize) -> Vec<F> {
    let n = w * h;
    let mut col = vec![F::zero(); channels * TAPS * n];
    for c in 0..channels {
        let plane = &input[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[((c * TAPS) + ky * 3 + kx) * n..][..n];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    let xs = (x0 as isize + dx) as usize;
                    drow[x0..x1].copy_from_slice(&src[xs..xs + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im<F: Real>(col: &[F], channels: usize, w: usize, h: usize) -> Vec<F> {
    let n = w * h;
    let mut out = vec![F::zero(); channels * n];
    for c in 0..channels {
        let plane = &mut out[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let src = &col[((c * TAPS) + ky * 3 + kx) * n..][..n];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let xs = (x0 as isize + dx) as usize;
                    let drow = &mut plane[sy as usize * w + xs..][..x1 - x0];
                    for (d, &s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTape<F = f32> {
    width: usize,
    height: usize,
    cols: Vec<Vec<F>>,
    pre: Vec<Vec<F>>,
}

impl<F> EncoderTape<F> {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
}

/// Per-block `(weight, bias)` gradients, same layout as [`ConvBlock`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<F = f32> {
    pub blocks: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Real> EncoderGrads<F> {
    pub fn tensors(&self) -> impl Iterator<Item = &[F]> {
        self.blocks.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }
}

/// Two-channel `(n_v, n_i)` stack, scaled to [0, 1], at encoder resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput<F = f32> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<F>,
}

impl<F: Real> EncoderInput<F> {
    /// Box-averages `factor`×`factor` blocks (partial blocks at the right and bottom edges).
    pub fn from_planes(n_v: &[f32], n_i: &[f32], width: usize, height: usize, factor: usize) -> Self {
        let lw = width.div_ceil(factor);
        let lh = height.div_ceil(factor);
        let mut data = vec![F::zero(); 2 * lw * lh];
        let (v_half, i_half) = data.split_at_mut(lw * lh);
        for ly in 0..lh {
            let y0 = ly * factor;
            let y1 = (y0 + factor).min(height);
            for lx in 0..lw {
                let x0 = lx * factor;
                let x1 = (x0 + factor).min(width);
                let (mut sv, mut si) = (0.0f64, 0.0f64);
                for y in y0..y1 {
                    for x in x0..x1 {
                        sv += n_v[y * width + x] as f64;
                        si += n_i[y * width + x] as f64;
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64 * 255.0;
                v_half[ly * lw + lx] = F::from_f64(sv / count);
                i_half[ly * lw + lx] = F::from_f64(si / count);
            }
        }
        Self { width: lw, height: lh, data }
    }
}

fn check_factor(factor: usize) -> Result<()> {
    if matches!(factor, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("encoder downsample factor must be 1, 2 or 4, got {factor}")))
    }
}

/// Sampling table for one axis: `(i0, i1, frac)` per output index.
fn bilinear_axis(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|x| {
            let src = ((x as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Half-pixel-centred bilinear upsampling by `factor`, cropped to `width`×`height`.
pub fn upsample_bilinear<F: Real>(low: &[F], lw: usize, lh: usize, width: usize, height: usize, factor: usize) -> Vec<F> {
    if factor == 1 {
        return low.to_vec();
    }
    let ax = bilinear_axis(width, lw, factor);
    let ay = bilinear_axis(height, lh, factor);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ay {
        let fy = F::from_f64(fy);
        let (r0, r1) = (&low[y0 * lw..(y0 + 1) * lw], &low[y1 * lw..(y1 + 1) * lw]);
        for &(x0, x1, fx) in &ax {
            let fx = F::from_f64(fx);
            let top = r0[x0] + fx * (r0[x1] - r0[x0]);
            let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
            out.push(top + fy * (bot - top));
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_adjoint<F: Real>(
    grad: &[F],
    lw: usize,
    lh: usize,
    width: usize,
    height: usize,
    factor: usize,
) -> Vec<F> {
    if factor == 1 {
        return grad.to_vec();
    }
    let ax = bilinear_axis(width, lw, factor);
    let ay = bilinear_axis(height, lh, factor);
    let mut low = vec![F::zero(); lw * lh];
    for (y, &(y0, y1, fy)) in ay.iter().enumerate() {
        let fy = F::from_f64(fy);
        for (x, &(x0, x1, fx)) in ax.iter().enumerate() {
            let g = grad[y * width + x];
            let fx = F::from_f64(fx);
            let gt = g * (F::one() - fy);
            let gb = g * fy;
            low[y0 * lw + x0] += gt * (F::one() - fx);
            low[y0 * lw + x1] += gt * fx;
            low[y1 * lw + x0] += gb * (F::one() - fx);
            low[y1 * lw + x1] += gb * fx;
        }
    }
    low
}

/// Scene code for a pair of intensity planes, returned at full resolution.
pub fn scene_encode(
    n_v: &ImagePlane,
    n_i: &ImagePlane,
    params: &SceneEncoderParams<f32>,
    downsample: usize,
) -> Result<(ImagePlane, EncoderTape<f32>)> {
    check_factor(downsample)?;
    params.validate()?;
    let (w, h) = (n_v.width(), n_v.height());
    let input = EncoderInput::from_planes(n_v.data(), n_i.data(), w, h, downsample);
    let (low, tape) = params.forward(&input);
    let full = upsample_bilinear(&low, input.width, input.height, w, h, downsample);
    let data = full.into_iter().map(crate::imgio::clamp_level).collect();
    Ok((ImagePlane::from_raw(w, h, data), tape))
}

/// Parameter gradients of the scene code; `grad_s` is at encoder resolution.
pub fn scene_encode_backward(
    params: &SceneEncoderParams<f32>,
    tape: EncoderTape<f32>,
    grad_s: &[f32],
) -> Result<EncoderGrads<f32>> {
    params.backward(tape, grad_s)
}

pub(crate) fn validate_factor(factor: usize) -> Result<()> {
    check_factor(factor)
}
