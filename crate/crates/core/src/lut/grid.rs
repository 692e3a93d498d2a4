use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_GRID_POINTS: usize = 17;
pub const DEFAULT_BIN_SCALE: f32 = 17.0;

/// Axis order of the table, slowest to fastest.
pub const AXIS_ORDER: [u8; 4] = *b"VIGS";

/// Learnable 4D table of fused-luminance entries, indexed `(v, i, g, s)` with `s` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LutGrid4D<E = f32> {
    points: usize,
    bin_scale: f32,
    entries: Vec<E>,
}

impl<E: Real> LutGrid4D<E> {
    pub fn new(points: usize, bin_scale: f32, entries: Vec<E>) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points per axis, got {points}")));
        }
        if !(bin_scale.is_finite() && bin_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("bin scale must be positive, got {bin_scale}")));
        }
        if entries.len() != points.pow(4) {
            return Err(Error::ShapeMismatch(format!(
                "grid with {points} points per axis needs {} entries, got {}",
                points.pow(4),
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid entries".into()));
        }
        Ok(Self { points, bin_scale, entries })
    }

    pub fn constant(points: usize, bin_scale: f32, value: E) -> Result<Self> {
        Self::new(points, bin_scale, vec![value; points.pow(4)])
    }

    /// Fills entry `[k, l, m, n]` (v, i, g, s) from a function of the indices.
    pub fn from_fn(points: usize, bin_scale: f32, mut f: impl FnMut(usize, usize, usize, usize) -> E) -> Result<Self> {
        let mut entries = Vec::with_capacity(points.pow(4));
        for k in 0..points {
            for l in 0..points {
                for m in 0..points {
                    for n in 0..points {
                        entries.push(f(k, l, m, n));
                    }
                }
            }
        }
        Self::new(points, bin_scale, entries)
    }

    /// The "average fusion" surface `clamp(T (k + l) / 2, 0, 255)`.
    pub fn average_init(points: usize, bin_scale: f32) -> Result<Self> {
        let t = bin_scale as f64;
        Self::from_fn(points, bin_scale, |k, l, _, _| E::from_f64((t * (k + l) as f64 / 2.0).clamp(0.0, 255.0)))
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn bin_scale(&self) -> f32 {
        self.bin_scale
    }

    pub fn entries(&self) -> &[E] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [E] {
        &mut self.entries
    }

    pub fn strides(&self) -> [usize; 4] {
        let g = self.points;
        [g * g * g, g * g, g, 1]
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, m: usize, n: usize) -> usize {
        let g = self.points;
        ((k * g + l) * g + m) * g + n
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, m: usize, n: usize) -> E {
        self.entries[self.index(k, l, m, n)]
    }

    pub fn cast<G: Real>(&self) -> LutGrid4D<G> {
        LutGrid4D {
            points: self.points,
            bin_scale: self.bin_scale,
            entries: self.entries.iter().map(|v| G::from_f64((*v).as_f64())).collect(),
        }
    }

    /// Linear offsets of the 16 cell corners relative to the base corner;
    /// corner `c = h·8 + p·4 + q·2 + r`.
    pub fn corner_offsets(&self) -> [usize; 16] {
        let [sv, si, sg, ss] = self.strides();
        std::array::from_fn(|c| (c >> 3) * sv + ((c >> 2) & 1) * si + ((c >> 1) & 1) * sg + (c & 1) * ss)
    }

    #[inline]
    pub fn coord<F: Real>(&self, v: F, i: F, g: F, s: F) -> LookupCoord<F> {
        LookupCoord::new([v, i, g, s], F::from_f64(self.bin_scale as f64), self.points)
    }
}

/// Continuous position inside the grid: floors per axis and fractional parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookupCoord<F = f32> {
    /// `(k, l, m, n)` for the `(v, i, g, s)` axes, each in `[0, G-2]`.
    pub floor: [usize; 4],
    /// Fractional offsets within the cell, each in `[0, 1]`.
    pub frac: [F; 4],
    /// Whether the scene coordinate fell outside `[0, G-1]` and was clamped.
    pub s_clamped: bool,
}

impl<F: Real> LookupCoord<F> {
    /// Maps raw element values to grid coordinates `value / T`, clamped to `[0, G-1]`.
    #[inline]
    pub fn new(values: [F; 4], bin_scale: F, points: usize) -> Self {
        let top = F::from_f64((points - 1) as f64);
        let max_floor = points - 2;
        let mut floor = [0usize; 4];
        let mut frac = [F::zero(); 4];
        let mut s_clamped = false;
        for axis in 0..4 {
            let raw = values[axis] / bin_scale;
            let a = raw.max(F::zero()).min(top);
            if axis == 3 {
                s_clamped = raw < F::zero() || raw > top;
            }
            // a >= 0, so truncation is the floor
            let k = (a.as_f64() as usize).min(max_floor);
            floor[axis] = k;
            frac[axis] = a - F::from_f64(k as f64);
        }
        Self { floor, frac, s_clamped }
    }

    /// Continuous coordinate along one axis.
    pub fn position(&self, axis: usize) -> F {
        F::from_f64(self.floor[axis] as f64) + self.frac[axis]
    }
}

/// Coordinates for every pixel of four encoding planes.
pub fn to_coords(
    enc: &crate::encode::Encodings,
    bin_scale: f32,
    points: usize,
) -> Vec<LookupCoord<f32>> {
    let (v, i, g, s) = (enc.n_v.data(), enc.n_i.data(), enc.g_v.data(), enc.s_j.data());
    (0..v.len()).map(|p| LookupCoord::new([v[p], i[p], g[p], s[p]], bin_scale, points)).collect()
}

/// The 16 interpolation weights, corner `c = h·8 + p·4 + q·2 + r`.
#[inline]
pub fn corner_weights<F: Real>(frac: &[F; 4]) -> [F; 16] {
    let w8 = vig_weights(frac);
    let one = F::one();
    let ws = [one - frac[3], frac[3]];
    std::array::from_fn(|c| w8[c >> 1] * ws[c & 1])
}

/// Weights of the 8 `(v, i, g)` corners, index `h·4 + p·2 + q`.
#[inline]
fn vig_weights<F: Real>(frac: &[F; 4]) -> [F; 8] {
    let one = F::one();
    let wv = [one - frac[0], frac[0]];
    let wi = [one - frac[1], frac[1]];
    let wg = [one - frac[2], frac[2]];
    let w4 = [wv[0] * wi[0], wv[0] * wi[1], wv[1] * wi[0], wv[1] * wi[1]];
    std::array::from_fn(|c| w4[c >> 1] * wg[c & 1])
}

#[inline]
fn base_index<E: Real>(grid: &LutGrid4D<E>, floor: &[usize; 4]) -> usize {
    grid.index(floor[0], floor[1], floor[2], floor[3])
}

/// Quadrilinear interpolation over the 16 surrounding entries.
#[inline]
pub fn lookup<F: Real>(grid: &LutGrid4D<F>, coord: &LookupCoord<F>) -> F {
    lookup_with_offsets(grid, coord, &grid.corner_offsets())
}

#[inline]
pub(crate) fn lookup_with_offsets<F: Real>(grid: &LutGrid4D<F>, coord: &LookupCoord<F>, offsets: &[usize; 16]) -> F {
    let base = base_index(grid, &coord.floor);
    let cell = &grid.entries[base..=base + offsets[15]];
    let f = &coord.frac;
    // collapse one axis at a time: s, then g, i, v
    let l8: [F; 8] = std::array::from_fn(|c| {
        let lo = cell[offsets[c << 1]];
        lo + f[3] * (cell[offsets[(c << 1) | 1]] - lo)
    });
    let l4: [F; 4] = std::array::from_fn(|c| l8[c << 1] + f[2] * (l8[(c << 1) | 1] - l8[c << 1]));
    let l2 = [l4[0] + f[1] * (l4[1] - l4[0]), l4[2] + f[1] * (l4[3] - l4[2])];
    l2[0] + f[0] * (l2[1] - l2[0])
}

/// Forward lookup straight from raw element values.
#[inline]
pub(crate) fn lookup_values(grid: &LutGrid4D<f32>, values: [f32; 4], bin_scale: f32, points: usize, offsets: &[usize; 16]) -> f32 {
    let top = (points - 1) as f32;
    let max_floor = points - 2;
    let mut floor = [0usize; 4];
    let mut frac = [0f32; 4];
    for a in 0..4 {
        let x = (values[a] / bin_scale).max(0.0).min(top);
        let k = (x as usize).min(max_floor);
        floor[a] = k;
        frac[a] = x - k as f32;
    }
    let base = ((floor[0] * points + floor[1]) * points + floor[2]) * points + floor[3];
    let cell = &grid.entries[base..=base + offsets[15]];
    let l8: [f32; 8] = std::array::from_fn(|c| {
        let lo = cell[offsets[c << 1]];
        lo + frac[3] * (cell[offsets[(c << 1) | 1]] - lo)
    });
    let l4: [f32; 4] = std::array::from_fn(|c| l8[c << 1] + frac[2] * (l8[(c << 1) | 1] - l8[c << 1]));
    let l2 = [l4[0] + frac[1] * (l4[1] - l4[0]), l4[2] + frac[1] * (l4[3] - l4[2])];
    l2[0] + frac[0] * (l2[1] - l2[0])
}

/// Sparse gradient of one lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookupGrad<F> {
    /// Linear index of the base corner.
    pub base: usize,
    /// `d out / d entry` for each corner, scaled by the upstream gradient.
    pub entries: [F; 16],
    /// `d out / d (s / T)`, scaled by the upstream gradient.
    pub d_s_coord: F,
}

/// Entry gradients are the corner weights; only the scene axis gets a coordinate gradient.
#[inline]
pub fn lookup_backward<F: Real>(grid: &LutGrid4D<F>, coord: &LookupCoord<F>, upstream: F) -> LookupGrad<F> {
    lookup_backward_with_offsets(grid, coord, upstream, &grid.corner_offsets())
}

#[inline]
pub(crate) fn lookup_backward_with_offsets<F: Real>(
    grid: &LutGrid4D<F>,
    coord: &LookupCoord<F>,
    upstream: F,
    offsets: &[usize; 16],
) -> LookupGrad<F> {
    let base = base_index(grid, &coord.floor);
    let w8 = vig_weights(&coord.frac);
    let fs = coord.frac[3];
    let entries = std::array::from_fn(|c| {
        let u = upstream * w8[c >> 1];
        if c & 1 == 1 {
            u * fs
        } else {
            u * (F::one() - fs)
        }
    });
    let d_s_coord = if coord.s_clamped {
        F::zero()
    } else {
        let cell = &grid.entries[base..=base + offsets[15]];
        let mut acc = F::zero();
        for c in 0..8 {
            acc += w8[c] * (cell[offsets[(c << 1) | 1]] - cell[offsets[c << 1]]);
        }
        upstream * acc
    };
    LookupGrad { base, entries, d_s_coord }
}
