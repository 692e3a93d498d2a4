//! Image containers, file I/O, color conversion and patch sampling.
//!
//! All pixel values live on the 0..=255 scale as `f32`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageEncoder, ImageReader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// Single-channel plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Validates length, finiteness and the 0..=255 range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "plane data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
            return Err(if v.is_finite() {
                Error::InvalidArgument(format!("pixel value {v} outside [0, 255]"))
            } else {
                Error::NonFinite("image plane".into())
            });
        }
        Ok(Self { width, height, data })
    }

    /// Caller guarantees the invariants (used on outputs that are clamped by construction).
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite() && (0.0..=255.0).contains(v)));
        Self { width, height, data }
    }

    /// Builds a plane from a function of `(x, y)`; results are clamped to [0, 255].
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_level(f(x, y)));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::from_raw(width, height, vec![clamp_level(value); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImagePlane {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        ImagePlane { width: w, height: h, data }
    }
}

/// Interleaved RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::ShapeMismatch(format!(
                "color data has {} values, expected 3x{}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
            return Err(if v.is_finite() {
                Error::InvalidArgument(format!("pixel value {v} outside [0, 255]"))
            } else {
                Error::NonFinite("color image".into())
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp_level));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ColorImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[row..row + 3 * w]);
        }
        ColorImage { width: w, height: h, data }
    }

    /// Rounds to 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Registered infrared plane and visible color image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub ir: ImagePlane,
    pub vis: ColorImage,
}

impl ImagePair {
    pub fn new(ir: ImagePlane, vis: ColorImage) -> Result<Self> {
        if ir.width != vis.width || ir.height != vis.height {
            return Err(Error::DimensionMismatch {
                what: "infrared vs visible",
                left_w: ir.width,
                left_h: ir.height,
                right_w: vis.width,
                right_h: vis.height,
            });
        }
        Ok(Self { ir, vis })
    }

    pub fn width(&self) -> usize {
        self.ir.width
    }

    pub fn height(&self) -> usize {
        self.ir.height
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImagePair {
        ImagePair { ir: self.ir.crop(x0, y0, w, h), vis: self.vis.crop(x0, y0, w, h) }
    }
}

#[inline]
pub(crate) fn clamp_level(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 255.0)
    }
}

// BT.601 full-range coefficients.
const KR: f32 = 0.299;
const KG: f32 = 0.587;
const KB: f32 = 0.114;

/// BT.601 luminance, written so that gray pixels map to their exact value.
#[inline]
pub fn luma(rgb: [f32; 3]) -> f32 {
    let [r, g, b] = rgb;
    g + KR * (r - g) + KB * (b - g)
}

#[inline]
pub fn rgb_to_ycbcr_pixel(rgb: [f32; 3]) -> [f32; 3] {
    let [r, _, b] = rgb;
    let y = luma(rgb);
    let cb = 128.0 + (b - y) / (2.0 * (1.0 - KB));
    let cr = 128.0 + (r - y) / (2.0 * (1.0 - KR));
    [clamp_level(y), clamp_level(cb), clamp_level(cr)]
}

#[inline]
pub fn ycbcr_to_rgb_pixel(ycc: [f32; 3]) -> [f32; 3] {
    let [y, cb, cr] = ycc;
    let r = y + 2.0 * (1.0 - KR) * (cr - 128.0);
    let b = y + 2.0 * (1.0 - KB) * (cb - 128.0);
    let g = (y - KR * r - KB * b) / KG;
    [clamp_level(r), clamp_level(g), clamp_level(b)]
}

/// Splits an RGB image into Y, Cb and Cr planes.
pub fn rgb_to_ycbcr(img: &ColorImage) -> (ImagePlane, ImagePlane, ImagePlane) {
    let n = img.width * img.height;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [a, b, c] = rgb_to_ycbcr_pixel([px[0], px[1], px[2]]);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    let (w, h) = (img.width, img.height);
    (ImagePlane::from_raw(w, h, y), ImagePlane::from_raw(w, h, cb), ImagePlane::from_raw(w, h, cr))
}

pub fn ycbcr_to_rgb(y: &ImagePlane, cb: &ImagePlane, cr: &ImagePlane) -> Result<ColorImage> {
    if !y.same_dims(cb) || !y.same_dims(cr) {
        return Err(Error::DimensionMismatch {
            what: "luma vs chroma",
            left_w: y.width,
            left_h: y.height,
            right_w: cb.width,
            right_h: cb.height,
        });
    }
    let mut data = Vec::with_capacity(3 * y.data.len());
    for ((&a, &b), &c) in y.data.iter().zip(&cb.data).zip(&cr.data) {
        data.extend(ycbcr_to_rgb_pixel([a, b, c]));
    }
    Ok(ColorImage { width: y.width, height: y.height, data })
}

/// Luminance (BT.601 Y) plane of a color image.
pub fn luminance(img: &ColorImage) -> ImagePlane {
    let data = img.data.chunks_exact(3).map(|p| clamp_level(luma([p[0], p[1], p[2]]))).collect();
    ImagePlane::from_raw(img.width, img.height, data)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
}

fn reject_deep(path: &Path, color: ColorType) -> Result<()> {
    match color {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(()),
        _ => Err(Error::UnsupportedBitDepth(path.to_path_buf())),
    }
}

/// Loads an infrared plane; 3-channel inputs are reduced to luminance.
pub fn load_plane(path: &Path) -> Result<ImagePlane> {
    let img = decode(path)?;
    reject_deep(path, img.color())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Ok(ImagePlane::from_raw(w, h, buf.into_raw().into_iter().map(f32::from).collect()))
        }
        DynamicImage::ImageRgb8(buf) => {
            let data = buf
                .into_raw()
                .chunks_exact(3)
                .map(|p| clamp_level(luma([p[0] as f32, p[1] as f32, p[2] as f32])))
                .collect();
            Ok(ImagePlane::from_raw(w, h, data))
        }
        other => Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!("unsupported channel layout {:?}; expected 1 or 3 channels", other.color()),
        }),
    }
}

/// Loads a 3-channel 8-bit visible image.
pub fn load_color(path: &Path) -> Result<ColorImage> {
    let img = decode(path)?;
    reject_deep(path, img.color())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageRgb8(buf) => Ok(ColorImage {
            width: w,
            height: h,
            data: buf.into_raw().into_iter().map(f32::from).collect(),
        }),
        other => Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!("unsupported channel layout {:?}; expected 3-channel RGB", other.color()),
        }),
    }
}

pub fn load_image_pair(ir_path: &Path, vis_path: &Path) -> Result<ImagePair> {
    let ir = load_plane(ir_path)?;
    let vis = load_color(vis_path)?;
    ImagePair::new(ir, vis)
}

pub fn save_png_rgb(path: &Path, img: &ColorImage) -> Result<()> {
    encode_png(path, &img.to_rgb8(), img.width, img.height, image::ExtendedColorType::Rgb8)
}

pub fn save_png_gray(path: &Path, plane: &ImagePlane) -> Result<()> {
    let bytes: Vec<u8> = plane.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    encode_png(path, &bytes, plane.width, plane.height, image::ExtendedColorType::L8)
}

fn encode_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Result<()> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })?;
    write_atomic(path, &out)
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Lists image files of a directory by file name, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs `<dir>/ir/NAME` with `<dir>/vis/NAME`. Unmatched files are skipped with a warning.
pub fn pair_dataset_files(data_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let ir_dir = data_dir.join("ir");
    let vis_dir = data_dir.join("vis");
    let ir_names = list_images(&ir_dir)?;
    let vis_names = list_images(&vis_dir)?;
    let mut pairs = Vec::new();
    for name in &ir_names {
        if vis_names.binary_search(name).is_ok() {
            pairs.push((name.clone(), ir_dir.join(name), vis_dir.join(name)));
        } else {
            log::warn!("skipping {name}: no matching visible image");
        }
    }
    for name in &vis_names {
        if ir_names.binary_search(name).is_err() {
            log::warn!("skipping {name}: no matching infrared image");
        }
    }
    Ok(pairs)
}

/// Loads every matched pair of a dataset directory, ordered by file name.
pub fn load_dataset(data_dir: &Path) -> Result<Vec<ImagePair>> {
    let files = pair_dataset_files(data_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no matched ir/vis pairs under {}", data_dir.display())));
    }
    files.iter().map(|(_, ir, vis)| load_image_pair(ir, vis)).collect()
}

/// Where a patch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub source: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<ImagePair>,
    pub patch_size: usize,
    pub origins: Vec<PatchOrigin>,
}

pub(crate) fn check_patch_sources(dims: impl IntoIterator<Item = (usize, usize)>, size: usize) -> Result<usize> {
    let mut n = 0;
    for (w, h) in dims {
        if w < size || h < size {
            return Err(Error::ImageTooSmall { width: w, height: h, size });
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset("no source images to sample patches from".into()));
    }
    Ok(n)
}

/// Draws one patch origin: uniform source, uniform top-left offset.
pub(crate) fn draw_origin(rng: &mut ChaCha8Rng, dims: &[(usize, usize)], size: usize) -> PatchOrigin {
    let source = rng.random_range(0..dims.len() as u32) as usize;
    draw_origin_in(rng, source, dims[source], size)
}

pub(crate) fn draw_origin_in(rng: &mut ChaCha8Rng, source: usize, (w, h): (usize, usize), size: usize) -> PatchOrigin {
    let x = rng.random_range(0..=(w - size) as u32) as usize;
    let y = rng.random_range(0..=(h - size) as u32) as usize;
    PatchOrigin { source, x, y }
}

/// Samples `count` random `size`×`size` crops. The same seed always yields the same batch.
pub fn sample_patches(dataset: &[ImagePair], count: usize, size: usize, seed: u64) -> Result<PatchBatch> {
    if count == 0 {
        return Err(Error::InvalidArgument("patch count must be at least 1".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be at least 1".into()));
    }
    let dims: Vec<_> = dataset.iter().map(|p| (p.width(), p.height())).collect();
    check_patch_sources(dims.iter().copied(), size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins: Vec<_> = (0..count).map(|_| draw_origin(&mut rng, &dims, size)).collect();
    let patches = origins.iter().map(|o| dataset[o.source].crop(o.x, o.y, size, size)).collect();
    Ok(PatchBatch { patches, patch_size: size, origins })
}
