use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{lookup_values, LutGrid4D, DEFAULT_BIN_SCALE, DEFAULT_GRID_POINTS};
use crate::encode::{low_order_encodings, upsample_bilinear, EncoderInput, Encodings, SceneEncoderParams};
use crate::error::{Error, Result};
use crate::imgio::{clamp_level, rgb_to_ycbcr, ycbcr_to_rgb, ColorImage, ImagePair, ImagePlane};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_DOWNSAMPLE: usize = 4;

/// Source of the fourth (scene) lookup element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneFeatureKind {
    /// The model's convolutional scene encoder.
    Encoder,
    /// Fixed box mean of `(n_v + n_i) / 2`.
    BoxMean { window: usize },
}

impl SceneFeatureKind {
    pub const DEFAULT_BOX: SceneFeatureKind = SceneFeatureKind::BoxMean { window: 11 };
}

/// Provenance stored alongside the table as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub method: String,
    pub scene_feature: SceneFeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

impl ModelMetadata {
    pub fn new(method: impl Into<String>, scene_feature: SceneFeatureKind) -> Self {
        Self {
            method: method.into(),
            scene_feature,
            teacher: None,
            seed: None,
            lambda_ssim: None,
            lambda_tv: None,
            lambda_m: None,
            epochs: None,
            coverage: None,
        }
    }
}

/// A complete fusion model: table, scene encoder and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MmLutModel {
    pub grid: LutGrid4D<f32>,
    pub encoder: SceneEncoderParams<f32>,
    pub downsample: usize,
    pub metadata: ModelMetadata,
}

impl MmLutModel {
    pub fn new(
        grid: LutGrid4D<f32>,
        encoder: SceneEncoderParams<f32>,
        downsample: usize,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        crate::encode::scene::validate_factor(downsample)?;
        encoder.validate()?;
        if let SceneFeatureKind::BoxMean { window } = metadata.scene_feature {
            if window % 2 == 0 {
                return Err(Error::InvalidArgument(format!("box window must be odd, got {window}")));
            }
        }
        Ok(Self { grid, encoder, downsample, metadata })
    }

    /// Untrained model: average-fusion grid, freshly initialized encoder.
    pub fn initial(seed: u64, scene_feature: SceneFeatureKind) -> Self {
        let grid = LutGrid4D::average_init(DEFAULT_GRID_POINTS, DEFAULT_BIN_SCALE).expect("default grid is valid");
        let mut metadata = ModelMetadata::new("init", scene_feature);
        metadata.seed = Some(seed);
        Self { grid, encoder: SceneEncoderParams::init(seed), downsample: DEFAULT_DOWNSAMPLE, metadata }
    }

    pub fn scene_feature(&self) -> SceneFeatureKind {
        self.metadata.scene_feature
    }

    /// Scene-code plane for the given intensity planes.
    pub fn scene_plane(&self, n_v: &ImagePlane, n_i: &ImagePlane) -> ImagePlane {
        let (w, h) = (n_v.width(), n_v.height());
        match self.metadata.scene_feature {
            SceneFeatureKind::Encoder => {
                let input = EncoderInput::from_planes(n_v.data(), n_i.data(), w, h, self.downsample);
                let low = self.encoder.infer(&input);
                let full = upsample_bilinear(&low, input.width, input.height, w, h, self.downsample);
                ImagePlane::from_raw(w, h, full.into_iter().map(clamp_level).collect())
            }
            SceneFeatureKind::BoxMean { window } => crate::quant::box_scene_plane(n_v, n_i, window),
        }
    }

    pub fn encode(&self, pair: &ImagePair) -> Encodings {
        let (n_i, n_v, g_v) = low_order_encodings(pair);
        let s_j = self.scene_plane(&n_v, &n_i);
        Encodings { n_i, n_v, g_v, s_j }
    }

    /// Per-pixel table lookup, parallel over rows; result clamped to [0, 255].
    pub fn lookup_plane(&self, enc: &Encodings) -> ImagePlane {
        let (w, h) = (enc.n_v.width(), enc.n_v.height());
        let grid = &self.grid;
        let offsets = grid.corner_offsets();
        let bin = grid.bin_scale();
        let points = grid.points();
        let (v, i, g, s) = (enc.n_v.data(), enc.n_i.data(), enc.g_v.data(), enc.s_j.data());
        let mut out = vec![0.0f32; w * h];
        out.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
            let base = y * w;
            for (x, o) in row.iter_mut().enumerate() {
                let p = base + x;
                *o = clamp_level(lookup_values(grid, [v[p], i[p], g[p], s[p]], bin, points, &offsets));
            }
        });
        ImagePlane::from_raw(w, h, out)
    }

    /// Fused luminance plane.
    pub fn fuse_luminance(&self, pair: &ImagePair) -> ImagePlane {
        self.lookup_plane(&self.encode(pair))
    }

    /// Fused color image: looked-up luminance with the visible image's chroma.
    pub fn fuse_image(&self, pair: &ImagePair) -> Result<ColorImage> {
        let y = self.fuse_luminance(pair);
        let (_, cb, cr) = rgb_to_ycbcr(&pair.vis);
        ycbcr_to_rgb(&y, &cb, &cr)
    }
}
