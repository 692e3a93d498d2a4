//! Per-pixel lookup elements: intensities, gradient and the learned scene code.

pub(crate) mod scene;

pub use scene::{
    scene_encode, scene_encode_backward, upsample_bilinear, upsample_bilinear_adjoint, ConvBlock, EncoderGrads,
    EncoderInput, EncoderTape, SceneEncoderParams, CHANNEL_PLAN, LEAKY_SLOPE,
};

use crate::filters::sobel;
use crate::imgio::{luminance, ImagePair, ImagePlane};

/// The four lookup elements of every pixel, all on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Encodings {
    /// Infrared intensity.
    pub n_i: ImagePlane,
    /// Visible luminance.
    pub n_v: ImagePlane,
    /// Gradient magnitude of the visible luminance.
    pub g_v: ImagePlane,
    /// Scene code.
    pub s_j: ImagePlane,
}

/// Zeroth-order elements: the IR plane as-is and the BT.601 luminance of the visible image.
pub fn intensity_encodings(pair: &ImagePair) -> (ImagePlane, ImagePlane) {
    (pair.ir.clone(), luminance(&pair.vis))
}

/// Sobel gradient magnitude, edge-replicated borders, clamped to 255.
pub fn gradient_encoding(n_v: &ImagePlane) -> ImagePlane {
    let (w, h) = (n_v.width(), n_v.height());
    let (sx, sy) = sobel(n_v.data(), w, h);
    let data = sx.iter().zip(&sy).map(|(a, b)| (a * a + b * b).sqrt().min(255.0)).collect();
    ImagePlane::from_raw(w, h, data)
}

/// The three fixed (non-learned) elements: `(n_i, n_v, g_v)`.
pub fn low_order_encodings(pair: &ImagePair) -> (ImagePlane, ImagePlane, ImagePlane) {
    let (n_i, n_v) = intensity_encodings(pair);
    let g_v = gradient_encoding(&n_v);
    (n_i, n_v, g_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::ColorImage;

    #[test]
    fn intensity_passthrough_and_luma_extremes() {
        let ir = ImagePlane::from_fn(2, 1, |x, _| if x == 0 { 200.0 } else { 3.0 });
        let vis = ColorImage::from_fn(2, 1, |x, _| if x == 0 { [255.0; 3] } else { [0.0; 3] });
        let pair = ImagePair::new(ir, vis).unwrap();
        let (n_i, n_v) = intensity_encodings(&pair);
        assert_eq!(n_i.get(0, 0), 200.0);
        assert_eq!(n_v.get(0, 0), 255.0);
        assert_eq!(n_v.get(1, 0), 0.0);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient_encoding(&ImagePlane::constant(9, 7, 77.0));
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vertical_step_saturates() {
        // Columns 0..4 are 0, columns 4..8 are 255.
        let p = ImagePlane::from_fn(8, 6, |x, _| if x < 4 { 0.0 } else { 255.0 });
        let (sx, _) = sobel(p.data(), 8, 6);
        assert_eq!(sx[2 * 8 + 3], 1020.0);
        assert_eq!(sx[2 * 8 + 4], 1020.0);
        let g = gradient_encoding(&p);
        assert_eq!(g.get(3, 2), 255.0);
        assert_eq!(g.get(4, 2), 255.0);
        assert_eq!(g.get(1, 2), 0.0);
    }

    #[test]
    fn ramp_gives_eight() {
        let p = ImagePlane::from_fn(12, 5, |x, _| x as f32 * 1.0 + 10.0);
        let (sx, sy) = sobel(p.data(), 12, 5);
        let g = gradient_encoding(&p);
        for y in 1..4 {
            for x in 1..11 {
                assert_eq!(sx[y * 12 + x], 8.0);
                assert_eq!(sy[y * 12 + x], 0.0);
                assert_eq!(g.get(x, y), 8.0);
            }
        }
    }

    #[test]
    fn gradient_is_translation_equivariant_in_interior() {
        let f = |x: usize, y: usize| ((x * 7 + y * 13) % 29) as f32 * 5.0;
        let base = gradient_encoding(&ImagePlane::from_fn(20, 20, f));
        let (dx, dy) = (3, 2);
        let shifted =
            gradient_encoding(&ImagePlane::from_fn(20, 20, |x, y| f(x + 29 - dx, y + 29 - dy)));
        // Away from borders (and the wrap seam of the shifted copy).
        for y in dy + 2..18 {
            for x in dx + 2..18 {
                assert_eq!(shifted.get(x, y), base.get(x - dx, y - dy));
            }
        }
    }
}
