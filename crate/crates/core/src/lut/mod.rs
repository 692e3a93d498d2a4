//! The 4D multi-modal lookup table: coordinates, quadrilinear interpolation,
//! its gradients, the fusion model and its on-disk container.

mod format;
mod grid;
mod model;

pub use format::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub(crate) use format::read_header;
pub use grid::{
    corner_weights, lookup, lookup_backward, to_coords, LookupCoord, LookupGrad, LutGrid4D, AXIS_ORDER,
    DEFAULT_BIN_SCALE, DEFAULT_GRID_POINTS,
};
pub(crate) use grid::{lookup_backward_with_offsets, lookup_with_offsets};
pub use model::{MmLutModel, ModelMetadata, SceneFeatureKind, DEFAULT_DOWNSAMPLE, FORMAT_VERSION};
