//! Multi-modal fusion lookup tables.

pub mod cli;
pub mod encode;
pub mod error;
pub(crate) mod filters;
pub mod imgio;
pub(crate) mod io_util;
pub mod lut;
pub mod metrics;
pub mod quant;
pub mod real;
pub mod ssim;
pub mod synth;
pub mod teacher;
pub mod train;

pub use error::{Error, Result};
