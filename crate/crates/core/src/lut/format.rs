//! `.mmlut` container.
//!
//! Little-endian layout:
//!
//! ```text
//! "MMLT" | version u32 | G u32 | T f32 | axis tag [u8; 4]
//! G^4 × f32 entries (v, i, g, s order; s fastest)
//! block count u32 | per block: out u32, in u32, kh u32, kw u32, weights f32…, bias f32…
//! downsample u8
//! metadata length u32 | metadata JSON (UTF-8)
//! CRC32 of all preceding bytes, u32
//! ```

use std::path::Path;

use super::grid::{LutGrid4D, AXIS_ORDER};
use super::model::{MmLutModel, ModelMetadata, FORMAT_VERSION};
use crate::encode::{ConvBlock, SceneEncoderParams};
use crate::error::{Error, Result};
use crate::io_util::{read_file, write_atomic, ByteReader, ByteWriter};

pub const MODEL_MAGIC: [u8; 4] = *b"MMLT";

const MAX_GRID_POINTS: u32 = 64;
const MAX_BLOCKS: u32 = 64;
const MAX_CHANNELS: u32 = 4096;

pub fn encode_model(model: &MmLutModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(model.grid.points() as u32);
    w.f32(model.grid.bin_scale());
    w.bytes(&AXIS_ORDER);
    w.f32s(model.grid.entries());
    w.u32(model.encoder.blocks.len() as u32);
    for b in &model.encoder.blocks {
        w.u32(b.out_channels as u32);
        w.u32(b.in_channels as u32);
        w.u32(3);
        w.u32(3);
        w.f32s(&b.weights);
        w.f32s(&b.bias);
    }
    w.u8(model.downsample as u8);
    let meta = serde_json::to_vec(&model.metadata).expect("metadata serializes");
    w.u32(meta.len() as u32);
    w.bytes(&meta);
    w.finish()
}

/// Reads the magic and version, shared with the optimizer sidecar.
pub(crate) fn read_header(r: &mut ByteReader<'_>, magic: [u8; 4]) -> Result<()> {
    let found = r.array::<4>("magic")?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(())
}

pub fn decode_model(bytes: &[u8]) -> Result<MmLutModel> {
    let mut r = ByteReader::new(bytes);
    read_header(&mut r, MODEL_MAGIC)?;
    let points = r.u32("grid size")?;
    if !(2..=MAX_GRID_POINTS).contains(&points) {
        return Err(Error::Malformed(format!("grid size {points} out of range")));
    }
    let bin_scale = r.f32("bin scale")?;
    let axes = r.array::<4>("axis tag")?;
    if axes != AXIS_ORDER {
        return Err(Error::Malformed(format!("unknown axis order {:?}", String::from_utf8_lossy(&axes))));
    }
    let entries = r.f32s((points as usize).pow(4), "grid entries")?;
    let block_count = r.u32("block count")?;
    if block_count > MAX_BLOCKS {
        return Err(Error::Malformed(format!("{block_count} encoder blocks")));
    }
    let mut blocks = Vec::with_capacity(block_count as usize);
    for i in 0..block_count {
        let out_channels = r.u32("block shape")?;
        let in_channels = r.u32("block shape")?;
        let kh = r.u32("block shape")?;
        let kw = r.u32("block shape")?;
        if kh != 3 || kw != 3 || out_channels > MAX_CHANNELS || in_channels > MAX_CHANNELS {
            return Err(Error::Malformed(format!(
                "encoder block {i} shape {out_channels}x{in_channels}x{kh}x{kw} unsupported"
            )));
        }
        let weights = r.f32s((out_channels * in_channels * 9) as usize, "encoder weights")?;
        let bias = r.f32s(out_channels as usize, "encoder bias")?;
        blocks.push(ConvBlock {
            in_channels: in_channels as usize,
            out_channels: out_channels as usize,
            weights,
            bias,
        });
    }
    let downsample = r.u8("downsample")? as usize;
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.take(meta_len, "metadata")?;
    r.verify_crc()?;

    let metadata: ModelMetadata =
        serde_json::from_slice(meta).map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
    let grid = LutGrid4D::new(points as usize, bin_scale, entries)?;
    MmLutModel::new(grid, SceneEncoderParams { blocks }, downsample, metadata)
}

/// Atomically writes a model file.
pub fn save_model(model: &MmLutModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<MmLutModel> {
    decode_model(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut::SceneFeatureKind;

    fn sample() -> MmLutModel {
        let mut m = MmLutModel::initial(4, SceneFeatureKind::Encoder);
        m.metadata.teacher = Some("maxlum".into());
        m.metadata.lambda_tv = Some(1e-4);
        m
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back, m);
    }

    proptest::proptest! {
        #[test]
        fn metadata_floats_are_exact(coverage in 0.0..1.0f64, lambda in 1e-9..1e3f64) {
            let mut m = sample();
            m.metadata.coverage = Some(coverage);
            m.metadata.lambda_ssim = Some(lambda);
            let back = decode_model(&encode_model(&m)).unwrap();
            proptest::prop_assert_eq!(back.metadata, m.metadata);
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_model(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_model(&sample());
        bytes[4] = 9;
        assert!(matches!(decode_model(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn truncated_mid_grid() {
        let bytes = encode_model(&sample());
        assert!(matches!(decode_model(&bytes[..1000]), Err(Error::Truncated(_))));
        assert!(matches!(decode_model(&bytes[..bytes.len() - 2]), Err(Error::Truncated(_))));
    }

    #[test]
    fn flipped_entry_fails_checksum() {
        let mut bytes = encode_model(&sample());
        bytes[100] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_model(Path::new("/nonexistent/x.mmlut")), Err(Error::FileMissing(_))));
    }
}
