//! Save a model, read it back, and show that damage is caught.
//!
//! ```text
//! cargo run --example model_roundtrip
//! ```

use mmlut::lut::{decode_model, encode_model, MmLutModel, SceneFeatureKind};

fn main() {
    let model = MmLutModel::initial(42, SceneFeatureKind::Encoder);
    let bytes = encode_model(&model);
    println!("{} bytes, magic {:?}", bytes.len(), std::str::from_utf8(&bytes[..4]).unwrap());
    let back = decode_model(&bytes).expect("fresh encoding decodes");
    println!("round trip identical: {}", back == model);
    println!("metadata: {}", serde_json::to_string(&back.metadata).unwrap());

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    println!("one flipped bit: {}", decode_model(&flipped).unwrap_err());
    println!("truncated: {}", decode_model(&bytes[..bytes.len() - 9]).unwrap_err());
    let mut magic = bytes;
    magic[0] = b'X';
    println!("wrong magic: {}", decode_model(&magic).unwrap_err());
}
