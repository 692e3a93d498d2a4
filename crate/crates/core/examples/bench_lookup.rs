//! Time each stage of fusion at a few resolutions.
//!
//! ```text
//! cargo run --release --example bench_lookup -- [THREADS]
//! ```

use mmlut::cli::bench_model;
use mmlut::lut::{MmLutModel, SceneFeatureKind};

fn main() -> mmlut::Result<()> {
    let threads: usize = std::env::args().nth(1).map(|s| s.parse().expect("threads")).unwrap_or(1);
    let model = MmLutModel::initial(0, SceneFeatureKind::Encoder);
    for (w, h) in [(320, 240), (640, 480), (1280, 720)] {
        let r = bench_model(&model, w, h, 3, 10, threads)?;
        print!("{w:>5}x{h:<4}");
        for s in &r.stages {
            print!("  {}: {:7.2} ms ({:6.1} MP/s)", s.stage, s.mean_ms, s.megapixels_per_second);
        }
        println!();
    }
    Ok(())
}
