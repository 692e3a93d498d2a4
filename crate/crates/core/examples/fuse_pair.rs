//! Fuse one infrared/visible pair with a table.
//!
//! ```text
//! cargo run --release --example fuse_pair -- [IR VIS MODEL.mmlut] OUT.png
//! ```
//!
//! With only `OUT.png`, a synthetic pair is fused by a table quantized from a
//! handful of synthetic images with the Laplacian-pyramid teacher.

use std::path::PathBuf;
use std::time::Instant;

use mmlut::imgio::{load_image_pair, save_png_rgb};
use mmlut::lut::{load_model, DEFAULT_BIN_SCALE, DEFAULT_GRID_POINTS};
use mmlut::quant::{build_quantized_model, QuantSceneFeature, DEFAULT_BOX_WINDOW};
use mmlut::synth::{synthetic_dataset, synthetic_pair};
use mmlut::teacher::TeacherKind;

fn main() -> mmlut::Result<()> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let (pair, model, out) = match args.as_slice() {
        [ir, vis, lut, out] => (load_image_pair(ir, vis)?, load_model(lut)?, out.clone()),
        [out] => {
            let train = synthetic_dataset(8, 160, 160, 3);
            let scene = QuantSceneFeature::BoxMean { window: DEFAULT_BOX_WINDOW };
            let teacher = TeacherKind::LaplacianPyramid { levels: 4 };
            let (model, q) = build_quantized_model(&train, teacher, &scene, DEFAULT_GRID_POINTS, DEFAULT_BIN_SCALE)?;
            println!("quantized table covers {:.1}% of cells", q.coverage * 100.0);
            (synthetic_pair(320, 240, 99), model, out.clone())
        }
        _ => {
            eprintln!("usage: fuse_pair [IR VIS MODEL] OUT.png");
            std::process::exit(2);
        }
    };

    let t = Instant::now();
    let fused = model.fuse_image(&pair)?;
    println!("{}x{} fused in {:.2} ms", pair.width(), pair.height(), t.elapsed().as_secs_f64() * 1e3);
    save_png_rgb(&out, &fused)?;
    println!("wrote {}", out.display());
    Ok(())
}
