//! The non-learned baseline: average teacher outputs per grid cell.
//!
//! ```text
//! cargo run --release --example quantize_baseline
//! ```

use mmlut::lut::{DEFAULT_BIN_SCALE, DEFAULT_GRID_POINTS};
use mmlut::quant::{build_quantized_model, QuantSceneFeature, DEFAULT_BOX_WINDOW};
use mmlut::synth::synthetic_dataset;
use mmlut::teacher::TeacherKind;
use mmlut::train::teacher_l1;

fn main() -> mmlut::Result<()> {
    let train = synthetic_dataset(20, 128, 128, 1);
    let held_out = synthetic_dataset(5, 128, 128, 2);
    let scene = QuantSceneFeature::BoxMean { window: DEFAULT_BOX_WINDOW };

    println!("{:<8} {:>9} {:>11} {:>12}", "teacher", "coverage", "train L1", "held-out L1");
    for teacher in [TeacherKind::Average, TeacherKind::MaxLuminance, TeacherKind::LaplacianPyramid { levels: 4 }] {
        let (model, q) = build_quantized_model(&train, teacher, &scene, DEFAULT_GRID_POINTS, DEFAULT_BIN_SCALE)?;
        println!(
            "{:<8} {:>8.2}% {:>11.3} {:>12.3}",
            teacher.name(),
            q.coverage * 100.0,
            teacher_l1(&model, &train, teacher)?,
            teacher_l1(&model, &held_out, teacher)?
        );
    }
    Ok(())
}
