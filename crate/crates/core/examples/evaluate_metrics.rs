//! Score the reference fusion rules with the five quality metrics.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use mmlut::imgio::luminance;
use mmlut::metrics::{evaluate, AggregateReport, MetricsReport};
use mmlut::synth::synthetic_dataset;
use mmlut::teacher::{teacher_fuse, TeacherKind};

fn main() -> mmlut::Result<()> {
    let pairs = synthetic_dataset(6, 192, 160, 7);
    println!("{:<8} {:>14} {:>14} {:>14} {:>14} {:>14}", "rule", "MI", "EN", "CC", "SSIM", "Qabf");
    for teacher in [TeacherKind::Average, TeacherKind::MaxLuminance, TeacherKind::LaplacianPyramid { levels: 4 }] {
        let reports = pairs
            .iter()
            .map(|p| evaluate(&teacher_fuse(teacher, p)?, &p.ir, &luminance(&p.vis)))
            .collect::<mmlut::Result<Vec<MetricsReport>>>()?;
        let agg = AggregateReport::from_reports(&reports);
        let cells = [agg.mi, agg.en, agg.cc, agg.ssim, agg.qabf].map(|s| format!("{:.3}±{:.3}", s.mean, s.std));
        println!("{:<8} {:>14} {:>14} {:>14} {:>14} {:>14}", teacher.name(), cells[0], cells[1], cells[2], cells[3], cells[4]);
    }
    Ok(())
}
