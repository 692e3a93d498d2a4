//! Distill the max-luminance rule into a table and watch the held-out error fall.
//!
//! ```text
//! cargo run --release --example distill -- [EPOCHS] [OUT.mmlut]
//! ```
//!
//! A short run on small images; the step size is raised from the default so a
//! few dozen epochs are enough to see the table move from average to max.

use std::path::PathBuf;

use mmlut::lut::save_model;
use mmlut::synth::synthetic_dataset;
use mmlut::teacher::TeacherKind;
use mmlut::train::{teacher_l1, train_loop, TrainConfig};

fn main() -> mmlut::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: u32 = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(30);
    let out = args.next().map(PathBuf::from);

    let teacher = TeacherKind::MaxLuminance;
    let train = synthetic_dataset(12, 128, 128, 1);
    let held_out = synthetic_dataset(4, 128, 128, 2);
    let config = TrainConfig { epochs, teacher, patch_size: 48, lr: 2e-3, seed: 5, ..TrainConfig::default() };

    let ckpt = train_loop(config, &train, |trainer, stats| {
        if stats.epoch % 5 == 0 || stats.epoch == 1 {
            let l1 = teacher_l1(trainer.model(), &held_out, teacher)?;
            println!(
                "epoch {:3}  L_all {:.5}  L_int {:6.2} levels  violations {:5}  held-out L1 {:6.2}",
                stats.epoch,
                stats.l_all,
                stats.l_int * 255.0,
                stats.violations,
                l1
            );
        }
        Ok(())
    })?;

    if let Some(path) = out {
        save_model(&ckpt.model, &path)?;
        println!("saved {}", path.display());
    }
    Ok(())
}
