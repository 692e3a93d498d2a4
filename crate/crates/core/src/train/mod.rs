//! Distilling a teacher fusion algorithm into the lookup table and scene encoder.

mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{
    decode_state, encode_state, load_checkpoint, loss_csv, save_checkpoint, state_path, write_loss_csv, Checkpoint,
    EpochStats, RngState, LOSS_CSV_HEADER, STATE_MAGIC,
};
pub use loss::{
    count_violations, intensity_loss, monotonicity_regularizer, ssim_loss, total_loss, tv_regularizer, Gradients,
    LossBreakdown, LossWeights, RegularizerTerm, Sample, INTENSITY_UNIT,
};
pub use optim::{AdamW, AdamWConfig, ParamGroup};
pub use trainer::{teacher_l1, train_loop, Precision, TrainConfig, Trainer};
