//! The distillation loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, EpochStats, RngState};
use super::loss::{count_violations, total_loss, Gradients, LossBreakdown, LossWeights, Sample};
use super::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::encode::low_order_encodings;
use crate::error::{Error, Result};
use crate::imgio::{check_patch_sources, draw_origin_in, ImagePair, PatchOrigin};
use crate::lut::{MmLutModel, SceneFeatureKind, DEFAULT_DOWNSAMPLE};
use crate::quant::{box_scene_plane, DEFAULT_BOX_WINDOW};
use crate::ssim::SSIM_WINDOW;
use crate::teacher::{teacher_fuse_planes, TeacherKind, DEFAULT_PYRAMID_LEVELS};

/// Scalar type of the forward/backward pass. Parameters are always stored as `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(Error::InvalidArgument(format!("unknown precision {other:?} (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    /// Decoupled decay, applied to encoder parameters only.
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub teacher: TeacherKind,
    pub downsample: usize,
    pub seed: u64,
    /// Use the 11×11 box mean of the intensities as the scene code instead of training the encoder.
    pub frozen_scene_feature: bool,
    /// Run every batch item in sequence.
    pub deterministic: bool,
    /// Checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: u32,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 8,
            patch_size: 96,
            lr: 5e-5,
            weight_decay: 0.0,
            weights: LossWeights::default(),
            teacher: TeacherKind::LaplacianPyramid { levels: DEFAULT_PYRAMID_LEVELS },
            downsample: DEFAULT_DOWNSAMPLE,
            seed: 0,
            frozen_scene_feature: false,
            deterministic: false,
            checkpoint_every: 0,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.patch_size < SSIM_WINDOW {
            return Err(Error::InvalidArgument(format!(
                "patch size must be at least {SSIM_WINDOW} (the SSIM window), got {}",
                self.patch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        crate::encode::scene::validate_factor(self.downsample)?;
        self.weights.validate()
    }

    fn scene_feature(&self) -> SceneFeatureKind {
        if self.frozen_scene_feature {
            SceneFeatureKind::BoxMean { window: DEFAULT_BOX_WINDOW }
        } else {
            SceneFeatureKind::Encoder
        }
    }
}

/// Full-image planes of one training pair; crops are cut from these.
#[derive(Debug, Clone)]
struct PreparedPair {
    width: usize,
    height: usize,
    n_v: Vec<f32>,
    n_i: Vec<f32>,
    g_v: Vec<f32>,
    teacher: Vec<f32>,
    scene: Option<Vec<f32>>,
}

fn crop(data: &[f32], width: usize, o: &PatchOrigin, size: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(size * size);
    for y in o.y..o.y + size {
        out.extend_from_slice(&data[y * width + o.x..y * width + o.x + size]);
    }
    out
}

impl PreparedPair {
    fn new(pair: &ImagePair, config: &TrainConfig) -> Result<Self> {
        let (n_i, n_v, g_v) = low_order_encodings(pair);
        let teacher = teacher_fuse_planes(config.teacher, &n_v, &n_i)?;
        let scene = config
            .frozen_scene_feature
            .then(|| box_scene_plane(&n_v, &n_i, DEFAULT_BOX_WINDOW).into_data());
        Ok(Self {
            width: pair.width(),
            height: pair.height(),
            n_v: n_v.into_data(),
            n_i: n_i.into_data(),
            g_v: g_v.into_data(),
            teacher: teacher.into_data(),
            scene,
        })
    }

    fn sample(&self, o: &PatchOrigin, size: usize) -> Sample {
        let c = |d: &[f32]| crop(d, self.width, o, size);
        Sample {
            width: size,
            height: size,
            n_v: c(&self.n_v),
            n_i: c(&self.n_i),
            g_v: c(&self.g_v),
            teacher: c(&self.teacher),
            scene: self.scene.as_deref().map(c),
        }
    }
}

/// Training state: model, optimizer, sampler and history.
pub struct Trainer {
    config: TrainConfig,
    pairs: Vec<PreparedPair>,
    model: MmLutModel,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    epoch: u32,
    history: Vec<EpochStats>,
    initial_violations: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &[ImagePair]) -> Result<Self> {
        config.validate()?;
        let mut model = MmLutModel::initial(config.seed, config.scene_feature());
        model.downsample = config.downsample;
        let meta = &mut model.metadata;
        meta.method = "distilled".into();
        meta.teacher = Some(config.teacher.to_string());
        meta.lambda_ssim = Some(config.weights.lambda_ssim);
        meta.lambda_tv = Some(config.weights.lambda_tv);
        meta.lambda_m = Some(config.weights.lambda_m);
        meta.epochs = Some(0);
        let optimizer = AdamW::new(AdamWConfig { lr: config.lr, ..Default::default() }, param_groups(&model, &config))?;
        let initial_violations = count_violations(&model.grid) as u64;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(config, dataset, model, optimizer, rng, 0, Vec::new(), initial_violations)
    }

    /// Continues from a checkpoint; with the same config and dataset the continuation is
    /// identical to an uninterrupted run.
    pub fn resume(config: TrainConfig, dataset: &[ImagePair], ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        let expected = param_groups(&ckpt.model, &config);
        let shapes_match = expected.len() == ckpt.optimizer.groups.len()
            && expected.iter().zip(&ckpt.optimizer.groups).all(|(a, b)| a.m.len() == b.m.len());
        if !shapes_match {
            return Err(Error::ShapeMismatch("checkpoint optimizer state does not match its model".into()));
        }
        if ckpt.model.scene_feature() != config.scene_feature() || ckpt.model.downsample != config.downsample {
            return Err(Error::InvalidArgument(
                "checkpoint was trained with a different scene feature or downsample factor".into(),
            ));
        }
        let mut optimizer = ckpt.optimizer;
        optimizer.config.lr = config.lr;
        Self::assemble(
            config,
            dataset,
            ckpt.model,
            optimizer,
            ckpt.rng.restore(),
            ckpt.epoch,
            ckpt.history,
            ckpt.initial_violations,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        dataset: &[ImagePair],
        model: MmLutModel,
        optimizer: AdamW,
        rng: ChaCha8Rng,
        epoch: u32,
        history: Vec<EpochStats>,
        initial_violations: u64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("training needs at least one image pair".into()));
        }
        check_patch_sources(dataset.iter().map(|p| (p.width(), p.height())), config.patch_size)?;
        let pairs = if config.deterministic {
            dataset.iter().map(|p| PreparedPair::new(p, &config)).collect::<Result<Vec<_>>>()?
        } else {
            dataset.par_iter().map(|p| PreparedPair::new(p, &config)).collect::<Result<Vec<_>>>()?
        };
        Ok(Self { config, pairs, model, optimizer, rng, epoch, history, initial_violations })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &MmLutModel {
        &self.model
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn initial_violations(&self) -> u64 {
        self.initial_violations
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Crops per pair in one epoch: enough to cover its area once on average.
    fn crops_per_pair(&self, pair: &PreparedPair) -> usize {
        let p = self.config.patch_size;
        (pair.width * pair.height).div_ceil(p * p)
    }

    /// Draws one epoch's crops and shuffles them.
    fn epoch_origins(&mut self) -> Vec<PatchOrigin> {
        let size = self.config.patch_size;
        let mut origins = Vec::new();
        for j in 0..self.pairs.len() {
            let dims = (self.pairs[j].width, self.pairs[j].height);
            for _ in 0..self.crops_per_pair(&self.pairs[j]) {
                origins.push(draw_origin_in(&mut self.rng, j, dims, size));
            }
        }
        origins.shuffle(&mut self.rng);
        origins
    }

    /// One optimizer step on a batch.
    pub fn step(&mut self, samples: &[Sample]) -> Result<LossBreakdown> {
        let parallel = !self.config.deterministic;
        let ds = self.model.downsample;
        let w = &self.config.weights;
        let (loss, grads) = match self.config.precision {
            Precision::Single => total_loss(&self.model.grid, &self.model.encoder, ds, w, samples, parallel)?,
            Precision::Double => total_loss(
                &self.model.grid.cast::<f64>(),
                &self.model.encoder.cast::<f64>(),
                ds,
                w,
                samples,
                parallel,
            )?,
        };
        if !loss.l_all.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {} is {}", self.epoch + 1, loss.l_all)));
        }
        self.apply(&grads)?;
        Ok(loss)
    }

    fn apply(&mut self, grads: &Gradients) -> Result<()> {
        let MmLutModel { grid, encoder, .. } = &mut self.model;
        let sizes: Vec<usize> = encoder.tensors().map(|t| t.len()).collect();
        let mut enc_grads: Vec<Option<&[f64]>> = vec![None; sizes.len()];
        if let Some(flat) = &grads.encoder {
            let mut rest = flat.as_slice();
            for (slot, &n) in enc_grads.iter_mut().zip(&sizes) {
                let (head, tail) = rest.split_at(n);
                *slot = Some(head);
                rest = tail;
            }
        }
        let mut params: Vec<&mut [f32]> = vec![grid.entries_mut()];
        params.extend(encoder.tensors_mut().map(|t| t.as_mut_slice()));
        let mut all: Vec<Option<&[f64]>> = vec![Some(&grads.grid)];
        all.extend(enc_grads);
        self.optimizer.step(&mut params, &all)
    }

    /// Runs one epoch and returns its mean losses.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let origins = self.epoch_origins();
        let size = self.config.patch_size;
        let mut sums = LossBreakdown::default();
        let mut steps = 0usize;
        for chunk in origins.chunks(self.config.batch_size) {
            let samples: Vec<Sample> = chunk.iter().map(|o| self.pairs[o.source].sample(o, size)).collect();
            let l = self.step(&samples)?;
            sums.l_int += l.l_int;
            sums.l_ssim += l.l_ssim;
            sums.r_tv += l.r_tv;
            sums.r_m += l.r_m;
            sums.l_all += l.l_all;
            steps += 1;
        }
        self.epoch += 1;
        self.model.metadata.epochs = Some(self.epoch);
        let n = steps as f64;
        let stats = EpochStats {
            epoch: self.epoch,
            l_int: sums.l_int / n,
            l_ssim: sums.l_ssim / n,
            r_tv: sums.r_tv / n,
            r_m: sums.r_m / n,
            l_all: sums.l_all / n,
            violations: count_violations(&self.model.grid) as u64,
        };
        self.history.push(stats);
        Ok(stats)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let stats = self.run_epoch()?;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
            initial_violations: self.initial_violations,
        }
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            rng: RngState::capture(&self.rng),
            model: self.model,
            optimizer: self.optimizer,
            epoch: self.epoch,
            history: self.history,
            initial_violations: self.initial_violations,
        }
    }
}

/// Grid entries (optimized as normalized intensities), then one group per encoder tensor.
fn param_groups(model: &MmLutModel, config: &TrainConfig) -> Vec<ParamGroup> {
    let mut groups = vec![ParamGroup::new(model.grid.entries().len(), super::loss::INTENSITY_UNIT, 0.0)];
    groups.extend(model.encoder.tensors().map(|t| ParamGroup::new(t.len(), 1.0, config.weight_decay)));
    groups
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train_loop(
    config: TrainConfig,
    dataset: &[ImagePair],
    on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>,
) -> Result<Checkpoint> {
    let mut t = Trainer::new(config, dataset)?;
    t.run(on_epoch)?;
    Ok(t.into_checkpoint())
}

/// Mean absolute difference between the model's fused luminance and the teacher's, in levels.
pub fn teacher_l1(model: &MmLutModel, dataset: &[ImagePair], teacher: TeacherKind) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no pairs to evaluate".into()));
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for pair in dataset {
        let (n_i, n_v, _) = low_order_encodings(pair);
        let t = teacher_fuse_planes(teacher, &n_v, &n_i)?;
        let y = model.fuse_luminance(pair);
        sum += t.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
        count += t.data().len();
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{ColorImage, ImagePlane};

    fn tiny_dataset() -> Vec<ImagePair> {
        (0..3)
            .map(|k| {
                let ir = ImagePlane::from_fn(40, 36, |x, y| ((x * 5 + y * 3 + k * 40) % 256) as f32);
                let vis = ColorImage::from_fn(40, 36, |x, y| {
                    let v = ((x * 2 + y * 6 + k * 17) % 256) as f32;
                    [v, v, v]
                });
                ImagePair::new(ir, vis).unwrap()
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            patch_size: 24,
            teacher: TeacherKind::MaxLuminance,
            seed: 9,
            deterministic: true,
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.patch_size, c.lr), (500, 8, 96, 5e-5));
        assert_eq!(c.weights, LossWeights { lambda_ssim: 0.1, lambda_tv: 1e-4, lambda_m: 10.0 });
        assert_eq!(c.weight_decay, 0.0);
    }

    #[test]
    fn invalid_configs() {
        let d = tiny_dataset();
        for c in [
            TrainConfig { epochs: 0, ..tiny_config() },
            TrainConfig { batch_size: 0, ..tiny_config() },
            TrainConfig { patch_size: 10, ..tiny_config() },
            TrainConfig { downsample: 3, ..tiny_config() },
            TrainConfig { lr: -1.0, ..tiny_config() },
        ] {
            assert!(matches!(Trainer::new(c, &d), Err(Error::InvalidArgument(_))));
        }
        assert!(matches!(Trainer::new(tiny_config(), &[]), Err(Error::EmptyDataset(_))));
        let big = TrainConfig { patch_size: 64, ..tiny_config() };
        assert!(matches!(Trainer::new(big, &d), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn same_seed_same_model() {
        let d = tiny_dataset();
        let a = train_loop(tiny_config(), &d, |_, _| Ok(())).unwrap();
        let b = train_loop(tiny_config(), &d, |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.model.metadata.epochs, Some(3));
        let c = train_loop(TrainConfig { seed: 10, ..tiny_config() }, &d, |_, _| Ok(())).unwrap();
        assert_ne!(a.model.grid, c.model.grid);
    }

    #[test]
    fn parallel_equals_deterministic() {
        let d = tiny_dataset();
        let a = train_loop(tiny_config(), &d, |_, _| Ok(())).unwrap();
        let b = train_loop(TrainConfig { deterministic: false, ..tiny_config() }, &d, |_, _| Ok(())).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let d = tiny_dataset();
        let full = train_loop(tiny_config(), &d, |_, _| Ok(())).unwrap();
        let partial = train_loop(TrainConfig { epochs: 1, ..tiny_config() }, &d, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.mmlut");
        super::super::checkpoint::save_checkpoint(&partial, &path).unwrap();
        let loaded = super::super::checkpoint::load_checkpoint(&path).unwrap();
        let mut t = Trainer::resume(tiny_config(), &d, loaded).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        assert_eq!(t.into_checkpoint(), full);
    }

    #[test]
    fn frozen_feature_leaves_encoder_untouched() {
        let d = tiny_dataset();
        let c = TrainConfig { frozen_scene_feature: true, ..tiny_config() };
        let ck = train_loop(c, &d, |_, _| Ok(())).unwrap();
        let init = MmLutModel::initial(9, SceneFeatureKind::Encoder);
        assert_eq!(ck.model.encoder, init.encoder);
        assert_ne!(ck.model.grid, init.grid);
        assert_eq!(ck.model.scene_feature(), SceneFeatureKind::BoxMean { window: 11 });
    }

    #[test]
    fn loss_decreases_on_max_teacher() {
        let d = tiny_dataset();
        let c = TrainConfig { epochs: 30, lr: 2e-3, ..tiny_config() };
        let before = teacher_l1(&MmLutModel::initial(9, SceneFeatureKind::Encoder), &d, TeacherKind::MaxLuminance)
            .unwrap();
        let ck = train_loop(c, &d, |_, _| Ok(())).unwrap();
        let after = teacher_l1(&ck.model, &d, TeacherKind::MaxLuminance).unwrap();
        assert!(after < before * 0.8, "before {before}, after {after}");
    }
}
