//! Command-line front end: `fuse`, `train`, `quantize`, `eval`, `bench`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::encode::{low_order_encodings, Encodings};
use crate::error::{Error, Result, EXIT_CODES};
use crate::imgio::{list_images, load_image_pair, load_plane, save_png_rgb};
use crate::lut::{load_model, save_model, MmLutModel, SceneFeatureKind};
use crate::metrics::{evaluate, AggregateReport, MetricsReport, Summary};
use crate::quant::{build_quantized_model, QuantSceneFeature, DEFAULT_BOX_WINDOW};
use crate::synth::noise_pair;
use crate::teacher::TeacherKind;
use crate::train::{load_checkpoint, save_checkpoint, write_loss_csv, Checkpoint, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "mmlut", version, about = "Infrared/visible image fusion with a learned 4D lookup table", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse one registered infrared/visible pair with a trained table.
    #[command(after_help = EXIT_CODES)]
    Fuse(FuseArgs),
    /// Distill a teacher fusion algorithm into a table and scene encoder.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Build the non-learned baseline table by binning teacher outputs.
    #[command(after_help = EXIT_CODES)]
    Quantize(QuantizeArgs),
    /// Compute MI, EN, CC, SSIM and Qabf for a directory of fused images.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Time the fusion stages on a random pair.
    #[command(after_help = EXIT_CODES)]
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// Model file (.mmlut).
    #[arg(long)]
    pub lut: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// key=value file; command-line flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with `ir/` and `vis/` subdirectories of matching file names.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// avg, maxlum, lappyr or lappyr:<levels>.
    #[arg(long)]
    pub teacher: Option<String>,
    /// Final model path; the checkpoint and loss CSV are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_ssim: Option<f64>,
    #[arg(long)]
    pub lambda_tv: Option<f64>,
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// Scene encoder input downsampling: 1, 2 or 4.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Encoder-only decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Run batch items in sequence.
    #[arg(long)]
    pub deterministic: bool,
    /// Use the box-mean scene feature instead of training the encoder.
    #[arg(long)]
    pub frozen_scene_feature: bool,
    /// Save a checkpoint every N epochs (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<u32>,
    /// f32 or f64 forward/backward arithmetic.
    #[arg(long)]
    pub precision: Option<String>,
    /// Continue from a checkpoint model (its `.mmos` sidecar must sit next to it).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "lappyr")]
    pub teacher: String,
    /// `box` (11×11 box mean) or `encoder` (frozen encoder taken from --encoder-from).
    #[arg(long, default_value = "box")]
    pub scene_feature: String,
    /// Model whose encoder supplies the scene code when --scene-feature encoder.
    #[arg(long)]
    pub encoder_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 17)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 17.0)]
    pub bin_scale: f32,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fused_dir: PathBuf,
    #[arg(long)]
    pub ir_dir: PathBuf,
    #[arg(long)]
    pub vis_dir: PathBuf,
    /// Report path; `<report>.csv` (per image) and `<report>.json` (aggregate) are written.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Resolution, e.g. 640x480.
    #[arg(long, default_value = "640x480")]
    pub size: String,
    /// Timed iterations (at least 10).
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Untimed warm-up iterations (at least 3).
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Model to time; an untrained model is used when omitted.
    #[arg(long)]
    pub lut: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fuse(a) => with_threads(a.threads, || cmd_fuse(&a)),
        Command::Train(a) => {
            let cfg = RunConfig::from_args(&a)?;
            with_threads(cfg.threads, || cmd_train(&cfg)).map(|_| ())
        }
        Command::Quantize(a) => cmd_quantize(&a).map(|c| println!("coverage {c:.6}")),
        Command::Eval(a) => with_threads(a.threads, || cmd_eval(&a)).map(|agg| {
            println!("{}", serde_json::to_string_pretty(&agg).expect("report serializes"));
        }),
        Command::Bench(a) => cmd_bench(&a).map(|r| println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"))),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} threads: {e}")))?
            .install(f),
    }
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let model = load_model(&a.lut)?;
    let pair = load_image_pair(&a.ir, &a.vis)?;
    let fused = model.fuse_image(&pair)?;
    save_png_rgb(&a.out, &fused)
}

/// Merged training configuration: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), data_dir: None, out: None, resume: None, threads: None }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key = value", n + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Applies one setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data-dir" => self.data_dir = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "resume" => self.resume = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(parse_value(key, value)?),
            "teacher" => t.teacher = value.parse()?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "lr" => t.lr = parse_value(key, value)?,
            "batch" => t.batch_size = parse_value(key, value)?,
            "patch" => t.patch_size = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "lambda-ssim" => t.weights.lambda_ssim = parse_value(key, value)?,
            "lambda-tv" => t.weights.lambda_tv = parse_value(key, value)?,
            "lambda-m" => t.weights.lambda_m = parse_value(key, value)?,
            "downsample" => t.downsample = parse_value(key, value)?,
            "weight-decay" => t.weight_decay = parse_value(key, value)?,
            "deterministic" => t.deterministic = parse_bool(key, value)?,
            "frozen-scene-feature" => t.frozen_scene_feature = parse_bool(key, value)?,
            "checkpoint-every" => t.checkpoint_every = parse_value(key, value)?,
            "precision" => t.precision = value.parse()?,
            other => return Err(Error::InvalidArgument(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_args(a: &TrainArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &a.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_config_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        let mut flags: Vec<(&str, String)> = Vec::new();
        let mut flag = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                flags.push((k, v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        flag("data-dir", path(&a.data_dir));
        flag("out", path(&a.out));
        flag("resume", path(&a.resume));
        flag("teacher", a.teacher.clone());
        flag("epochs", a.epochs.map(|v| v.to_string()));
        flag("lr", a.lr.map(|v| v.to_string()));
        flag("batch", a.batch.map(|v| v.to_string()));
        flag("patch", a.patch.map(|v| v.to_string()));
        flag("seed", a.seed.map(|v| v.to_string()));
        flag("lambda-ssim", a.lambda_ssim.map(|v| v.to_string()));
        flag("lambda-tv", a.lambda_tv.map(|v| v.to_string()));
        flag("lambda-m", a.lambda_m.map(|v| v.to_string()));
        flag("downsample", a.downsample.map(|v| v.to_string()));
        flag("weight-decay", a.weight_decay.map(|v| v.to_string()));
        flag("checkpoint-every", a.checkpoint_every.map(|v| v.to_string()));
        flag("precision", a.precision.clone());
        flag("threads", a.threads.map(|v| v.to_string()));
        flag("deterministic", a.deterministic.then(|| "true".into()));
        flag("frozen-scene-feature", a.frozen_scene_feature.then(|| "true".into()));
        for (k, v) in flags {
            cfg.set(k, &v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Checkpoint path for a final model path: `model.mmlut` → `model.ckpt.mmlut`.
pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.with_extension("ckpt.mmlut")
}

pub fn loss_csv_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Checkpoint> {
    let data_dir = cfg.data_dir.as_ref().ok_or_else(|| Error::InvalidArgument("--data-dir is required".into()))?;
    let out = cfg.out.as_ref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    let dataset = crate::imgio::load_dataset(data_dir)?;
    log::info!("training on {} pairs from {}", dataset.len(), data_dir.display());
    let mut trainer = match &cfg.resume {
        Some(path) => Trainer::resume(cfg.train.clone(), &dataset, load_checkpoint(path)?)?,
        None => Trainer::new(cfg.train.clone(), &dataset)?,
    };
    let ckpt_path = checkpoint_path(out);
    let csv_path = loss_csv_path(out);
    let every = cfg.train.checkpoint_every;
    trainer.run(|t, s| {
        log::info!(
            "epoch {} L_all {:.6} L_int {:.6} L_ssim {:.6} violations {}",
            s.epoch,
            s.l_all,
            s.l_int,
            s.l_ssim,
            s.violations
        );
        if every > 0 && s.epoch % every == 0 && !t.is_done() {
            save_checkpoint(&t.checkpoint(), &ckpt_path)?;
            write_loss_csv(&csv_path, t.history())?;
        }
        Ok(())
    })?;
    let ckpt = trainer.into_checkpoint();
    save_checkpoint(&ckpt, &ckpt_path)?;
    write_loss_csv(&csv_path, &ckpt.history)?;
    save_model(&ckpt.model, out)?;
    Ok(ckpt)
}

/// Returns the coverage fraction of the built table.
pub fn cmd_quantize(a: &QuantizeArgs) -> Result<f64> {
    let teacher: TeacherKind = a.teacher.parse()?;
    let scene = match a.scene_feature.as_str() {
        "box" => QuantSceneFeature::BoxMean { window: DEFAULT_BOX_WINDOW },
        "encoder" => {
            let path = a
                .encoder_from
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--scene-feature encoder needs --encoder-from <model>".into()))?;
            let m = load_model(path)?;
            QuantSceneFeature::FrozenEncoder { params: m.encoder, downsample: m.downsample }
        }
        other => return Err(Error::InvalidArgument(format!("unknown scene feature {other:?} (expected box or encoder)"))),
    };
    let dataset = crate::imgio::load_dataset(&a.data_dir)?;
    let (model, q) = build_quantized_model(&dataset, teacher, &scene, a.grid_points, a.bin_scale)?;
    save_model(&model, &a.out)?;
    Ok(q.coverage)
}

/// Per-image row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("name,");
    s.push_str(&MetricsReport::NAMES.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.name);
        for v in r.metrics.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_eval(a: &EvalArgs) -> Result<AggregateReport> {
    use rayon::prelude::*;
    let fused = list_images(&a.fused_dir)?;
    let ir = list_images(&a.ir_dir)?;
    let vis = list_images(&a.vis_dir)?;
    let mut names = Vec::new();
    for name in &fused {
        if ir.binary_search(name).is_ok() && vis.binary_search(name).is_ok() {
            names.push(name.clone());
        } else {
            log::warn!("skipping {name}: missing infrared or visible source");
        }
    }
    for name in ir.iter().chain(&vis) {
        if fused.binary_search(name).is_err() {
            log::warn!("skipping {name}: no fused image");
        }
    }
    if names.is_empty() {
        return Err(Error::EmptyDataset("no file name is present in all three directories".into()));
    }
    let rows: Vec<EvalRow> = names
        .par_iter()
        .map(|name| {
            let f = load_plane(&a.fused_dir.join(name))?;
            let i = load_plane(&a.ir_dir.join(name))?;
            let v = load_plane(&a.vis_dir.join(name))?;
            Ok(EvalRow { name: name.clone(), metrics: evaluate(&f, &i, &v)? })
        })
        .collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.metrics).collect();
    let agg = AggregateReport::from_reports(&reports);
    crate::io_util::write_atomic(&a.report.with_extension("csv"), eval_csv(&rows).as_bytes())?;
    let json = serde_json::to_vec_pretty(&agg).expect("report serializes");
    crate::io_util::write_atomic(&a.report.with_extension("json"), &json)?;
    Ok(agg)
}

/// Parses `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("invalid size {s:?}, expected WIDTHxHEIGHT such as 640x480"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 || w > 1 << 15 || h > 1 << 15 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub megapixels_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub stages: Vec<StageTiming>,
    /// Wall time of all timed iterations, all stages included.
    pub measured_seconds: f64,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

pub const BENCH_STAGES: [&str; 4] = ["encode-LAE", "scene-encode", "lookup", "total"];

/// Times the fusion stages of `model` on a `width`×`height` pair.
pub fn bench_model(model: &MmLutModel, width: usize, height: usize, warmup: usize, iters: usize, threads: usize) -> Result<BenchReport> {
    if iters < 10 {
        return Err(Error::InvalidArgument(format!("--iters must be at least 10, got {iters}")));
    }
    if warmup < 3 {
        return Err(Error::InvalidArgument(format!("--warmup must be at least 3, got {warmup}")));
    }
    let pair = noise_pair(width, height, 0x5eed);
    with_threads(Some(threads), || {
        let mut samples = vec![Vec::with_capacity(iters); 4];
        for it in 0..warmup + iters {
            let t0 = Instant::now();
            let (n_i, n_v, g_v) = low_order_encodings(&pair);
            let t1 = Instant::now();
            let s_j = model.scene_plane(&n_v, &n_i);
            let t2 = Instant::now();
            let y = model.lookup_plane(&Encodings { n_i, n_v, g_v, s_j });
            let t3 = Instant::now();
            std::hint::black_box(&y);
            if it == warmup - 1 {
                for s in &mut samples {
                    s.clear();
                }
            }
            if it >= warmup {
                samples[0].push((t1 - t0).as_secs_f64());
                samples[1].push((t2 - t1).as_secs_f64());
                samples[2].push((t3 - t2).as_secs_f64());
                samples[3].push((t3 - t0).as_secs_f64());
            }
        }
        let measured = samples[3].iter().sum::<f64>();
        let mp = (width * height) as f64 / 1e6;
        let stages = BENCH_STAGES
            .iter()
            .zip(&samples)
            .map(|(name, s)| {
                let sum = Summary::of(s);
                StageTiming {
                    stage: name.to_string(),
                    mean_ms: sum.mean * 1e3,
                    std_ms: sum.std * 1e3,
                    megapixels_per_second: mp / sum.mean,
                }
            })
            .collect();
        Ok(BenchReport { width, height, threads, warmup, iterations: iters, stages, measured_seconds: measured })
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<BenchReport> {
    let (w, h) = parse_size(&a.size)?;
    let model = match &a.lut {
        Some(p) => load_model(p)?,
        None => MmLutModel::initial(0, SceneFeatureKind::Encoder),
    };
    bench_model(&model, w, h, a.warmup, a.iters, a.threads)
}
