//! Training checkpoints: a `.mmlut` model plus an optimizer-state sidecar.
//!
//! Sidecar layout (little-endian):
//!
//! ```text
//! "MMOS" | version u32 | epoch u32
//! RNG: seed [u8; 32], stream u64, word position u128 (lo u64, hi u64)
//! AdamW: step u64, lr f64, beta1 f64, beta2 f64, eps f64
//! group count u32 | per group: len u32, scale f64, decay f64, m f64…, v f64…
//! initial violations u64
//! history count u32 | per epoch: epoch u32, L_int, L_ssim, R_TV, R_m, L_all (f64), violations u64
//! CRC32 u32
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::io_util::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::lut::{load_model, read_header, save_model, MmLutModel, FORMAT_VERSION};

pub const STATE_MAGIC: [u8; 4] = *b"MMOS";

const MAX_GROUPS: u32 = 1024;
const MAX_HISTORY: u32 = 10_000_000;

/// Per-epoch means of the loss terms (normalized units) and the violation count after the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: u32,
    pub l_int: f64,
    pub l_ssim: f64,
    pub r_tv: f64,
    pub r_m: f64,
    pub l_all: f64,
    pub violations: u64,
}

/// Exact position of the patch sampler's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MmLutModel,
    pub optimizer: AdamW,
    /// Completed epochs.
    pub epoch: u32,
    pub rng: RngState,
    pub history: Vec<EpochStats>,
    pub initial_violations: u64,
}

/// Sidecar path next to a checkpoint model: `x.mmlut` → `x.mmos`.
pub fn state_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("mmos")
}

pub fn encode_state(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&STATE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(ckpt.epoch);
    w.bytes(&ckpt.rng.seed);
    w.u64(ckpt.rng.stream);
    w.u64(ckpt.rng.word_pos as u64);
    w.u64((ckpt.rng.word_pos >> 64) as u64);
    let o = &ckpt.optimizer;
    w.u64(o.step);
    for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
        w.f64(v);
    }
    w.u32(o.groups.len() as u32);
    for g in &o.groups {
        w.u32(g.m.len() as u32);
        w.f64(g.scale);
        w.f64(g.weight_decay);
        w.f64s(&g.m);
        w.f64s(&g.v);
    }
    w.u64(ckpt.initial_violations);
    w.u32(ckpt.history.len() as u32);
    for h in &ckpt.history {
        w.u32(h.epoch);
        for v in [h.l_int, h.l_ssim, h.r_tv, h.r_m, h.l_all] {
            w.f64(v);
        }
        w.u64(h.violations);
    }
    w.finish()
}

/// Decodes a sidecar and attaches it to `model`.
pub fn decode_state(bytes: &[u8], model: MmLutModel) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    read_header(&mut r, STATE_MAGIC)?;
    let epoch = r.u32("epoch")?;
    let seed = r.array::<32>("rng seed")?;
    let stream = r.u64("rng stream")?;
    let lo = r.u64("rng position")?;
    let hi = r.u64("rng position")?;
    let step = r.u64("optimizer step")?;
    let config = AdamWConfig {
        lr: r.f64("learning rate")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        eps: r.f64("eps")?,
    };
    let group_count = r.u32("group count")?;
    if group_count > MAX_GROUPS {
        return Err(Error::Malformed(format!("{group_count} optimizer groups")));
    }
    let mut groups = Vec::with_capacity(group_count as usize);
    for _ in 0..group_count {
        let len = r.u32("group length")? as usize;
        let scale = r.f64("group scale")?;
        let weight_decay = r.f64("group decay")?;
        let m = r.f64s(len, "first moments")?;
        let v = r.f64s(len, "second moments")?;
        groups.push(ParamGroup { scale, weight_decay, m, v });
    }
    let initial_violations = r.u64("initial violations")?;
    let count = r.u32("history length")?;
    if count > MAX_HISTORY {
        return Err(Error::Malformed(format!("{count} history rows")));
    }
    let mut history = Vec::with_capacity(count as usize);
    for _ in 0..count {
        history.push(EpochStats {
            epoch: r.u32("history")?,
            l_int: r.f64("history")?,
            l_ssim: r.f64("history")?,
            r_tv: r.f64("history")?,
            r_m: r.f64("history")?,
            l_all: r.f64("history")?,
            violations: r.u64("history")?,
        });
    }
    r.verify_crc()?;
    let mut optimizer = AdamW::new(config, groups)?;
    optimizer.step = step;
    Ok(Checkpoint {
        model,
        optimizer,
        epoch,
        rng: RngState { seed, stream, word_pos: (lo as u128) | ((hi as u128) << 64) },
        history,
        initial_violations,
    })
}

/// Writes the model to `model_path` and the optimizer state next to it, both atomically.
pub fn save_checkpoint(ckpt: &Checkpoint, model_path: &Path) -> Result<()> {
    save_model(&ckpt.model, model_path)?;
    write_atomic(&state_path(model_path), &encode_state(ckpt))
}

pub fn load_checkpoint(model_path: &Path) -> Result<Checkpoint> {
    let model = load_model(model_path)?;
    decode_state(&read_file(&state_path(model_path))?, model)
}

pub const LOSS_CSV_HEADER: &str = "epoch,L_int,L_ssim,R_TV,R_m,L_all,violations";

pub fn loss_csv(history: &[EpochStats]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for h in history {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", h.epoch, h.l_int, h.l_ssim, h.r_tv, h.r_m, h.l_all, h.violations);
    }
    s
}

pub fn write_loss_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    write_atomic(path, loss_csv(history).as_bytes())
}
