//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the long training criteria
//! execute once and each criterion prints its own verdict. Failures are
//! reported, not fatal; set `ACCEPTANCE_STRICT=1` to exit non-zero on any
//! failed criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmlut::cli::bench_model;
use mmlut::encode::{EncoderInput, SceneEncoderParams};
use mmlut::imgio::{luminance, ImagePair, ImagePlane};
use mmlut::lut::{
    corner_weights, decode_model, encode_model, lookup, lookup_backward, LookupCoord, LutGrid4D, MmLutModel,
    ModelMetadata, SceneFeatureKind, DEFAULT_BIN_SCALE, DEFAULT_GRID_POINTS,
};
use mmlut::metrics::{correlation_coefficient, entropy, mutual_information, qabf, ssim_metric};
use mmlut::quant::{build_quantized_model, QuantSceneFeature, DEFAULT_BOX_WINDOW};
use mmlut::synth::{noise_pair, synthetic_dataset, write_dataset};
use mmlut::teacher::TeacherKind;
use mmlut::train::{
    count_violations, monotonicity_regularizer, teacher_l1, total_loss, train_loop, tv_regularizer, Checkpoint,
    LossWeights, Sample, TrainConfig,
};

/// Synthetic training set shared by the two distillation criteria.
const TRAIN_PAIRS: usize = 50;
const PAIR_SIZE: usize = 384;
const HELD_OUT_PAIRS: usize = 10;
const EPOCHS: u32 = 200;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

// ---------------------------------------------------------------------------
// 1. interpolation oracle

/// Multi-affine generator: a sum over axis subsets of a coefficient times the
/// product of those coordinates. Quadrilinear interpolation is exact for it.
struct MultiAffine([f64; 16]);

impl MultiAffine {
    fn eval(&self, x: [f64; 4]) -> f64 {
        (0..16usize)
            .map(|subset| {
                let prod: f64 = (0..4).filter(|a| subset >> a & 1 == 1).map(|a| x[a]).product();
                self.0[subset] * prod
            })
            .sum()
    }
}

fn interpolation_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let points = rng.random_range(2..=17usize);
        let bin = rng.random_range(4.0..40.0f32);
        let gen = MultiAffine(std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
        let grid = LutGrid4D::<f64>::from_fn(points, bin, |k, l, m, n| {
            gen.eval([k as f64, l as f64, m as f64, n as f64])
        })
        .unwrap();
        let top = bin as f64 * (points - 1) as f64;
        for _ in 0..1000 {
            let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..=top));
            let got = lookup(&grid, &grid.coord(v[0], v[1], v[2], v[3]));
            let want = gen.eval(v.map(|x| x / bin as f64));
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    let elapsed = secs(t);
    Verdict {
        id: 1,
        name: "interpolation oracle",
        pass: worst <= 1e-9 && elapsed < 10.0,
        detail: format!("max error {worst:.2e} over 10^6 queries (limit 1e-9), {elapsed:.2} s (limit 10 s)"),
    }
}

// ---------------------------------------------------------------------------
// 2. partition of unity

fn partition_of_unity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_sum, mut out_of_range) = (0.0f64, 0usize);
    for _ in 0..100_000 {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-20.0..280.0));
        let c = LookupCoord::new(v, DEFAULT_BIN_SCALE as f64, DEFAULT_GRID_POINTS);
        let w = corner_weights(&c.frac);
        out_of_range += w.iter().filter(|x| !(0.0..=1.0).contains(*x)).count();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    Verdict {
        id: 2,
        name: "partition of unity",
        pass: out_of_range == 0 && worst_sum <= 1e-12,
        detail: format!("10^5 coordinates: {out_of_range} weights outside [0,1], max |sum - 1| = {worst_sum:.2e}"),
    }
}

// ---------------------------------------------------------------------------
// 3. gradient suite

fn random_grid(rng: &mut ChaCha8Rng, points: usize, bin: f32) -> LutGrid4D<f64> {
    LutGrid4D::from_fn(points, bin, |_, _, _, _| rng.random_range(0.0..255.0)).unwrap()
}

/// Largest relative error of lookup gradients (entries and scene coordinate).
fn lookup_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    // the lookup is linear in each entry and, inside a cell, in each coordinate:
    // a unit entry step is exact and keeps rounding far below the tolerance
    let (h_entry, h) = (1.0, 1e-4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut grid = random_grid(rng, 5, 64.0);
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(1.0..255.0));
        let up = rng.random_range(0.5..2.0);
        let c = grid.coord(v[0], v[1], v[2], v[3]);
        let g = lookup_backward(&grid, &c, up);
        let offsets = grid.corner_offsets();
        for k in 0..16 {
            let idx = g.base + offsets[k];
            let orig = grid.entries()[idx];
            grid.entries_mut()[idx] = orig + h_entry;
            let plus = lookup(&grid, &c);
            grid.entries_mut()[idx] = orig - h_entry;
            let minus = lookup(&grid, &c);
            grid.entries_mut()[idx] = orig;
            worst = worst.max(rel_err(g.entries[k], up * (plus - minus) / (2.0 * h_entry), 1e-6));
        }
        // scene coordinate, in units of s / T
        let at = |s: f64| lookup(&grid, &grid.coord(v[0], v[1], v[2], s));
        let fd = up * (at(v[3] + h * 64.0) - at(v[3] - h * 64.0)) / (2.0 * h);
        worst = worst.max(rel_err(g.d_s_coord, fd, 1e-6));
    }
    worst
}

fn random_input(rng: &mut ChaCha8Rng, w: usize, h: usize) -> EncoderInput<f64> {
    let v: Vec<f32> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
    let i: Vec<f32> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
    EncoderInput::from_planes(&v, &i, w, h, 1)
}

/// Encoder weights against a random linear read-out of the scene code.
fn encoder_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-6;
    let mut params = SceneEncoderParams::<f32>::init(rng.random()).cast::<f64>();
    let input = random_input(rng, 10, 9);
    let (out, tape) = params.forward(&input);
    let r: Vec<f64> = out.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = params.backward(tape, &r).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().map(|t| t.to_vec()).collect();
    let objective = |p: &SceneEncoderParams<f64>| -> f64 { p.infer(&input).iter().zip(&r).map(|(a, b)| a * b).sum() };
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let t = rng.random_range(0..analytic.len());
        let j = rng.random_range(0..analytic[t].len());
        let orig = params.tensors().nth(t).unwrap()[j];
        params.tensors_mut().nth(t).unwrap()[j] = orig + h;
        let plus = objective(&params);
        params.tensors_mut().nth(t).unwrap()[j] = orig - h;
        let minus = objective(&params);
        params.tensors_mut().nth(t).unwrap()[j] = orig;
        worst = worst.max(rel_err(analytic[t][j], (plus - minus) / (2.0 * h), 1e-3));
    }
    worst
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let mut plane = || (0..size * size).map(|_| rng.random_range(0.0..255.0f32)).collect::<Vec<_>>();
            let (n_v, n_i, g_v, teacher) = (plane(), plane(), plane(), plane());
            Sample { width: size, height: size, n_v, n_i, g_v, teacher, scene: None }
        })
        .collect()
}

/// The full objective against 20 grid entries and 20 encoder parameters.
fn loss_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut grid = random_grid(rng, DEFAULT_GRID_POINTS, DEFAULT_BIN_SCALE);
    let mut enc = SceneEncoderParams::<f32>::init(rng.random()).cast::<f64>();
    let samples = random_samples(rng, 2, 16);
    let w = LossWeights::default();
    let (_, grads) = total_loss(&grid, &enc, 2, &w, &samples, false).unwrap();
    let mut worst = 0.0f64;

    let touched: Vec<usize> = (0..grads.grid.len()).filter(|&i| grads.grid[i] != 0.0).collect();
    for _ in 0..20 {
        let idx = touched[rng.random_range(0..touched.len())];
        let h = 1e-4;
        let orig = grid.entries()[idx];
        grid.entries_mut()[idx] = orig + h;
        let plus = total_loss(&grid, &enc, 2, &w, &samples, false).unwrap().0.l_all;
        grid.entries_mut()[idx] = orig - h;
        let minus = total_loss(&grid, &enc, 2, &w, &samples, false).unwrap().0.l_all;
        grid.entries_mut()[idx] = orig;
        // L_all resolves differences of about 1e-11 at this step
        worst = worst.max(rel_err(grads.grid[idx], (plus - minus) / (2.0 * h), 1e-8));
    }

    let enc_grad = grads.encoder.expect("samples use the encoder");
    let sizes: Vec<usize> = enc.tensors().map(|t| t.len()).collect();
    for _ in 0..20 {
        let flat = rng.random_range(0..enc_grad.len());
        let (mut t, mut j) = (0, flat);
        while j >= sizes[t] {
            j -= sizes[t];
            t += 1;
        }
        let h = 1e-6;
        let orig = enc.tensors().nth(t).unwrap()[j];
        enc.tensors_mut().nth(t).unwrap()[j] = orig + h;
        let plus = total_loss(&grid, &enc, 2, &w, &samples, false).unwrap().0.l_all;
        enc.tensors_mut().nth(t).unwrap()[j] = orig - h;
        let minus = total_loss(&grid, &enc, 2, &w, &samples, false).unwrap().0.l_all;
        enc.tensors_mut().nth(t).unwrap()[j] = orig;
        worst = worst.max(rel_err(enc_grad[flat], (plus - minus) / (2.0 * h), 1e-9));
    }
    worst
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lut = lookup_gradient_error(&mut rng);
    let enc = encoder_gradient_error(&mut rng);
    let loss = loss_gradient_error(&mut rng);
    let elapsed = secs(t);
    Verdict {
        id: 3,
        name: "gradient suite",
        pass: lut < 1e-4 && enc < 1e-3 && loss < 1e-3 && elapsed < 60.0,
        detail: format!(
            "max rel. error: lookup entries/scene {lut:.2e} (limit 1e-4), encoder {enc:.2e}, loss {loss:.2e} (limit 1e-3); {elapsed:.1} s"
        ),
    }
}

// ---------------------------------------------------------------------------
// 4-6. training

struct TrainRun {
    ckpt: Checkpoint,
    held_out_l1: f64,
    seconds: f64,
}

fn distill(config: TrainConfig, train: &[ImagePair], held_out: &[ImagePair]) -> TrainRun {
    let t = Instant::now();
    let teacher = config.teacher;
    let ckpt = train_loop(config, train, |_, _| Ok(())).expect("training runs");
    let seconds = secs(t);
    let held_out_l1 = teacher_l1(&ckpt.model, held_out, teacher).unwrap();
    TrainRun { ckpt, held_out_l1, seconds }
}

/// Epochs where the 10-epoch moving average of L_all rose, within the first 50.
fn smoothed_trend_breaks(ckpt: &Checkpoint) -> usize {
    let l: Vec<f64> = ckpt.history.iter().take(50).map(|s| s.l_all).collect();
    let smooth: Vec<f64> = l.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    smooth.windows(2).filter(|w| w[1] > w[0]).count()
}

fn convergence(run: &TrainRun) -> Verdict {
    Verdict {
        id: 4,
        name: "max-luminance distillation",
        pass: run.held_out_l1 < 2.0 && run.seconds < 900.0,
        detail: format!(
            "held-out L1 {:.3} levels (limit 2.0) after {EPOCHS} epochs on {TRAIN_PAIRS} pairs of {PAIR_SIZE}x{PAIR_SIZE}, {:.0} s (limit 900 s); smoothed-loss rises in first 50 epochs: {}",
            run.held_out_l1,
            run.seconds,
            smoothed_trend_breaks(&run.ckpt)
        ),
    }
}

fn distilled_vs_quantized(train: &[ImagePair], held_out: &[ImagePair]) -> (Verdict, TrainRun) {
    let teacher = TeacherKind::LaplacianPyramid { levels: 4 };
    let config = TrainConfig { epochs: EPOCHS, teacher, frozen_scene_feature: true, seed: 5, ..TrainConfig::default() };
    let run = distill(config, train, held_out);
    let scene = QuantSceneFeature::BoxMean { window: DEFAULT_BOX_WINDOW };
    let (quant, q) = build_quantized_model(train, teacher, &scene, DEFAULT_GRID_POINTS, DEFAULT_BIN_SCALE).unwrap();
    let quant_l1 = teacher_l1(&quant, held_out, teacher).unwrap();
    let verdict = Verdict {
        id: 5,
        name: "distilled not worse than quantized",
        pass: run.held_out_l1 <= quant_l1,
        detail: format!(
            "laplacian-pyramid teacher, box scene feature: distilled {:.3} vs quantized {:.3} levels held-out L1 (quantized coverage {:.1}%)",
            run.held_out_l1,
            quant_l1,
            q.coverage * 100.0
        ),
    };
    (verdict, run)
}

fn regularizer_contracts(runs: &[(&str, &TrainRun)]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tv_max = 0.0f64;
    let mut m_max = 0.0f64;
    let mut m_violations = 0;
    for _ in 0..20 {
        let c = rng.random_range(0.0..255.0);
        tv_max = tv_max.max(tv_regularizer(&LutGrid4D::<f64>::constant(9, 17.0, c).unwrap()).value.abs());
        // running sums of non-negative steps along every axis
        let steps: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..4.0));
        let wiggle: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let mono = LutGrid4D::<f64>::from_fn(9, 17.0, |k, l, m, n| {
            let idx = [k, l, m, n];
            (0..4).map(|a| steps[a] * idx[a] as f64 + wiggle[..=idx[a]].iter().sum::<f64>()).sum()
        })
        .unwrap();
        let r = monotonicity_regularizer(&mono);
        m_max = m_max.max(r.value.abs());
        m_violations += r.violations;
    }
    let exact = tv_max == 0.0 && m_max == 0.0 && m_violations == 0;
    let mut pass = exact;
    let mut parts = vec![format!("R_TV on constant grids {tv_max:e}, R_m on monotone grids {m_max:e}")];
    for (name, run) in runs {
        let initial = run.ckpt.initial_violations;
        let last = count_violations(&run.ckpt.model.grid) as u64;
        pass &= last <= initial;
        parts.push(format!("{name}: violations {initial} -> {last}"));
    }
    Verdict { id: 6, name: "regularizer contracts", pass, detail: parts.join("; ") }
}

// ---------------------------------------------------------------------------
// 7. metrics

fn metric_identities() -> Verdict {
    let uniform = ImagePlane::from_fn(256, 64, |x, _| x as f32);
    let en = entropy(&uniform);
    let x = luminance(&synthetic_dataset(1, 96, 80, 7)[0].vis);
    let ssim = ssim_metric(&x, &x, &x).unwrap();
    let cc = correlation_coefficient(&x, &x, &x).unwrap();
    let mi = mutual_information(&x, &x, &x).unwrap();
    let h = entropy(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut q_out = 0;
    for k in 0..100 {
        let p = if k % 2 == 0 { noise_pair(48, 40, rng.random()) } else { synthetic_dataset(1, 48, 40, rng.random())[0].clone() };
        let fused = ImagePlane::from_fn(48, 40, |_, _| rng.random_range(0..=255u8) as f32);
        let q = qabf(&fused, &p.ir, &luminance(&p.vis)).unwrap();
        if !(0.0..=1.0).contains(&q) {
            q_out += 1;
        }
    }
    let pass = (en - 8.0).abs() <= 1e-9
        && (ssim - 1.0).abs() <= 1e-9
        && (cc - 1.0).abs() <= 1e-9
        && q_out == 0
        && (mi - 2.0 * h).abs() <= 1e-6;
    Verdict {
        id: 7,
        name: "metric identities",
        pass,
        detail: format!(
            "EN(uniform) {en:.12}, SSIM(x,x) {ssim:.12}, CC(x,x) {cc:.12}, Qabf outside [0,1]: {q_out}/100, MI(x,x,x) - 2H(x) = {:.2e}",
            mi - 2.0 * h
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. performance

fn performance(model: &MmLutModel) -> Verdict {
    let r = bench_model(model, 640, 480, 3, 20, 1).unwrap();
    let lookup_mps = r.stage("lookup").unwrap().megapixels_per_second;
    let total_ms = r.stage("total").unwrap().mean_ms;
    let pair = synthetic_dataset(1, 640, 480, 8).remove(0);
    let fuse_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| model.fuse_image(&pair).unwrap())
    };
    let bits = |img: &mmlut::imgio::ColorImage| img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = bits(&fuse_with(1)) == bits(&fuse_with(4));
    Verdict {
        id: 8,
        name: "performance floor",
        pass: lookup_mps >= 20.0 && total_ms < 100.0 && same,
        detail: format!(
            "lookup {lookup_mps:.1} MP/s (floor 20), 640x480 fuse {total_ms:.1} ms (limit 100), 4-thread output bitwise equal to 1-thread: {same}"
        ),
    }
}

// ---------------------------------------------------------------------------
// 9. serialization

fn random_model(rng: &mut ChaCha8Rng) -> MmLutModel {
    let points = rng.random_range(2..=17usize);
    let bin = rng.random_range(1.0..64.0f32);
    let grid = LutGrid4D::from_fn(points, bin, |_, _, _, _| rng.random_range(-10.0..300.0f32)).unwrap();
    let mut enc = SceneEncoderParams::<f32>::init(rng.random());
    for t in enc.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    }
    let kind = if rng.random_bool(0.5) {
        SceneFeatureKind::Encoder
    } else {
        SceneFeatureKind::BoxMean { window: 2 * rng.random_range(0..10usize) + 1 }
    };
    let mut meta = ModelMetadata::new(if rng.random_bool(0.5) { "distilled" } else { "quantized" }, kind);
    meta.seed = Some(rng.random());
    meta.epochs = rng.random_bool(0.5).then(|| rng.random_range(1..1000));
    meta.coverage = rng.random_bool(0.5).then(|| rng.random_range(0.0..1.0));
    let downsample = [1, 2, 4][rng.random_range(0..3)];
    MmLutModel::new(grid, enc, downsample, meta).unwrap()
}

fn serialization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut round_trips = 0;
    let mut rejected = 0;
    for _ in 0..100 {
        let m = random_model(&mut rng);
        let bytes = encode_model(&m);
        let back = decode_model(&bytes);
        if back.as_ref().is_ok_and(|b| *b == m && encode_model(b) == bytes) {
            round_trips += 1;
        }
        let mut magic = bytes.clone();
        magic[rng.random_range(0..4)] ^= 0x20;
        let mut crc = bytes.clone();
        let k = bytes.len() - rng.random_range(1..=4);
        crc[k] ^= 0x01;
        let mut body = bytes.clone();
        let k = rng.random_range(4..bytes.len() - 4);
        body[k] ^= 0x80;
        rejected += [magic, crc, body].iter().filter(|b| decode_model(b).is_err()).count();
    }
    Verdict {
        id: 9,
        name: "serialization",
        pass: round_trips == 100 && rejected == 300,
        detail: format!("{round_trips}/100 bit-exact round trips, {rejected}/300 corrupted files rejected"),
    }
}

// ---------------------------------------------------------------------------
// 10. determinism

fn determinism(dir: &Path) -> Verdict {
    let data = dir.join("data");
    write_dataset(&data, &synthetic_dataset(4, 64, 64, 10)).unwrap();
    let run = |name: &str| {
        let out = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_mmlut"))
            .args(["train", "--deterministic", "--seed", "17", "--epochs", "3", "--batch", "4", "--patch", "32"])
            .arg("--data-dir")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.mmlut"), run("b.mmlut"));
    Verdict {
        id: 10,
        name: "determinism",
        pass: a == b,
        detail: format!("two --deterministic --seed 17 runs: {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        println!("[{}] {:>2}. {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
        verdicts.push(v.pass);
    };

    emit(interpolation_oracle());
    emit(partition_of_unity());
    emit(gradient_suite());

    let train = synthetic_dataset(TRAIN_PAIRS, PAIR_SIZE, PAIR_SIZE, 1);
    let held_out = synthetic_dataset(HELD_OUT_PAIRS, PAIR_SIZE, PAIR_SIZE, 2);
    let max_config =
        TrainConfig { epochs: EPOCHS, teacher: TeacherKind::MaxLuminance, seed: 4, ..TrainConfig::default() };
    let max_run = distill(max_config, &train, &held_out);
    emit(convergence(&max_run));
    let (v5, pyr_run) = distilled_vs_quantized(&train, &held_out);
    emit(v5);
    emit(regularizer_contracts(&[("max-luminance run", &max_run), ("laplacian-pyramid run", &pyr_run)]));

    emit(metric_identities());
    emit(performance(&max_run.ckpt.model));
    emit(serialization());
    emit(determinism(dir.path()));

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        std::process::exit(1);
    }
}
