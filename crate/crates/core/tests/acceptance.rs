//! Acceptance criteria 1-11, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the criteria execute in order on one thread and
//! the report is printed regardless of output capture.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robusthide::attacks::gradcheck::probe_input;
use robusthide::attacks::{
    attack_pipeline, dct_8x8, gaussian_blur, gradient_check, idct_8x8, jpeg, jpeg_mixup, jpeg_mixup_terms, random_scale,
    real_jpeg, AttackStage, GradOp, MixTerm,
};
use robusthide::evaluation::BundlePipeline;
use robusthide::networks::BundleSpec;
use robusthide::synthetic::corpus;
use robusthide::training::{
    lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss, residual_loss, scalar, total_generator_loss,
    train, AttackSchedule, Batch, LossParts, StepMetrics, TrainData,
};
use robusthide::{
    psnr, run_battery, AttackConfig, AttackMode, BatteryResult, Checkpoint, EvalAttack, ImageTensor, JpegSimulator,
    LossWeights, Tensor, TrainConfig, Trainer, Var,
};

type Outcome = robusthide::Result<(bool, String)>;
type Check = (usize, &'static str, fn() -> Outcome);

/// Toy-scale training settings shared by criteria 8-10.
const TOY_SIDE: usize = 64;
const TOY_LR: f64 = 1e-3;
const TOY_STEPS: u64 = 3000;
const TOY_TRAIN_IMAGES: usize = 200;
const HELD_OUT_GROUPS: usize = 20;
const TRAIN_SEED: u64 = 7;
const EVAL_SEED: u64 = 11;

fn toy_config(n: usize, steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: TOY_LR,
        steps,
        image_side: TOY_SIDE,
        seed: TRAIN_SEED,
        checkpoint_every: 0,
        eval_every: 0,
        network: BundleSpec { n, depth: 3, base_channels: 8, disc_base_channels: 8, ..BundleSpec::default() },
        ..TrainConfig::default()
    }
}

fn train_toy(config: TrainConfig) -> robusthide::Result<(Trainer, Duration)> {
    let data = TrainData { train: corpus(0, TOY_TRAIN_IMAGES, TOY_SIDE)?, val: Vec::new() };
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    train(&mut trainer, &data, None)?;
    Ok((trainer, start.elapsed()))
}

fn held_out(n: usize) -> robusthide::Result<Vec<ImageTensor>> {
    corpus(100_000, HELD_OUT_GROUPS * (n + 1), TOY_SIDE)
}

fn jpeg_battery(trainer: &Trainer, progressive: bool) -> robusthide::Result<BatteryResult> {
    let pipeline = BundlePipeline { bundle: &trainer.bundle, progressive };
    run_battery(
        &pipeline,
        &held_out(1)?,
        &[EvalAttack::None, EvalAttack::RealJpeg { qf: 90 }],
        HELD_OUT_GROUPS,
        EVAL_SEED,
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn to_image(v: &Var<f64>) -> robusthide::Result<ImageTensor> {
    Ok(ImageTensor::new(v.value().cast::<f32>())?.clamped())
}

fn c1_dct_round_trip() -> Outcome {
    let x = Var::constant(random_tensor(&[1000, 1, 8, 8], 1));
    let start = Instant::now();
    let y = idct_8x8(&dct_8x8(&x)?)?;
    let elapsed = start.elapsed();
    let err = max_abs_diff(x.value().data(), y.value().data());
    Ok((err <= 1e-5 && elapsed < Duration::from_secs(1), format!("max abs error {err:.2e} in {elapsed:.2?}")))
}

fn c2_gradient_checks() -> Outcome {
    let x = probe_input(16, 3);
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["noise", "blur", "scale", "jpeg-soft", "jpeg-mask", "mixup"] {
        let op = GradOp::by_name(name)?;
        let limit = if op.is_linear() { 1e-3 } else { 1e-2 };
        let r = gradient_check(&op, &x, 100, 5)?;
        ok &= r.checked == 100 && r.max_rel_error <= limit;
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    Ok((ok, format!("{} in {elapsed:.2?}", parts.join(", "))))
}

fn c3_mixture_degeneracy() -> Outcome {
    let start = Instant::now();
    let x = Var::constant(random_tensor(&[2, 3, 16, 16], 4).map(|v| v * 0.9));
    let base = AttackConfig::default();
    let pairs: Vec<(JpegSimulator, u8)> = base
        .jpeg_simulators
        .iter()
        .flat_map(|&s| base.qf_choices.iter().map(move |&q| (s, q)))
        .collect();
    let mut exact = 0;
    for (k, &(sim, qf)) in pairs.iter().enumerate() {
        let weights = (0..pairs.len()).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
        let mixed = jpeg_mixup(&x, &AttackConfig { jpeg_mix_weights: weights, ..base.clone() })?;
        let single = jpeg::simulate(&x, sim, qf)?;
        exact += usize::from(mixed.value().data() == single.value().data());
    }
    let terms = [
        MixTerm { simulator: JpegSimulator::Mask, qf: 50, weight: 0.5 },
        MixTerm { simulator: JpegSimulator::Round, qf: 50, weight: 0.5 },
    ];
    let mixed = jpeg_mixup_terms(&x, &terms)?;
    let a = jpeg::simulate(&x, JpegSimulator::Mask, 50)?;
    let b = jpeg::simulate(&x, JpegSimulator::Round, 50)?;
    let mean: Vec<f64> = a.value().data().iter().zip(b.value().data()).map(|(u, v)| (u + v) / 2.0).collect();
    let err = max_abs_diff(mixed.value().data(), &mean);
    let elapsed = start.elapsed();
    Ok((
        exact == pairs.len() && err <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("{exact}/{} one-hot mixtures bit-exact, two-branch error {err:.1e}, {elapsed:.2?}", pairs.len()),
    ))
}

fn c4_jpeg_monotonicity() -> Outcome {
    let start = Instant::now();
    let images = corpus(500, 10, 64)?;
    let qfs = [10u8, 30, 50, 70, 90];
    let mean_psnr = |f: &dyn Fn(&ImageTensor, u8) -> robusthide::Result<ImageTensor>, qf: u8| -> robusthide::Result<f64> {
        let mut sum = 0.0;
        for x in &images {
            sum += psnr(x, &f(x, qf)?)?;
        }
        Ok(sum / images.len() as f64)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for sim in JpegSimulator::ALL {
        let f = |x: &ImageTensor, qf: u8| to_image(&jpeg::simulate(&Var::constant(x.tensor().cast::<f64>()), sim, qf)?);
        let curve = qfs.iter().map(|&q| mean_psnr(&f, q)).collect::<robusthide::Result<Vec<_>>>()?;
        ok &= curve.windows(2).all(|w| w[1] >= w[0]);
        parts.push(format!("{} {:.1}..{:.1}", sim.name(), curve[0], curve[4]));
    }
    let real = qfs.iter().map(|&q| mean_psnr(&|x, qf| real_jpeg(x, qf), q)).collect::<robusthide::Result<Vec<_>>>()?;
    ok &= real.windows(2).all(|w| w[1] >= w[0]);
    parts.push(format!("codec {:.1}..{:.1}", real[0], real[4]));
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    Ok((ok, format!("{} dB, {elapsed:.2?}", parts.join(", "))))
}

fn c5_composition_rule() -> Outcome {
    let config = AttackConfig::default();
    let marked = Var::constant(random_tensor(&[1, 3, 16, 16], 8).map(|v| v * 0.9));
    let cover = Var::constant(random_tensor(&[1, 3, 16, 16], 9).map(|v| v * 0.9));
    let qf90: Vec<MixTerm> = config.composition_terms()?;
    let jpeg90 = jpeg_mixup_terms(&marked, &qf90)?;
    let (mut good, mut replayed) = (0, 0);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, trace) = attack_pipeline(&marked, &cover, &config, &mut rng, AttackMode::JpegThenOther)?;
        let first_ok = matches!(&trace.stages[..], [AttackStage::Jpeg { terms }, second]
            if terms.iter().all(|t| t.qf == 90) && !matches!(second, AttackStage::Jpeg { .. }));
        let replay = match trace.stages.get(1) {
            Some(AttackStage::Blur { kernel, sigma }) => Some(gaussian_blur(&jpeg90, *kernel, *sigma)?),
            Some(AttackStage::Scale { factor }) => Some(random_scale(&jpeg90, *factor)?),
            _ => None,
        };
        let replay_ok = match replay {
            Some(r) => {
                replayed += 1;
                max_abs_diff(r.value().data(), out.value().data()) == 0.0
            }
            None => true,
        };
        good += usize::from(first_ok && replay_ok);
    }
    Ok((good == 1000, format!("{good}/1000 invocations jpeg(qf 90) then one attack, {replayed} replayed exactly")))
}

fn c6_loss_closed_forms() -> Outcome {
    let c = |shape: &[usize], v: f64| Var::constant(Tensor::full(shape, v));
    let s = [2, 3, 4, 4];
    let cover = Var::constant(random_tensor(&s, 12).map(|v| v * 0.5));
    let secret = Var::constant(random_tensor(&s, 13).map(|v| v * 0.5));
    let marked = Var::constant(cover.value().map(|v| v + 0.1));
    let rec = scalar(&reconstruction_loss(&cover, &marked, std::slice::from_ref(&secret), std::slice::from_ref(&secret), Some(&cover))?);
    let ls = scalar(&residual_loss(&c(&s, 0.0), &c(&s, 0.3), 5.0)?);
    let g = scalar(&lsgan_generator_loss(&c(&[2, 1, 3, 3], 0.5)));
    let d = scalar(&lsgan_discriminator_loss(&c(&[2, 1, 3, 3], 1.0), &c(&[2, 1, 3, 3], 0.0)));
    let w = LossWeights { alpha: 0.05, beta: 0.05, gamma: 1.5, residual_gain: 5.0 };
    let ones = LossParts { rec: 1.0, dis_cover: 1.0, dis_secret: 1.0, residual: 1.0 };
    let total = total_generator_loss(&ones, &w);
    let errs = [(rec - 0.01).abs(), (ls - 0.09).abs(), (g - 0.25).abs(), d.abs(), (total - 2.6).abs()];

    let parts = LossParts { rec: 0.7, dis_cover: 0.3, dis_secret: 1.9, residual: 0.45 };
    let at = |a: f64, b: f64, g: f64| total_generator_loss(&parts, &LossWeights { alpha: a, beta: b, gamma: g, residual_gain: 5.0 });
    let origin = at(0.0, 0.0, 0.0);
    let (p, q) = ((0.05, 0.2, 1.5), (0.4, 0.01, 0.3));
    let lhs = at(p.0 + q.0, p.1 + q.1, p.2 + q.2) - origin;
    let rhs = (at(p.0, p.1, p.2) - origin) + (at(q.0, q.1, q.2) - origin);
    let scaled = at(3.0 * p.0, 3.0 * p.1, 3.0 * p.2) - origin - 3.0 * (at(p.0, p.1, p.2) - origin);
    let linear = (lhs - rhs).abs().max(scaled.abs());
    let worst = errs.iter().copied().fold(linear, f64::max);
    Ok((worst <= 1e-9, format!("largest deviation {worst:.1e}")))
}

fn c7_overfit_smoke() -> Outcome {
    let images = corpus(200_000, 8, 64)?;
    let batch = Batch::new(ImageTensor::stack(&images[..4])?, vec![ImageTensor::stack(&images[4..])?])?;
    let config = TrainConfig { schedule: AttackSchedule::Disabled, ..toy_config(1, 200) };
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    let mut totals = Vec::new();
    for _ in 0..200 {
        totals.push(trainer.step_batch(&batch)?.losses.total);
    }
    let elapsed = start.elapsed();
    let (baseline, last) = (totals[5], totals[199]);
    Ok((
        last <= 0.5 * baseline && elapsed < Duration::from_secs(300),
        format!("total loss {baseline:.4} at step 5 -> {last:.4} at step 199 ({:.0}% drop), {elapsed:.1?}", 100.0 * (1.0 - last / baseline)),
    ))
}

struct ToyRuns {
    full: BatteryResult,
    full_time: Duration,
    direct: BatteryResult,
}

fn toy_runs() -> robusthide::Result<ToyRuns> {
    let (full, full_time) = train_toy(toy_config(1, TOY_STEPS))?;
    let mut direct = toy_config(1, TOY_STEPS);
    direct.ablations.no_progressive = true;
    let (direct, _) = train_toy(direct)?;
    Ok(ToyRuns { full: jpeg_battery(&full, true)?, full_time, direct: jpeg_battery(&direct, false)? })
}

fn row_psnr(b: &BatteryResult, attack: &EvalAttack) -> f64 {
    b.row(attack).map_or(f64::NAN, |r| r.psnr_db)
}

fn c8_toy_training(runs: &ToyRuns) -> Outcome {
    let marked = runs.full.embedding.psnr_db;
    let clean = row_psnr(&runs.full, &EvalAttack::None);
    let jpeg = row_psnr(&runs.full, &EvalAttack::RealJpeg { qf: 90 });
    let ok = marked >= 25.0
        && clean >= 20.0
        && jpeg >= 15.0
        && clean - jpeg < 8.0
        && runs.full_time <= Duration::from_secs(2 * 3600);
    Ok((
        ok,
        format!(
            "{TOY_STEPS} steps in {:.0?}: marked {marked:.2} dB, clean recovery {clean:.2} dB, real jpeg 90 recovery {jpeg:.2} dB",
            runs.full_time
        ),
    ))
}

fn c9_progressive_ablation(runs: &ToyRuns) -> Outcome {
    let q90 = EvalAttack::RealJpeg { qf: 90 };
    let (full, direct) = (row_psnr(&runs.full, &q90), row_psnr(&runs.direct, &q90));
    Ok((full - direct >= 1.0, format!("jpeg 90 recovery: full {full:.2} dB, no_progressive {direct:.2} dB")))
}

fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().map(|&v| v as f64).sum::<f64>() / n, b.iter().map(|&v| v as f64).sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt().max(1e-12)
}

fn c10_multi_secret() -> Outcome {
    let (trainer, _) = train_toy(toy_config(3, 500))?;
    let images = held_out(3)?;
    let (mut wins, mut total, mut distinct) = (0, 0, 0.0f64);
    for group in images.chunks_exact(4) {
        let (cover, secrets) = (&group[0], &group[1..]);
        let marked = trainer.bundle.embed(cover, secrets)?.1.quantized();
        let revealed = trainer.bundle.extract(&marked, true)?.secrets;
        if revealed.len() != 3 {
            return Ok((false, format!("{} recovered outputs", revealed.len())));
        }
        for i in 0..3 {
            for j in i + 1..3 {
                distinct = distinct.max(revealed[i].tensor().max_abs_diff(revealed[j].tensor()));
            }
            let own = pearson(revealed[i].tensor().data(), secrets[i].tensor().data());
            let beats_all = (0..3)
                .filter(|&j| j != i)
                .all(|j| pearson(revealed[i].tensor().data(), secrets[j].tensor().data()) < own);
            wins += usize::from(beats_all);
            total += 1;
        }
    }
    let frac = wins as f64 / total as f64;
    Ok((
        distinct > 1.0 / 127.5 && frac >= 0.7,
        format!("own-secret correlation highest on {wins}/{total} ({:.0}%), head outputs differ by up to {distinct:.3}", 100.0 * frac),
    ))
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        steps: 6,
        image_side: 16,
        batch_size: 2,
        seed: 21,
        network: BundleSpec { n: 1, depth: 2, base_channels: 4, disc_base_channels: 4, disc_downsamplings: 1, ..BundleSpec::default() },
        ..TrainConfig::default()
    }
}

fn run_steps(trainer: &mut Trainer, pool: &[ImageTensor], until: u64) -> robusthide::Result<Vec<StepMetrics>> {
    let mut out = Vec::new();
    while trainer.step < until {
        out.push(trainer.step_on(pool)?.without_timing());
    }
    Ok(out)
}

fn c11_determinism_and_resume() -> Outcome {
    let pool = corpus(300_000, 12, 16)?;
    let mut a = Trainer::new(tiny_config())?;
    let mut b = Trainer::new(tiny_config())?;
    let ma = run_steps(&mut a, &pool, 6)?;
    let mb = run_steps(&mut b, &pool, 6)?;
    let dir = tempfile::tempdir().expect("temporary directory");
    let bytes = |t: &Trainer, name: &str| -> robusthide::Result<Vec<u8>> {
        let path = dir.path().join(name);
        t.checkpoint()?.save(&path)?;
        Ok(std::fs::read(&path).expect("checkpoint just written"))
    };
    let replay = ma == mb && bytes(&a, "a.ckpt")? == bytes(&b, "b.ckpt")?;

    let eval = |t: &Trainer| run_battery(&BundlePipeline { bundle: &t.bundle, progressive: true }, &pool, &EvalAttack::defaults(), 4, 3);
    let eval_replay = eval(&a)? == eval(&b)?;

    let path = dir.path().join("k3.ckpt");
    let mut c = Trainer::new(tiny_config())?;
    run_steps(&mut c, &pool, 3)?;
    c.checkpoint()?.save(&path)?;
    drop(c);
    let mut resumed = Trainer::resume(Checkpoint::load(&path)?, tiny_config())?;
    let next = run_steps(&mut resumed, &pool, 4)?;
    let resume = next[0] == ma[3];
    Ok((
        replay && eval_replay && resume,
        format!("training replay {replay}, evaluation replay {eval_replay}, resume at step 3 matches step 4 metrics {resume}"),
    ))
}

fn report(number: usize, name: &str, outcome: Outcome) -> bool {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("criterion {number:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Criteria named on the command line, or all of them.
fn selected() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() { (1..=11).collect() } else { picked }
}

fn main() {
    let want = selected();
    let on = |k: usize| want.contains(&k);
    let mut results = Vec::new();
    let simple: [Check; 7] = [
        (1, "dct round trip", c1_dct_round_trip),
        (2, "gradient checks", c2_gradient_checks),
        (3, "mixture degeneracy", c3_mixture_degeneracy),
        (4, "jpeg monotonicity", c4_jpeg_monotonicity),
        (5, "composition rule", c5_composition_rule),
        (6, "loss closed forms", c6_loss_closed_forms),
        (7, "overfit smoke", c7_overfit_smoke),
    ];
    for (k, name, f) in simple {
        if on(k) {
            results.push(report(k, name, f()));
        }
    }
    if on(8) || on(9) {
        match toy_runs() {
            Ok(runs) => {
                results.push(report(8, "toy training", c8_toy_training(&runs)));
                results.push(report(9, "progressive ablation", c9_progressive_ablation(&runs)));
            }
            Err(e) => {
                let msg = e.to_string();
                results.push(report(8, "toy training", Err(e)));
                results.push(report(9, "progressive ablation", Ok((false, format!("error: {msg}")))));
            }
        }
    }
    if on(10) {
        results.push(report(10, "multi-secret disentanglement", c10_multi_secret()));
    }
    if on(11) {
        results.push(report(11, "determinism and resume", c11_determinism_and_resume()));
    }
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
