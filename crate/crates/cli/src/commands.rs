use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use robusthide::attacks::gradcheck::probe_input;
use robusthide::attacks::real::encode_jpeg;
use robusthide::attacks::{gradient_check, GradOp};
use robusthide::config::{self, Override, ENV_PREFIX};
use robusthide::evaluation::{multi_secret_battery, pair_groups, residual_visual_report, BundlePipeline, StegoPipeline};
use robusthide::imaging::{amplified_panel, decode_rgb8, resize_rgb8, save_rgb8, DIFF_AMPLIFICATION};
use robusthide::synthetic::corpus;
use robusthide::training::{train_with, RunDir, TrainData, TrainSummary};
use robusthide::{
    psnr, save_image, Checkpoint, DatasetManifest, EvalAttack, ImageTensor, Split, SplitFractions, Tensor, TrainConfig,
    Trainer,
};

use crate::{Cli, Command};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let is_usage = e.chain().any(|c| {
        c.downcast_ref::<Usage>().is_some() || matches!(c.downcast_ref::<robusthide::Error>(), Some(robusthide::Error::Config(_)))
    });
    if is_usage { 2 } else { 1 }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { src, side, split, manifest } => ingest(cli, src, *side, split, manifest.as_deref()),
        Command::Train { manifest, synthetic, resume, overrides } => {
            train(cli, manifest.as_deref(), *synthetic, *resume, overrides)
        }
        Command::Embed { checkpoint, cover, secrets } => embed(cli, checkpoint, cover, secrets),
        Command::Extract { checkpoint, attacked } => extract(cli, checkpoint, attacked),
        Command::Attack { input, op, params, cover, output } => {
            attack(cli, input, op, params, cover.as_deref(), output.as_deref())
        }
        Command::Eval { checkpoint, manifest, attacks, count, split, grid_rows } => {
            eval(cli, checkpoint, manifest, attacks.as_deref(), *count, split, *grid_rows)
        }
        Command::Gradcheck { op, trials, side } => gradcheck(cli, op, *trials, *side),
    }
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    Ok(&cli.out_dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn ingest(cli: &Cli, src: &Path, side: usize, split: &str, manifest: Option<&Path>) -> Result<()> {
    let parts: Vec<f64> = split
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--split expects three comma-separated numbers, got '{split}'")))?;
    let [train, val, test] = parts[..] else {
        return Err(usage(format!("--split expects three fractions, got {}", parts.len())));
    };
    let m = DatasetManifest::ingest(src, side, SplitFractions { train, val, test }, seed(cli))?;
    let path = match manifest {
        Some(p) => p.to_path_buf(),
        None => out_dir(cli)?.join("manifest.json"),
    };
    m.save(&path)?;
    println!(
        "{} images: train {}, val {}, test {} -> {}",
        m.files.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test),
        path.display()
    );
    Ok(())
}

fn train_usage() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand_mut("train").expect("train subcommand");
    sub.render_usage().to_string()
}

/// Whether the configuration file or the environment already fixes the seed.
fn config_sets_seed(text: &str) -> bool {
    let in_file = toml::from_str::<toml::Table>(text).map(|t| t.contains_key("seed")).unwrap_or(false);
    in_file || std::env::var_os(format!("{ENV_PREFIX}SEED")).is_some()
}

fn train(cli: &Cli, manifest: Option<&Path>, synthetic: Option<usize>, resume: bool, overrides: &[String]) -> Result<()> {
    let Some(cfg_path) = &cli.config else {
        return Err(usage(format!("train requires --config <FILE>\n\n{}", train_usage())));
    };
    let text = std::fs::read_to_string(cfg_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}\n\n{}", cfg_path.display(), train_usage())))?;
    let mut ovs = overrides.iter().map(|o| Override::parse(o)).collect::<robusthide::Result<Vec<_>>>()?;
    if cli.seed.is_some() || !config_sets_seed(&text) {
        ovs.push(Override::new("seed", seed(cli) as i64));
    }
    let cfg: TrainConfig = config::resolve(Some(&text), std::env::vars(), &ovs)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let data = match (manifest, synthetic) {
        (Some(m), _) => {
            let m = DatasetManifest::open(m)?;
            let load = |s| -> Result<Vec<ImageTensor>> {
                m.paths(s).iter().map(|p| Ok(robusthide::load_image(p, cfg.image_side)?)).collect()
            };
            TrainData { train: load(Split::Train)?, val: load(Split::Val)? }
        }
        (None, Some(n)) => TrainData {
            train: corpus(cfg.seed, n, cfg.image_side)?,
            val: corpus(cfg.seed.wrapping_add(1 << 32), cfg.val_count.max(2 * (cfg.network.n + 1)), cfg.image_side)?,
        },
        (None, None) => return Err(usage(format!("train needs --manifest or --synthetic\n\n{}", train_usage()))),
    };

    let run = RunDir(out_dir(cli)?.to_path_buf());
    let mut trainer = if resume {
        let latest = run.latest();
        if !latest.is_file() {
            bail!("--resume given but {} does not exist", latest.display());
        }
        let t = Trainer::resume(Checkpoint::load(&latest)?, cfg)?;
        eprintln!("resuming at step {}", t.step);
        t
    } else {
        Trainer::new(cfg)?
    };
    let TrainSummary { metrics, validations } = train_with(&mut trainer, &data, Some(&run), |m| {
        if m.step % 100 == 0 {
            eprintln!("step {:>6}  loss {:.4}  marked psnr {:.2} dB", m.step, m.losses.total, m.psnr_marked);
        }
    })?;
    println!("trained {} step(s); now at step {}", metrics.len(), trainer.step);
    if let Some(v) = validations.last() {
        println!(
            "validation @ {}: marked {:.2} dB, secret clean {:.2} dB, secret jpeg-90 {:.2} dB",
            v.step, v.psnr_marked, v.psnr_secret_clean, v.psnr_secret_jpeg90
        );
    }
    Ok(())
}

/// Reads an image at its own side if square, otherwise resizes to
/// `fallback` (or fails in strict mode).
fn read_square(path: &Path, strict: bool, fallback: usize) -> Result<ImageTensor> {
    let img = decode_rgb8(path)?;
    let (w, h) = img.dimensions();
    if w == h {
        return Ok(ImageTensor::from_rgb8(&img)?);
    }
    if strict {
        return Err(usage(format!("{} is {w}x{h}, not square (strict mode)", path.display())));
    }
    eprintln!("warning: {} is {w}x{h}; resizing to {fallback}x{fallback}", path.display());
    Ok(ImageTensor::from_rgb8(&resize_rgb8(&img, fallback))?)
}

fn resized(path: &Path, side: usize) -> Result<ImageTensor> {
    Ok(ImageTensor::from_rgb8(&resize_rgb8(&decode_rgb8(path)?, side))?)
}

fn checkpoint_config(ck: &Checkpoint) -> Option<TrainConfig> {
    ck.config.as_ref().and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn fallback_side(ck: &Checkpoint) -> usize {
    checkpoint_config(ck).map_or(256, |c| c.image_side)
}

fn write_residual_sidecar(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_json(path, &json!({ "shape": t.shape(), "data": t.data() }))
}

fn embed(cli: &Cli, checkpoint: &Path, cover: &Path, secrets: &[PathBuf]) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let n = ck.bundle.n();
    if secrets.len() != n {
        bail!(robusthide::Error::Contract(format!("checkpoint expects n = {n} secret image(s), got {}", secrets.len())));
    }
    let cover_img = read_square(cover, cli.strict, fallback_side(&ck))?;
    let side = cover_img.side();
    let secret_imgs = secrets.iter().map(|p| resized(p, side)).collect::<Result<Vec<_>>>()?;
    let (residual, marked) = ck.bundle.embed(&cover_img, &secret_imgs)?;
    let dir = out_dir(cli)?;
    save_image(&marked, 0, dir.join("marked.png"))?;
    save_image(&amplified_panel(residual.tensor(), DIFF_AMPLIFICATION)?, 0, dir.join("residual.png"))?;
    write_residual_sidecar(&dir.join("residual.json"), residual.tensor())?;
    println!(
        "marked image {} ({}x{}), psnr vs cover {:.2} dB",
        dir.join("marked.png").display(),
        side,
        side,
        psnr(&marked.quantized(), &cover_img)?
    );
    Ok(())
}

fn extract(cli: &Cli, checkpoint: &Path, attacked: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let progressive = checkpoint_config(&ck).is_none_or(|c| c.progressive());
    let img = read_square(attacked, cli.strict, fallback_side(&ck))?;
    let ex = ck.bundle.extract(&img, progressive)?;
    let dir = out_dir(cli)?;
    for (i, s) in ex.secrets.iter().enumerate() {
        save_image(s, 0, dir.join(format!("secret_{}.png", i + 1)))?;
    }
    save_image(&ex.cover_estimate, 0, dir.join("cover.png"))?;
    save_image(&amplified_panel(ex.residual_estimate.tensor(), 1.0)?, 0, dir.join("residual.png"))?;
    write_residual_sidecar(&dir.join("residual.json"), ex.residual()?.tensor())?;
    println!("{} secret(s), cover estimate and residual written to {}", ex.secrets.len(), dir.display());
    Ok(())
}

pub const ATTACK_OPS: [&str; 9] =
    ["real-jpeg", "scale", "blur", "noise", "crop", "jpeg-mask", "jpeg-soft", "jpeg-round", "mixup"];

fn parse_params(params: &[String]) -> Result<BTreeMap<String, f64>> {
    params
        .iter()
        .map(|p| {
            let (k, v) = p.split_once('=').ok_or_else(|| usage(format!("expected KEY=VALUE, got '{p}'")))?;
            let v = v.trim().parse::<f64>().map_err(|_| usage(format!("parameter {k} is not a number: '{v}'")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

enum AttackOp {
    Real(EvalAttack),
    Simulated(GradOp),
}

fn attack_op(op: &str, params: &BTreeMap<String, f64>) -> Result<AttackOp> {
    let allowed: &[&str] = match op {
        "real-jpeg" | "jpeg-mask" | "jpeg-soft" | "jpeg-round" => &["qf"],
        "scale" => &["factor"],
        "blur" => &["kernel", "sigma"],
        "noise" => &["sigma"],
        "crop" => &["keep_ratio"],
        "mixup" => &[],
        other => return Err(usage(format!("unknown attack op '{other}'; valid ops: {}", ATTACK_OPS.join(", ")))),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(usage(format!("op {op} has no parameter '{k}'; accepted: {}", allowed.join(", "))));
    }
    let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
    Ok(match op {
        "real-jpeg" => AttackOp::Real(EvalAttack::RealJpeg { qf: get("qf", 70.0) as u8 }),
        "scale" => AttackOp::Real(EvalAttack::Scale { factor: get("factor", 0.5) }),
        "blur" => AttackOp::Real(EvalAttack::Blur { kernel: get("kernel", 5.0) as usize, sigma: get("sigma", 1.0) }),
        "noise" => AttackOp::Real(EvalAttack::Noise { sigma: get("sigma", 0.05) }),
        "crop" => AttackOp::Real(EvalAttack::Crop { keep_ratio: get("keep_ratio", 0.7) }),
        "jpeg-mask" => AttackOp::Simulated(GradOp::JpegMask { qf: get("qf", 50.0) as u8 }),
        "jpeg-soft" => AttackOp::Simulated(GradOp::JpegSoft { qf: get("qf", 70.0) as u8 }),
        "jpeg-round" => AttackOp::Simulated(GradOp::JpegRound { qf: get("qf", 70.0) as u8 }),
        _ => AttackOp::Simulated(GradOp::by_name("mixup")?),
    })
}

fn attack(
    cli: &Cli,
    input: &Path,
    op: &str,
    params: &[String],
    cover: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let op = attack_op(op, &parse_params(params)?)?;
    let img = read_square(input, cli.strict, 256)?;
    let side = img.side();
    let seed = seed(cli);
    let is_jpeg = matches!(op, AttackOp::Real(EvalAttack::RealJpeg { .. }));
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => out_dir(cli)?.join(if is_jpeg { "attacked.jpg" } else { "attacked.png" }),
    };
    let attacked = match op {
        AttackOp::Real(EvalAttack::RealJpeg { qf }) => {
            let bytes = encode_jpeg(&img.to_rgb8(0), qf)?;
            std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            ImageTensor::from_rgb8(&decode_rgb8(&path)?)?
        }
        AttackOp::Real(a) => {
            let fill = match cover {
                Some(c) => resized(c, side)?,
                None => ImageTensor::filled(1, side, 0.0),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = a.apply(&img, &fill, &mut rng)?;
            save_rgb8(&out.to_rgb8(0), &path)?;
            out
        }
        AttackOp::Simulated(g) => {
            let out = g.simulate(&img, seed)?;
            save_rgb8(&out.to_rgb8(0), &path)?;
            out.quantized()
        }
    };
    eprintln!("psnr vs input: {:.2} dB", psnr(&attacked, &img)?);
    println!("{}", path.display());
    Ok(())
}

fn eval(
    cli: &Cli,
    checkpoints: &[PathBuf],
    manifest: &Path,
    attacks: Option<&str>,
    count: usize,
    split: &str,
    grid_rows: usize,
) -> Result<()> {
    let attacks = match attacks {
        Some(list) => list.split(',').map(EvalAttack::parse).collect::<robusthide::Result<Vec<_>>>().map_err(|e| usage(e.to_string()))?,
        None => EvalAttack::defaults(),
    };
    let split = match split {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(usage(format!("unknown split '{other}'; expected train, val or test"))),
    };
    if count == 0 {
        bail!(robusthide::Error::Contract("evaluation count must be positive".into()));
    }
    let seed = seed(cli);
    let m = DatasetManifest::open(manifest)?;
    let dataset = m.load(split)?;
    let cks = checkpoints.iter().map(Checkpoint::load).collect::<robusthide::Result<Vec<_>>>()?;
    let pipes: Vec<BundlePipeline> = cks
        .iter()
        .map(|c| BundlePipeline { bundle: &c.bundle, progressive: checkpoint_config(c).is_none_or(|t| t.progressive()) })
        .collect();
    let dyn_pipes: Vec<&dyn StegoPipeline> = pipes.iter().map(|p| p as &dyn StegoPipeline).collect();
    let results = multi_secret_battery(&dyn_pipes, &dataset, &attacks, count, seed)?;

    let dir = out_dir(cli)?;
    let table: String = results.iter().map(|r| r.to_table()).collect::<Vec<_>>().join("\n");
    write_json(&dir.join("battery.json"), &results)?;
    std::fs::write(dir.join("battery.txt"), &table).context("writing battery.txt")?;
    print!("{table}");

    if grid_rows > 0 {
        let first = &cks[0];
        let groups = pair_groups(&dataset, first.bundle.n(), grid_rows.min(count), seed)?;
        let report = residual_visual_report(&first.bundle, &groups, &EvalAttack::RealJpeg { qf: 70 }, seed)?;
        save_rgb8(&report.grid, &dir.join("residual_grid.png"))?;
        write_json(&dir.join("residual_report.json"), &json!({ "gain": report.gain, "samples": report.samples }))?;
    }
    Ok(())
}

fn gradcheck(cli: &Cli, op: &str, trials: usize, side: usize) -> Result<()> {
    let ops = if op == "all" {
        GradOp::NAMES.iter().map(|n| GradOp::by_name(n)).collect::<robusthide::Result<Vec<_>>>()?
    } else {
        vec![GradOp::by_name(op).map_err(|e| usage(e.to_string()))?]
    };
    let seed = seed(cli);
    let x = probe_input(side, seed);
    let reports = ops.iter().map(|o| gradient_check(o, &x, trials, seed)).collect::<robusthide::Result<Vec<_>>>()?;
    println!("{:<12} {:>8} {:>8} {:>12} {:>10}  result", "op", "checked", "skipped", "max rel err", "tolerance");
    for r in &reports {
        println!(
            "{:<12} {:>8} {:>8} {:>12.3e} {:>10.0e}  {}",
            r.op,
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    write_json(&out_dir(cli)?.join("gradcheck.json"), &reports)?;
    if reports.iter().any(|r| !r.passed) {
        bail!("gradient check failed");
    }
    Ok(())
}
