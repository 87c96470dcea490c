//! Evaluation battery: embed, attack with real (non-simulated) distortions,
//! extract, and score against the ground truth.

use std::cell::RefCell;
use std::fmt::Write as _;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::real::{real_blur, real_crop, real_jpeg, real_noise, real_scale};
use crate::error::{contract, Error, Result};
use crate::imaging::{amplified_panel, ImageTensor, DIFF_AMPLIFICATION};
use crate::metrics::{psnr, ssim, MetricReport};
use crate::networks::PipelineBundle;

/// Recorded in every [`BatteryResult`]; evaluation never uses the
/// differentiable simulators.
pub const PROVENANCE: &str = "real-8bit-codec";

/// A channel distortion applied to the quantised marked image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "kebab-case")]
pub enum EvalAttack {
    None,
    RealJpeg { qf: u8 },
    Scale { factor: f64 },
    Blur { kernel: usize, sigma: f64 },
    /// `sigma` as a fraction of full scale.
    Noise { sigma: f64 },
    Crop { keep_ratio: f64 },
}

impl EvalAttack {
    pub const NAMES: [&'static str; 6] = ["none", "real-jpeg", "scale", "blur", "noise", "crop"];

    /// The default battery: no attack, JPEG QF 70, scale 0.5, blur 5×5 σ 1,
    /// noise 0.05, crop keep 0.7.
    pub fn defaults() -> Vec<Self> {
        vec![
            EvalAttack::None,
            EvalAttack::RealJpeg { qf: 70 },
            EvalAttack::Scale { factor: 0.5 },
            EvalAttack::Blur { kernel: 5, sigma: 1.0 },
            EvalAttack::Noise { sigma: 0.05 },
            EvalAttack::Crop { keep_ratio: 0.7 },
        ]
    }

    /// Parses `name[:p1[:p2]]`, e.g. `real-jpeg:90`, `blur:5:1.5`, `crop`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut it = spec.trim().split(':');
        let name = it.next().unwrap_or_default();
        let params: Vec<&str> = it.collect();
        let num = |i: usize, default: f64| -> Result<f64> {
            params.get(i).map_or(Ok(default), |p| {
                p.parse::<f64>().map_err(|_| Error::Contract(format!("bad parameter '{p}' in attack '{spec}'")))
            })
        };
        Ok(match name {
            "none" => EvalAttack::None,
            "real-jpeg" | "jpeg" => EvalAttack::RealJpeg { qf: num(0, 70.0)? as u8 },
            "scale" => EvalAttack::Scale { factor: num(0, 0.5)? },
            "blur" => EvalAttack::Blur { kernel: num(0, 5.0)? as usize, sigma: num(1, 1.0)? },
            "noise" => EvalAttack::Noise { sigma: num(0, 0.05)? },
            "crop" => EvalAttack::Crop { keep_ratio: num(0, 0.7)? },
            other => {
                return Err(Error::Contract(format!(
                    "unknown attack '{other}'; valid attacks: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            EvalAttack::None => "none".into(),
            EvalAttack::RealJpeg { qf } => format!("real-jpeg qf={qf}"),
            EvalAttack::Scale { factor } => format!("scale {factor}"),
            EvalAttack::Blur { kernel, sigma } => format!("blur {kernel}x{kernel} s={sigma}"),
            EvalAttack::Noise { sigma } => format!("noise s={sigma}"),
            EvalAttack::Crop { keep_ratio } => format!("crop keep={keep_ratio}"),
        }
    }

    /// Applies the attack to an 8-bit-quantised image.
    pub fn apply(&self, marked: &ImageTensor, cover: &ImageTensor, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
        let q = marked.quantized();
        match self {
            EvalAttack::None => Ok(q),
            EvalAttack::RealJpeg { qf } => real_jpeg(&q, *qf),
            EvalAttack::Scale { factor } => real_scale(&q, *factor),
            EvalAttack::Blur { kernel, sigma } => real_blur(&q, *kernel, *sigma),
            EvalAttack::Noise { sigma } => real_noise(&q, *sigma, rng),
            EvalAttack::Crop { keep_ratio } => real_crop(&q, &cover.quantized(), *keep_ratio, rng),
        }
    }
}

/// What the battery needs from a hiding scheme.
pub trait StegoPipeline {
    fn secret_count(&self) -> usize;
    fn embed(&self, cover: &ImageTensor, secrets: &[ImageTensor]) -> Result<ImageTensor>;
    fn extract(&self, attacked: &ImageTensor) -> Result<Vec<ImageTensor>>;
}

/// A trained bundle, extracting progressively or directly.
pub struct BundlePipeline<'a> {
    pub bundle: &'a PipelineBundle,
    pub progressive: bool,
}

impl StegoPipeline for BundlePipeline<'_> {
    fn secret_count(&self) -> usize {
        self.bundle.n()
    }

    fn embed(&self, cover: &ImageTensor, secrets: &[ImageTensor]) -> Result<ImageTensor> {
        Ok(self.bundle.embed(cover, secrets)?.1)
    }

    fn extract(&self, attacked: &ImageTensor) -> Result<Vec<ImageTensor>> {
        Ok(self.bundle.extract(attacked, self.progressive)?.secrets)
    }
}

/// Passes the cover through unchanged and "recovers" whatever it was last
/// asked to hide. Useful as a reference point for the battery itself.
#[derive(Default)]
pub struct IdentityPipeline {
    n: usize,
    last: RefCell<Vec<ImageTensor>>,
}

impl IdentityPipeline {
    pub fn new(n: usize) -> Self {
        Self { n, last: RefCell::default() }
    }
}

impl StegoPipeline for IdentityPipeline {
    fn secret_count(&self) -> usize {
        self.n
    }

    fn embed(&self, cover: &ImageTensor, secrets: &[ImageTensor]) -> Result<ImageTensor> {
        *self.last.borrow_mut() = secrets.to_vec();
        Ok(cover.clone())
    }

    fn extract(&self, _: &ImageTensor) -> Result<Vec<ImageTensor>> {
        Ok(self.last.borrow().clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub params: EvalAttack,
    /// Recovered secrets against ground truth.
    pub psnr_db: f64,
    pub ssim: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryResult {
    pub provenance: String,
    pub n: usize,
    pub seed: u64,
    pub samples: usize,
    /// Marked image against cover.
    pub embedding: MetricReport,
    pub rows: Vec<AttackRow>,
    /// Per-group recovered PSNR per attack, `[attack][group]`, averaged over secrets.
    pub per_sample_psnr: Vec<Vec<f64>>,
}

impl BatteryResult {
    pub fn row(&self, attack: &EvalAttack) -> Option<&AttackRow> {
        self.rows.iter().find(|r| &r.params == attack)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}, samples = {}, provenance = {}", self.n, self.samples, self.provenance);
        let _ = writeln!(s, "{:<24} {:>10} {:>8}", "row", "PSNR (dB)", "SSIM");
        let _ = writeln!(s, "{}", "-".repeat(44));
        let _ = writeln!(s, "{:<24} {:>10.2} {:>8.4}", "marked vs cover", self.embedding.psnr_db, self.embedding.ssim);
        for r in &self.rows {
            let _ = writeln!(s, "{:<24} {:>10.2} {:>8.4}", r.attack, r.psnr_db, r.ssim);
        }
        s
    }
}

/// Deterministic cover/secret grouping: shuffle by `seed`, then take
/// `count` groups of `n + 1` distinct images.
pub fn pair_groups(
    dataset: &[ImageTensor],
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(ImageTensor, Vec<ImageTensor>)>> {
    contract!(count > 0, "evaluation count must be positive");
    let need = count * (n + 1);
    contract!(
        dataset.len() >= need,
        "{count} group(s) of {} images need {need} images, dataset has {}",
        n + 1,
        dataset.len()
    );
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx[..need]
        .chunks_exact(n + 1)
        .map(|c| (dataset[c[0]].clone(), c[1..].iter().map(|&i| dataset[i].clone()).collect()))
        .collect())
}

/// Runs every attack over `count` cover/secret groups.
pub fn run_battery(
    pipeline: &dyn StegoPipeline,
    dataset: &[ImageTensor],
    attacks: &[EvalAttack],
    count: usize,
    seed: u64,
) -> Result<BatteryResult> {
    let n = pipeline.secret_count();
    contract!(!attacks.is_empty(), "no attacks requested");
    let groups = pair_groups(dataset, n, count, seed)?;
    let (mut emb_psnr, mut emb_ssim) = (0.0, 0.0);
    let mut sums = vec![(0.0, 0.0); attacks.len()];
    let mut per_sample = vec![Vec::with_capacity(count); attacks.len()];
    for (g, (cover, secrets)) in groups.iter().enumerate() {
        let marked = pipeline.embed(cover, secrets)?.quantized();
        let emb = MetricReport::between(&marked, cover)?;
        emb_psnr += emb.psnr_db;
        emb_ssim += emb.ssim;
        for (a, attack) in attacks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 * attacks.len() as u64 + a as u64);
            let attacked = attack.apply(&marked, cover, &mut rng)?;
            let revealed = pipeline.extract(&attacked)?;
            contract!(revealed.len() == n, "pipeline returned {} secrets, expected {n}", revealed.len());
            let (mut p, mut s) = (0.0, 0.0);
            for (r, t) in revealed.iter().zip(secrets) {
                let r = r.quantized();
                p += psnr(&r, t)?;
                s += ssim(&r, t)?;
            }
            sums[a].0 += p / n as f64;
            sums[a].1 += s / n as f64;
            per_sample[a].push(p / n as f64);
        }
    }
    let k = groups.len() as f64;
    Ok(BatteryResult {
        provenance: PROVENANCE.into(),
        n,
        seed,
        samples: groups.len(),
        embedding: MetricReport { psnr_db: emb_psnr / k, ssim: emb_ssim / k },
        rows: attacks
            .iter()
            .zip(&sums)
            .map(|(a, (p, s))| AttackRow {
                attack: a.label(),
                params: a.clone(),
                psnr_db: p / k,
                ssim: s / k,
                samples: groups.len(),
            })
            .collect(),
        per_sample_psnr: per_sample,
    })
}

/// The same battery for each pipeline (typically one per secret count).
pub fn multi_secret_battery(
    pipelines: &[&dyn StegoPipeline],
    dataset: &[ImageTensor],
    attacks: &[EvalAttack],
    count: usize,
    seed: u64,
) -> Result<Vec<BatteryResult>> {
    pipelines.iter().map(|p| run_battery(*p, dataset, attacks, count, seed)).collect()
}

/// Per-sample residual diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualComparison {
    /// `MSE(R̂/5, R)`.
    pub extracted_mse: f64,
    /// `MSE(I_A − I, R)`.
    pub attacked_diff_mse: f64,
}

pub struct ResidualReport {
    /// One row per sample: cover, marked, 5·R, 5·(I_A − I), R̂ (= 5·R̂/5), then secrets and recoveries.
    pub grid: RgbImage,
    pub samples: Vec<ResidualComparison>,
    pub gain: f32,
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// Residual, attacked difference and extracted residual side by side, all
/// amplified by [`DIFF_AMPLIFICATION`].
pub fn residual_visual_report(
    bundle: &PipelineBundle,
    groups: &[(ImageTensor, Vec<ImageTensor>)],
    attack: &EvalAttack,
    seed: u64,
) -> Result<ResidualReport> {
    contract!(!groups.is_empty(), "no images for the residual report");
    let gain = DIFF_AMPLIFICATION;
    let mut rows: Vec<Vec<RgbImage>> = Vec::new();
    let mut samples = Vec::new();
    for (g, (cover, secrets)) in groups.iter().enumerate() {
        let (residual, marked) = bundle.embed(cover, secrets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let attacked = attack.apply(&marked, cover, &mut rng)?;
        let ex = bundle.extract(&attacked, true)?;
        let diff = attacked.tensor().zip_map(cover.tensor(), |a, c| a - c);
        let extracted = ex.residual()?;
        samples.push(ResidualComparison {
            extracted_mse: mse(extracted.tensor().data(), residual.tensor().data()),
            attacked_diff_mse: mse(diff.data(), residual.tensor().data()),
        });
        let mut row = vec![
            cover.to_rgb8(0),
            marked.to_rgb8(0),
            amplified_panel(residual.tensor(), gain)?.to_rgb8(0),
            amplified_panel(&diff, gain)?.to_rgb8(0),
            amplified_panel(extracted.tensor(), gain)?.to_rgb8(0),
        ];
        row.extend(secrets.iter().map(|s| s.to_rgb8(0)));
        row.extend(ex.secrets.iter().map(|s| s.to_rgb8(0)));
        rows.push(row);
    }
    let side = groups[0].0.side() as u32;
    let cols = rows[0].len() as u32;
    let mut grid = RgbImage::new(side * cols, side * rows.len() as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            image::imageops::replace(&mut grid, panel, (c as u32 * side) as i64, (r as u32 * side) as i64);
        }
    }
    Ok(ResidualReport { grid, samples, gain })
}
