//! Finite-difference verification of attack gradients.
//!
//! The scalar probed is `Σ w ⊙ op(x)` for a fixed random `w`. Random parts
//! of an attack (noise field, crop rectangle) are re-drawn from the same seed
//! on every evaluation so the op is a deterministic function of `x`.
//! Straight-through rounding is checked against its declared backward
//! semantics; coordinates whose ±h perturbation moves a soft-staircase input
//! across a rounding boundary are skipped and re-sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::imaging::ImageTensor;
use crate::tensor::{Tensor, Var};

use super::config::MixTerm;
use super::jpeg::{mixup_with, quantizer_inputs, simulate_with, Rounding};
use super::simple::{gaussian_blur, gaussian_noise, random_crop, random_scale};
use super::{AttackConfig, JpegSimulator};

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum GradOp {
    /// `sigma` in tensor units.
    Noise { sigma: f64 },
    Blur { kernel: usize, sigma: f64 },
    Scale { factor: f64 },
    JpegMask { qf: u8 },
    JpegSoft { qf: u8 },
    JpegRound { qf: u8 },
    Mixup { terms: Vec<MixTerm> },
    Crop { keep_ratio: f64 },
}

impl GradOp {
    pub const NAMES: [&'static str; 8] =
        ["noise", "blur", "scale", "jpeg-mask", "jpeg-soft", "jpeg-round", "mixup", "crop"];

    /// Default-parameter op by name.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "noise" => GradOp::Noise { sigma: 0.1 },
            "blur" => GradOp::Blur { kernel: 5, sigma: 1.0 },
            "scale" => GradOp::Scale { factor: 0.75 },
            "jpeg-mask" => GradOp::JpegMask { qf: 50 },
            "jpeg-soft" => GradOp::JpegSoft { qf: 70 },
            "jpeg-round" => GradOp::JpegRound { qf: 70 },
            "mixup" => GradOp::Mixup { terms: AttackConfig::default().mix_terms()? },
            "crop" => GradOp::Crop { keep_ratio: 0.6 },
            other => {
                return Err(Error::Contract(format!(
                    "unknown gradient-check op '{other}'; valid ops: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GradOp::Noise { .. } => "noise",
            GradOp::Blur { .. } => "blur",
            GradOp::Scale { .. } => "scale",
            GradOp::JpegMask { .. } => "jpeg-mask",
            GradOp::JpegSoft { .. } => "jpeg-soft",
            GradOp::JpegRound { .. } => "jpeg-round",
            GradOp::Mixup { .. } => "mixup",
            GradOp::Crop { .. } => "crop",
        }
    }

    /// Whether the op is linear in its input (away from the output clamp).
    pub fn is_linear(&self) -> bool {
        match self {
            GradOp::JpegSoft { .. } => false,
            GradOp::Mixup { terms } => terms.iter().all(|t| t.simulator != JpegSimulator::Soft),
            _ => true,
        }
    }

    /// Acceptance threshold for the maximum relative error.
    pub fn tolerance(&self) -> f64 {
        if self.is_linear() { 1e-3 } else { 1e-2 }
    }

    fn eval(&self, x: &Var<f64>, rounding: Rounding, seed: u64) -> Result<Var<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            GradOp::Noise { sigma } => gaussian_noise(x, *sigma, &mut rng),
            GradOp::Blur { kernel, sigma } => gaussian_blur(x, *kernel, *sigma),
            GradOp::Scale { factor } => random_scale(x, *factor),
            GradOp::JpegMask { qf } => simulate_with(x, JpegSimulator::Mask, *qf, rounding),
            GradOp::JpegSoft { qf } => simulate_with(x, JpegSimulator::Soft, *qf, rounding),
            GradOp::JpegRound { qf } => simulate_with(x, JpegSimulator::Round, *qf, rounding),
            GradOp::Mixup { terms } => mixup_with(x, terms, rounding),
            GradOp::Crop { keep_ratio } => {
                let cover = Var::constant(Tensor::from_fn(x.shape(), |i| ((i % 17) as f64 / 17.0) - 0.5));
                Ok(random_crop(x, &cover, *keep_ratio, &mut rng)?.0)
            }
        }
    }

    /// Forward pass on an image, clamped back to range.
    pub fn simulate(&self, x: &ImageTensor, seed: u64) -> Result<ImageTensor> {
        let y = self.eval(&Var::constant(x.tensor().cast::<f64>()), Rounding::Native, seed)?;
        Ok(ImageTensor::new(y.value().cast::<f32>())?.clamped())
    }

    fn soft_qfs(&self) -> Vec<u8> {
        match self {
            GradOp::JpegSoft { qf } => vec![*qf],
            GradOp::Mixup { terms } => {
                let mut q: Vec<u8> =
                    terms.iter().filter(|t| t.simulator == JpegSimulator::Soft && t.weight != 0.0).map(|t| t.qf).collect();
                q.dedup();
                q
            }
            _ => Vec::new(),
        }
    }

    fn crosses_boundary(&self, lo: &Tensor<f64>, hi: &Tensor<f64>) -> Result<bool> {
        for qf in self.soft_qfs() {
            let a = quantizer_inputs(lo, qf)?;
            let b = quantizer_inputs(hi, qf)?;
            if a.iter().zip(&b).any(|(u, v)| u.round() != v.round()) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic input gradient of `op` with central differences at
/// `trials` random coordinates of `x`.
pub fn gradient_check(op: &GradOp, x: &Tensor<f64>, trials: usize, seed: u64) -> Result<GradCheckReport> {
    contract!(trials > 0, "gradient check needs at least one trial");
    contract!(x.shape().len() == 4, "gradient check needs a [N, 3, S, S] input");
    let op_seed = seed.wrapping_add(0x9e37_79b9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let probe = op.eval(&Var::constant(x.clone()), Rounding::Native, op_seed)?;
    let weights = Tensor::from_fn(probe.shape(), |_| rng.random_range(-1.0..1.0));
    let objective = |v: &Var<f64>, rounding| -> Result<f64> {
        Ok(op.eval(v, rounding, op_seed)?.mul_const(&weights).sum().value().item())
    };

    let leaf = Var::param(x.clone());
    op.eval(&leaf, Rounding::Native, op_seed)?.mul_const(&weights).sum().backward();
    let analytic = leaf.grad().ok_or_else(|| Error::Contract("op is not connected to its input".into()))?;

    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let budget = trials * 50;
    while checked < trials {
        if checked + skipped >= budget {
            return Err(Error::Contract(format!(
                "{}: could not find {trials} smooth coordinates ({skipped} skipped)",
                op.name()
            )));
        }
        let j = rng.random_range(0..x.len());
        let mut plus = x.clone();
        plus.data_mut()[j] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[j] -= FD_STEP;
        if op.crosses_boundary(&minus, &plus)? {
            skipped += 1;
            continue;
        }
        let fd = (objective(&Var::constant(plus), Rounding::Surrogate)?
            - objective(&Var::constant(minus), Rounding::Surrogate)?)
            / (2.0 * FD_STEP);
        let an = analytic.data()[j];
        let scale = an.abs().max(fd.abs());
        let rel = if scale < 1e-10 { 0.0 } else { (an - fd).abs() / scale };
        worst = worst.max(rel);
        checked += 1;
    }
    let tolerance = op.tolerance();
    Ok(GradCheckReport {
        op: op.name().to_string(),
        checked,
        skipped,
        max_rel_error: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}

/// Smooth test input in `[-0.5, 0.5]`, away from every clamp boundary.
pub fn probe_input(side: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    Tensor::from_fn(&[1, 3, side, side], |i| {
        let (c, y, x) = (i / (side * side), (i / side) % side, i % side);
        let (fy, fx) = (y as f64 / side as f64, x as f64 / side as f64);
        0.3 * (7.0 * fx + phases[c]).sin() * (5.0 * fy + phases[c + 3]).cos() + 0.15 * ((x * 3 + y * 5 + c) % 7) as f64 / 7.0
            - 0.05
    })
}
