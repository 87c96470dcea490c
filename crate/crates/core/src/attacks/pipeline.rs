//! The attacking layer used during training.
//!
//! JPEG is always applied first. In [`AttackMode::JpegThenOther`] every
//! quality factor of the mixture is pinned to `composition_qf` and exactly
//! one further attack, chosen uniformly from the enabled set, follows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

use super::config::{AttackConfig, MixTerm, OtherAttack};
use super::jpeg::jpeg_mixup_terms;
use super::simple::{gaussian_blur, gaussian_noise, random_crop, random_scale, CropRect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    JpegOnly,
    JpegThenOther,
}

/// One applied stage, with the parameters actually drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum AttackStage {
    Jpeg { terms: Vec<MixTerm> },
    /// `sigma` as a fraction of full scale.
    Noise { sigma: f64 },
    Blur { kernel: usize, sigma: f64 },
    Scale { factor: f64 },
    Crop { keep_ratio: f64, rects: Vec<CropRect> },
}

impl AttackStage {
    pub fn name(&self) -> &'static str {
        match self {
            AttackStage::Jpeg { .. } => "jpeg",
            AttackStage::Noise { .. } => "noise",
            AttackStage::Blur { .. } => "blur",
            AttackStage::Scale { .. } => "scale",
            AttackStage::Crop { .. } => "crop",
        }
    }
}

/// Record of what a pipeline invocation did, in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub mode: Option<AttackMode>,
    pub stages: Vec<AttackStage>,
}

fn sample(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi { lo } else { rng.random_range(lo..=hi) }
}

fn sample_kernel(rng: &mut impl Rng, [lo, hi]: [usize; 2]) -> usize {
    let odd: Vec<usize> = (lo..=hi).filter(|k| k % 2 == 1).collect();
    odd[rng.random_range(0..odd.len())]
}

/// Applies one non-JPEG attack with parameters drawn from `config`.
pub fn apply_other<T: Element>(
    x: &Var<T>,
    cover: &Var<T>,
    attack: OtherAttack,
    config: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<(Var<T>, AttackStage)> {
    Ok(match attack {
        OtherAttack::Noise => {
            let sigma = sample(rng, config.noise_sigma_range);
            // full-scale fraction → tensor units
            (gaussian_noise(x, 2.0 * sigma, rng)?, AttackStage::Noise { sigma })
        }
        OtherAttack::Blur => {
            let kernel = sample_kernel(rng, config.blur_kernel_range);
            let sigma = sample(rng, config.blur_sigma_range);
            (gaussian_blur(x, kernel, sigma)?, AttackStage::Blur { kernel, sigma })
        }
        OtherAttack::Scale => {
            let factor = sample(rng, config.scale_factor_range);
            (random_scale(x, factor)?, AttackStage::Scale { factor })
        }
        OtherAttack::Crop => {
            let keep_ratio = sample(rng, config.crop_keep_ratio_range);
            let (out, rects) = random_crop(x, cover, keep_ratio, rng)?;
            (out, AttackStage::Crop { keep_ratio, rects })
        }
    })
}

/// Attacks `marked` according to `mode`; `cover` supplies cropout fill.
pub fn attack_pipeline<T: Element>(
    marked: &Var<T>,
    cover: &Var<T>,
    config: &AttackConfig,
    rng: &mut impl Rng,
    mode: AttackMode,
) -> Result<(Var<T>, AttackTrace)> {
    config.validate()?;
    let mut trace = AttackTrace { mode: Some(mode), stages: Vec::new() };
    match mode {
        AttackMode::JpegOnly => {
            let terms = config.mix_terms()?;
            let out = jpeg_mixup_terms(marked, &terms)?;
            trace.stages.push(AttackStage::Jpeg { terms });
            Ok((out, trace))
        }
        AttackMode::JpegThenOther => {
            if config.enabled_attacks.is_empty() {
                return Err(Error::Contract("jpeg-then-other mode needs at least one enabled attack".into()));
            }
            let terms = config.composition_terms()?;
            let jpeg = jpeg_mixup_terms(marked, &terms)?;
            trace.stages.push(AttackStage::Jpeg { terms });
            let pick = config.enabled_attacks[rng.random_range(0..config.enabled_attacks.len())];
            let (out, stage) = apply_other(&jpeg, cover, pick, config, rng)?;
            trace.stages.push(stage);
            Ok((out, trace))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{jpeg_mask, JpegSimulator};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> Var<f32> {
        Var::constant(Tensor::from_fn(&[2, 3, 16, 16], |i| ((i as f32) * 0.071).sin() * 0.8))
    }

    #[test]
    fn identity_second_stage_equals_qf90_simulator() {
        let cfg = AttackConfig {
            enabled_attacks: vec![OtherAttack::Scale],
            scale_factor_range: [1.0, 1.0],
            ..AttackConfig::single_jpeg(JpegSimulator::Mask, 30)
        };
        let x = img();
        let (out, trace) =
            attack_pipeline(&x, &x, &cfg, &mut ChaCha8Rng::seed_from_u64(0), AttackMode::JpegThenOther).unwrap();
        assert_eq!(out.value(), jpeg_mask(&x, 90).unwrap().value());
        assert_eq!(trace.stages.len(), 2);
    }

    #[test]
    fn jpeg_only_full_mask_is_identity() {
        let cfg = AttackConfig::single_jpeg(JpegSimulator::Mask, 100);
        let x = img();
        let (out, trace) =
            attack_pipeline(&x, &x, &cfg, &mut ChaCha8Rng::seed_from_u64(0), AttackMode::JpegOnly).unwrap();
        assert!(out.value().max_abs_diff(x.value()) < 1e-5);
        assert_eq!(trace.stages.len(), 1);
    }

    #[test]
    fn empty_attack_set_is_rejected() {
        let cfg = AttackConfig { enabled_attacks: vec![], ..Default::default() };
        let x = img();
        let r = attack_pipeline(&x, &x, &cfg, &mut ChaCha8Rng::seed_from_u64(0), AttackMode::JpegThenOther);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = AttackConfig::default();
        let x = img();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..6)
                .map(|_| attack_pipeline(&x, &x, &cfg, &mut rng, AttackMode::JpegThenOther).unwrap().0.value().clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }
}
