use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackMode, JpegSimulator};
use crate::error::{contract, Result};
use crate::networks::BundleSpec;
use crate::optim::AdamConfig;

use super::LossWeights;

/// Which attack mode each step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackSchedule {
    /// Even steps jpeg-only, odd steps jpeg-then-other.
    Alternate,
    JpegOnly,
    JpegThenOther,
    /// Identity attack layer.
    Disabled,
}

impl AttackSchedule {
    pub fn mode_for(self, step: u64) -> Option<AttackMode> {
        match self {
            AttackSchedule::Alternate if step.is_multiple_of(2) => Some(AttackMode::JpegOnly),
            AttackSchedule::Alternate => Some(AttackMode::JpegThenOther),
            AttackSchedule::JpegOnly => Some(AttackMode::JpegOnly),
            AttackSchedule::JpegThenOther => Some(AttackMode::JpegThenOther),
            AttackSchedule::Disabled => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Reveal straight from the attacked image, skipping the decoupler.
    pub no_progressive: bool,
    /// Drop both discriminators and their loss terms.
    pub no_discriminators: bool,
    /// Single-encoder embedder fed channel-concatenated inputs.
    pub plain_unet: bool,
    /// One fixed JPEG simulator instead of the mixture.
    pub legacy_jpeg: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub image_side: usize,
    pub seed: u64,
    pub schedule: AttackSchedule,
    /// Save a checkpoint every this many steps; 0 saves only the first and last.
    pub checkpoint_every: u64,
    /// Validation interval in steps; 0 disables periodic validation.
    pub eval_every: u64,
    pub val_count: usize,
    pub legacy_simulator: JpegSimulator,
    pub legacy_qf: u8,
    pub weights: LossWeights,
    pub ablations: Ablations,
    pub network: BundleSpec,
    pub attack: AttackConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 2e-4,
            steps: 10_000,
            image_side: 256,
            seed: 0,
            schedule: AttackSchedule::Alternate,
            checkpoint_every: 1000,
            eval_every: 500,
            val_count: 8,
            legacy_simulator: JpegSimulator::Mask,
            legacy_qf: 50,
            weights: LossWeights::default(),
            ablations: Ablations::default(),
            network: BundleSpec::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.batch_size >= 1, "batch_size must be >= 1");
        contract!(self.learning_rate.is_finite() && self.learning_rate > 0.0, "learning_rate must be > 0");
        self.weights.validate()?;
        self.bundle_spec().validate()?;
        let step = 1usize << self.network.depth;
        contract!(
            self.image_side.is_multiple_of(step) && self.image_side >= 2 * step,
            "image_side {} must be a multiple of {step} and at least {}",
            self.image_side,
            2 * step
        );
        contract!(self.image_side.is_multiple_of(8), "image_side must be a multiple of 8 for the JPEG simulators");
        self.attack_config().validate()
    }

    /// Network spec after ablations.
    pub fn bundle_spec(&self) -> BundleSpec {
        BundleSpec {
            plain_unet: self.network.plain_unet || self.ablations.plain_unet,
            discriminators: self.network.discriminators && !self.ablations.no_discriminators,
            ..self.network.clone()
        }
    }

    /// Loss weights after ablations.
    pub fn loss_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.bundle_spec().discriminators {
            w.alpha = 0.0;
            w.beta = 0.0;
        }
        if self.ablations.no_progressive {
            w.gamma = 0.0;
        }
        w
    }

    /// Attack configuration after ablations.
    pub fn attack_config(&self) -> AttackConfig {
        if self.ablations.legacy_jpeg {
            AttackConfig {
                jpeg_simulators: vec![self.legacy_simulator],
                qf_choices: vec![self.legacy_qf],
                jpeg_mix_weights: Vec::new(),
                ..self.attack.clone()
            }
        } else {
            self.attack.clone()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..Default::default() }
    }

    pub fn progressive(&self) -> bool {
        !self.ablations.no_progressive
    }

    pub fn to_toml_string(&self) -> Result<String> {
        crate::config::to_toml(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.learning_rate), (4, 2e-4));
        assert_eq!((c.weights.alpha, c.weights.beta, c.weights.gamma), (0.05, 0.05, 1.5));
        c.validate().unwrap();
    }

    #[test]
    fn ablations_rewrite_effective_settings() {
        let c = TrainConfig {
            ablations: Ablations { no_progressive: true, no_discriminators: true, plain_unet: true, legacy_jpeg: true },
            ..Default::default()
        };
        let w = c.loss_weights();
        assert_eq!((w.alpha, w.beta, w.gamma), (0.0, 0.0, 0.0));
        assert!(c.bundle_spec().plain_unet && !c.bundle_spec().discriminators);
        assert_eq!(c.attack_config().mix_terms().unwrap().len(), 1);
    }

    #[test]
    fn schedule_alternates() {
        let s = AttackSchedule::Alternate;
        assert_eq!(s.mode_for(0), Some(AttackMode::JpegOnly));
        assert_eq!(s.mode_for(1), Some(AttackMode::JpegThenOther));
        assert_eq!(AttackSchedule::Disabled.mode_for(3), None);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { image_side: 40, ..Default::default() }.validate().is_err());
    }
}
