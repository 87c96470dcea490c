use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::JpegSimulator;

/// Non-JPEG distortions applied after the JPEG stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtherAttack {
    Noise,
    Blur,
    Scale,
    Crop,
}

impl OtherAttack {
    pub const ALL: [OtherAttack; 4] = [OtherAttack::Noise, OtherAttack::Blur, OtherAttack::Scale, OtherAttack::Crop];

    pub fn name(self) -> &'static str {
        match self {
            OtherAttack::Noise => "noise",
            OtherAttack::Blur => "blur",
            OtherAttack::Scale => "scale",
            OtherAttack::Crop => "crop",
        }
    }
}

/// One `(simulator, quality factor, weight)` term of the JPEG mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixTerm {
    pub simulator: JpegSimulator,
    pub qf: u8,
    pub weight: f64,
}

/// Attack layer configuration.
///
/// Noise sigma is expressed as a fraction of full scale (the full `[-1, 1]`
/// span), so `0.1` means a standard deviation of 25.5 eight-bit levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub jpeg_simulators: Vec<JpegSimulator>,
    pub qf_choices: Vec<u8>,
    /// Row-major `[simulator][qf]` weights. Empty means uniform.
    pub jpeg_mix_weights: Vec<f64>,
    pub composition_qf: u8,
    pub enabled_attacks: Vec<OtherAttack>,
    pub noise_sigma_range: [f64; 2],
    pub blur_kernel_range: [usize; 2],
    pub blur_sigma_range: [f64; 2],
    pub scale_factor_range: [f64; 2],
    pub crop_keep_ratio_range: [f64; 2],
    pub rng_seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            jpeg_simulators: JpegSimulator::ALL.to_vec(),
            qf_choices: vec![10, 30, 50, 70, 90],
            jpeg_mix_weights: Vec::new(),
            composition_qf: 90,
            enabled_attacks: OtherAttack::ALL.to_vec(),
            noise_sigma_range: [0.0, 0.1],
            blur_kernel_range: [3, 7],
            blur_sigma_range: [0.5, 2.0],
            scale_factor_range: [0.5, 2.0],
            crop_keep_ratio_range: [0.5, 1.0],
            rng_seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::Config(format!("{name} = {r:?} must satisfy {lo} <= lo <= hi <= {hi}")));
    }
    Ok(())
}

impl AttackConfig {
    /// Single simulator at a single quality factor.
    pub fn single_jpeg(simulator: JpegSimulator, qf: u8) -> Self {
        Self { jpeg_simulators: vec![simulator], qf_choices: vec![qf], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jpeg_simulators.is_empty() || self.qf_choices.is_empty() {
            return Err(Error::Config("at least one JPEG simulator and one quality factor required".into()));
        }
        for &qf in self.qf_choices.iter().chain(std::iter::once(&self.composition_qf)) {
            if !(10..=100).contains(&qf) {
                return Err(Error::Config(format!("quality factor {qf} outside [10, 100]")));
            }
        }
        let pairs = self.jpeg_simulators.len() * self.qf_choices.len();
        if !self.jpeg_mix_weights.is_empty() {
            if self.jpeg_mix_weights.len() != pairs {
                return Err(Error::Config(format!(
                    "jpeg_mix_weights has {} entries, expected {pairs} (simulators x qf_choices)",
                    self.jpeg_mix_weights.len()
                )));
            }
            check_weights(&self.jpeg_mix_weights)?;
        }
        check_range("noise_sigma_range", self.noise_sigma_range, 0.0, 1.0)?;
        check_range("blur_sigma_range", self.blur_sigma_range, 0.0, 100.0)?;
        check_range("scale_factor_range", self.scale_factor_range, 0.5, 2.0)?;
        check_range("crop_keep_ratio_range", self.crop_keep_ratio_range, 0.0, 1.0)?;
        if self.crop_keep_ratio_range[1] <= 0.0 {
            return Err(Error::Config("crop_keep_ratio_range must reach above 0".into()));
        }
        let [k0, k1] = self.blur_kernel_range;
        if k0 > k1 || k0 == 0 || (k0..=k1).all(|k| k % 2 == 0) {
            return Err(Error::Config(format!("blur_kernel_range {:?} contains no odd size", self.blur_kernel_range)));
        }
        Ok(())
    }

    /// Resolved mixture over every `(simulator, qf)` pair.
    pub fn mix_terms(&self) -> Result<Vec<MixTerm>> {
        self.validate()?;
        let pairs = self.jpeg_simulators.len() * self.qf_choices.len();
        let uniform = 1.0 / pairs as f64;
        let mut terms = Vec::with_capacity(pairs);
        for (si, &simulator) in self.jpeg_simulators.iter().enumerate() {
            for (qi, &qf) in self.qf_choices.iter().enumerate() {
                let weight = if self.jpeg_mix_weights.is_empty() {
                    uniform
                } else {
                    self.jpeg_mix_weights[si * self.qf_choices.len() + qi]
                };
                terms.push(MixTerm { simulator, qf, weight });
            }
        }
        Ok(terms)
    }

    /// Mixture with every quality factor replaced by `composition_qf`.
    pub fn composition_terms(&self) -> Result<Vec<MixTerm>> {
        let qf = self.composition_qf;
        Ok(merge_terms(
            &self.mix_terms()?.into_iter().map(|t| MixTerm { qf, ..t }).collect::<Vec<_>>(),
        ))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Contract(format!("mixture weights must be finite and >= 0: {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("mixture weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Combines duplicate `(simulator, qf)` pairs and drops zero weights,
/// keeping first-occurrence order.
pub fn merge_terms(terms: &[MixTerm]) -> Vec<MixTerm> {
    let mut merged: Vec<MixTerm> = Vec::new();
    for t in terms {
        match merged.iter_mut().find(|m| m.simulator == t.simulator && m.qf == t.qf) {
            Some(m) => m.weight += t.weight,
            None => merged.push(*t),
        }
    }
    merged.retain(|t| t.weight != 0.0);
    merged
}
