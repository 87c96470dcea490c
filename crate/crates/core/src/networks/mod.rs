//! Embedder, decoupler, revealer and the two patch discriminators.

mod params;
mod patchgan;
mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::imaging::{ImageTensor, DIFF_AMPLIFICATION};
use crate::tensor::Var;

pub use params::{Params, INIT_STD};
pub use patchgan::PatchGan;
pub use unet::UNet;

/// Residual image R, or its amplified estimate R̂. Same layout as an
/// [`ImageTensor`] but not confined to `[-1, 1]`.
pub type ResidualImage = ImageTensor;

pub const MAX_SECRETS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    Instance,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Relu,
}

/// Shape of one multi-branch U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub enc_branches: usize,
    pub dec_branches: usize,
    /// Channels consumed by each encoder branch.
    pub in_channels: usize,
    pub norm: Norm,
    pub activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            enc_branches: 1,
            dec_branches: 1,
            in_channels: 3,
            norm: Norm::Instance,
            activation: Activation::LeakyRelu,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        contract!(self.depth >= 1, "network depth must be >= 1");
        contract!(self.base_channels >= 1, "base_channels must be >= 1");
        contract!(self.enc_branches >= 1 && self.dec_branches >= 1, "branch counts must be >= 1");
        contract!(self.in_channels >= 1, "in_channels must be >= 1");
        Ok(())
    }

    /// Feature width at level `l`; doubles per level up to 8× the base.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level.min(3)
    }

    /// Smallest side the network accepts, and the required divisor.
    pub fn min_side(&self) -> usize {
        2 << self.depth
    }

    pub(crate) fn check_input(&self, shape: &[usize]) -> Result<()> {
        contract!(
            shape.len() == 4 && shape[1] == self.in_channels && shape[2] == shape[3],
            "expected [N, {}, S, S], got {shape:?}",
            self.in_channels
        );
        let side = shape[2];
        let step = 1 << self.depth;
        contract!(
            side.is_multiple_of(step) && side >= self.min_side(),
            "side {side} must be a multiple of {step} and at least {}",
            self.min_side()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub base_channels: usize,
    pub downsamplings: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { base_channels: 64, downsamplings: 3 }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        contract!(self.base_channels >= 1 && self.downsamplings >= 1, "invalid discriminator spec");
        Ok(())
    }

    pub fn score_side(&self, side: usize) -> usize {
        let mut s = side;
        for _ in 0..self.downsamplings {
            s = (s + 2 - 4) / 2 + 1;
        }
        // two stride-1, kernel-4, pad-1 layers each shrink the map by one
        s.saturating_sub(2)
    }
}

/// Everything needed to rebuild a [`PipelineBundle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleSpec {
    /// Number of secrets hidden per cover.
    pub n: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub norm: Norm,
    pub activation: Activation,
    pub disc_base_channels: usize,
    pub disc_downsamplings: usize,
    /// Residual bound as a fraction of full scale.
    pub residual_cap: f64,
    /// Single encoder fed channel-concatenated inputs.
    pub plain_unet: bool,
    pub discriminators: bool,
}

impl Default for BundleSpec {
    fn default() -> Self {
        Self {
            n: 1,
            depth: 4,
            base_channels: 32,
            norm: Norm::Instance,
            activation: Activation::LeakyRelu,
            disc_base_channels: 64,
            disc_downsamplings: 3,
            residual_cap: 0.2,
            plain_unet: false,
            discriminators: true,
        }
    }
}

impl BundleSpec {
    pub fn validate(&self) -> Result<()> {
        contract!((1..=MAX_SECRETS).contains(&self.n), "secret count {} outside [1, {MAX_SECRETS}]", self.n);
        contract!(
            self.residual_cap.is_finite() && self.residual_cap > 0.0 && self.residual_cap <= 1.0,
            "residual_cap must lie in (0, 1]"
        );
        self.embedder_spec().validate()?;
        self.disc_spec().validate()
    }

    fn generator(&self, enc: usize, dec: usize, in_channels: usize) -> NetworkSpec {
        NetworkSpec {
            depth: self.depth,
            base_channels: self.base_channels,
            enc_branches: enc,
            dec_branches: dec,
            in_channels,
            norm: self.norm,
            activation: self.activation,
        }
    }

    pub fn embedder_spec(&self) -> NetworkSpec {
        if self.plain_unet {
            self.generator(1, 1, 3 * (self.n + 1))
        } else {
            self.generator(self.n + 1, 1, 3)
        }
    }

    pub fn decoupler_spec(&self) -> NetworkSpec {
        self.generator(1, 2, 3)
    }

    pub fn revealer_spec(&self) -> NetworkSpec {
        self.generator(1, self.n, 3)
    }

    pub fn disc_spec(&self) -> PatchSpec {
        PatchSpec { base_channels: self.disc_base_channels, downsamplings: self.disc_downsamplings }
    }

    /// Residual bound in tensor units.
    pub fn residual_bound(&self) -> f64 {
        2.0 * self.residual_cap
    }
}

/// The five networks of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Embedder,
    Decoupler,
    Revealer,
    DiscCover,
    DiscSecret,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Embedder, Role::Decoupler, Role::Revealer, Role::DiscCover, Role::DiscSecret];
    pub const GENERATORS: [Role; 3] = [Role::Embedder, Role::Decoupler, Role::Revealer];
    pub const DISCRIMINATORS: [Role; 2] = [Role::DiscCover, Role::DiscSecret];

    pub fn name(self) -> &'static str {
        match self {
            Role::Embedder => "embedder",
            Role::Decoupler => "decoupler",
            Role::Revealer => "revealer",
            Role::DiscCover => "disc-cover",
            Role::DiscSecret => "disc-secret",
        }
    }

    fn seed_offset(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug)]
pub struct PipelineBundle {
    spec: BundleSpec,
    embedder: UNet,
    decoupler: UNet,
    revealer: UNet,
    disc_cover: Option<PatchGan>,
    disc_secret: Option<PatchGan>,
}

fn role_rng(seed: u64, role: Role) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ role.seed_offset().wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl PipelineBundle {
    /// Deterministic construction: the same spec and seed give identical weights.
    pub fn new(spec: BundleSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let embedder = UNet::new("embedder", spec.embedder_spec(), &mut role_rng(seed, Role::Embedder))?;
        let decoupler = UNet::new("decoupler", spec.decoupler_spec(), &mut role_rng(seed, Role::Decoupler))?;
        let revealer = UNet::new("revealer", spec.revealer_spec(), &mut role_rng(seed, Role::Revealer))?;
        let (disc_cover, disc_secret) = if spec.discriminators {
            (
                Some(PatchGan::new("disc-cover", spec.disc_spec(), &mut role_rng(seed, Role::DiscCover))?),
                Some(PatchGan::new("disc-secret", spec.disc_spec(), &mut role_rng(seed, Role::DiscSecret))?),
            )
        } else {
            (None, None)
        };
        Ok(Self { spec, embedder, decoupler, revealer, disc_cover, disc_secret })
    }

    pub fn spec(&self) -> &BundleSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn embedder(&self) -> &UNet {
        &self.embedder
    }

    pub fn decoupler(&self) -> &UNet {
        &self.decoupler
    }

    pub fn revealer(&self) -> &UNet {
        &self.revealer
    }

    pub fn disc_cover(&self) -> Option<&PatchGan> {
        self.disc_cover.as_ref()
    }

    pub fn disc_secret(&self) -> Option<&PatchGan> {
        self.disc_secret.as_ref()
    }

    /// Roles that exist in this bundle, in canonical order.
    pub fn roles(&self) -> Vec<Role> {
        Role::ALL.into_iter().filter(|r| self.params(*r).is_some()).collect()
    }

    pub fn params(&self, role: Role) -> Option<&Params> {
        match role {
            Role::Embedder => Some(self.embedder.params()),
            Role::Decoupler => Some(self.decoupler.params()),
            Role::Revealer => Some(self.revealer.params()),
            Role::DiscCover => self.disc_cover.as_ref().map(PatchGan::params),
            Role::DiscSecret => self.disc_secret.as_ref().map(PatchGan::params),
        }
    }

    pub fn params_mut(&mut self, role: Role) -> Option<&mut Params> {
        match role {
            Role::Embedder => Some(self.embedder.params_mut()),
            Role::Decoupler => Some(self.decoupler.params_mut()),
            Role::Revealer => Some(self.revealer.params_mut()),
            Role::DiscCover => self.disc_cover.as_mut().map(PatchGan::params_mut),
            Role::DiscSecret => self.disc_secret.as_mut().map(PatchGan::params_mut),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.roles().iter().filter_map(|r| self.params(*r)).map(Params::count).sum()
    }

    /// Binds parameters as graph leaves. Roles listed in `trainable` record
    /// gradients; the rest are frozen.
    pub fn bind(&self, trainable: &[Role]) -> Bound<'_> {
        let bind = |r: Role| self.params(r).map(|p| p.bind(trainable.contains(&r))).unwrap_or_default();
        Bound {
            bundle: self,
            embedder: bind(Role::Embedder),
            decoupler: bind(Role::Decoupler),
            revealer: bind(Role::Revealer),
            disc_cover: bind(Role::DiscCover),
            disc_secret: bind(Role::DiscSecret),
        }
    }

    /// Frozen binding for inference.
    pub fn frozen(&self) -> Bound<'_> {
        self.bind(&[])
    }

    pub fn embed(&self, cover: &ImageTensor, secrets: &[ImageTensor]) -> Result<(ResidualImage, ImageTensor)> {
        let secrets: Vec<Var<f32>> = secrets.iter().map(ImageTensor::constant).collect();
        let (r, m) = self.frozen().embed(&cover.constant(), &secrets)?;
        Ok((ImageTensor::from_var(&r)?, ImageTensor::from_var(&m)?))
    }

    /// `(R̂, Î)`: the amplified residual estimate and the recovered cover.
    pub fn decouple(&self, attacked: &ImageTensor) -> Result<(ResidualImage, ImageTensor)> {
        let (r, c) = self.frozen().decouple(&attacked.constant())?;
        Ok((ImageTensor::from_var(&r)?, ImageTensor::from_var(&c)?))
    }

    pub fn reveal(&self, residual_estimate: &ResidualImage) -> Result<Vec<ImageTensor>> {
        self.frozen().reveal(&residual_estimate.constant())?.iter().map(ImageTensor::from_var).collect()
    }

    /// Full extraction: decouple, then reveal (or reveal directly from the
    /// attacked image when `progressive` is false).
    pub fn extract(&self, attacked: &ImageTensor, progressive: bool) -> Result<Extraction> {
        let b = self.frozen();
        let x = attacked.constant();
        let (r_hat, cover) = b.decouple(&x)?;
        let source = if progressive { &r_hat } else { &x };
        let secrets = b.reveal(source)?.iter().map(ImageTensor::from_var).collect::<Result<_>>()?;
        Ok(Extraction {
            residual_estimate: ImageTensor::from_var(&r_hat)?,
            cover_estimate: ImageTensor::from_var(&cover)?,
            secrets,
        })
    }

    /// Patch scores of the chosen discriminator.
    pub fn discriminate(&self, role: Role, image: &ImageTensor) -> Result<crate::tensor::Tensor<f32>> {
        let b = self.frozen();
        let x = image.constant();
        Ok(match role {
            Role::DiscCover => b.score_cover(&x)?,
            Role::DiscSecret => b.score_secret(&x)?,
            other => return Err(Error::Contract(format!("{} is not a discriminator", other.name()))),
        }
        .value()
        .clone())
    }
}

/// Output of [`PipelineBundle::extract`].
#[derive(Clone, Debug)]
pub struct Extraction {
    /// R̂, targeting 5·R.
    pub residual_estimate: ResidualImage,
    pub cover_estimate: ImageTensor,
    pub secrets: Vec<ImageTensor>,
}

impl Extraction {
    /// R̂ scaled back to residual units.
    pub fn residual(&self) -> Result<ResidualImage> {
        ImageTensor::new(self.residual_estimate.tensor().map(|v| v / DIFF_AMPLIFICATION))
    }
}

/// A bundle whose parameters are bound into graph leaves for one step.
pub struct Bound<'a> {
    bundle: &'a PipelineBundle,
    pub embedder: Vec<Var<f32>>,
    pub decoupler: Vec<Var<f32>>,
    pub revealer: Vec<Var<f32>>,
    pub disc_cover: Vec<Var<f32>>,
    pub disc_secret: Vec<Var<f32>>,
}

impl Bound<'_> {
    pub fn vars(&self, role: Role) -> &[Var<f32>] {
        match role {
            Role::Embedder => &self.embedder,
            Role::Decoupler => &self.decoupler,
            Role::Revealer => &self.revealer,
            Role::DiscCover => &self.disc_cover,
            Role::DiscSecret => &self.disc_secret,
        }
    }

    /// `(R, I_M)` with `R = cap·tanh(E(I, S…))` and `I_M = clamp(I + R)`.
    pub fn embed(&self, cover: &Var<f32>, secrets: &[Var<f32>]) -> Result<(Var<f32>, Var<f32>)> {
        let spec = &self.bundle.spec;
        contract!(secrets.len() == spec.n, "bundle hides {} secret(s), got {}", spec.n, secrets.len());
        contract!(secrets.iter().all(|s| s.shape() == cover.shape()), "secret and cover shapes differ");
        let mut inputs = vec![cover.clone()];
        inputs.extend(secrets.iter().cloned());
        if spec.plain_unet {
            inputs = vec![Var::cat(&inputs, 1)];
        }
        let raw = self.bundle.embedder.forward(&self.embedder, &inputs)?.remove(0);
        let residual = raw.tanh().scale(spec.residual_bound());
        let marked = cover.add(&residual).clamp(-1.0, 1.0);
        Ok((residual, marked))
    }

    /// `(R̂, Î)` where R̂ = 5·tanh(head₁) and Î = tanh(head₂).
    pub fn decouple(&self, attacked: &Var<f32>) -> Result<(Var<f32>, Var<f32>)> {
        let mut heads = self.bundle.decoupler.forward(&self.decoupler, std::slice::from_ref(attacked))?;
        let cover = heads.pop().expect("two heads").tanh();
        let residual = heads.pop().expect("two heads").tanh().scale(DIFF_AMPLIFICATION as f64);
        Ok((residual, cover))
    }

    pub fn reveal(&self, source: &Var<f32>) -> Result<Vec<Var<f32>>> {
        Ok(self
            .bundle
            .revealer
            .forward(&self.revealer, std::slice::from_ref(source))?
            .iter()
            .map(Var::tanh)
            .collect())
    }

    pub fn score_cover(&self, x: &Var<f32>) -> Result<Var<f32>> {
        let d = self.bundle.disc_cover.as_ref().ok_or_else(|| Error::Contract("bundle has no discriminators".into()))?;
        d.forward(&self.disc_cover, x)
    }

    pub fn score_secret(&self, x: &Var<f32>) -> Result<Var<f32>> {
        let d = self.bundle.disc_secret.as_ref().ok_or_else(|| Error::Contract("bundle has no discriminators".into()))?;
        d.forward(&self.disc_secret, x)
    }
}
