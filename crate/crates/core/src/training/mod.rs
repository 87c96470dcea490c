//! Losses and the adversarial training loop.

mod config;
mod losses;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_pipeline, real_jpeg, AttackMode};
use crate::checkpoint::Checkpoint;
use crate::error::{contract, Error, Result};
use crate::imaging::ImageTensor;
use crate::metrics::{psnr, ssim};
use crate::networks::{PipelineBundle, Role};
use crate::optim::Adam;
use crate::tensor::{Tensor, Var};

pub use config::{Ablations, AttackSchedule, TrainConfig};
pub use losses::{
    lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss, residual_loss, scalar, total_generator_loss,
    LossParts, LossValue, LossWeights,
};

/// One training batch: covers and `n` aligned secret batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub cover: ImageTensor,
    pub secrets: Vec<ImageTensor>,
}

impl Batch {
    pub fn new(cover: ImageTensor, secrets: Vec<ImageTensor>) -> Result<Self> {
        contract!(!secrets.is_empty(), "a batch needs at least one secret");
        contract!(secrets.iter().all(|s| s.shape() == cover.shape()), "secret and cover batches differ in shape");
        Ok(Self { cover, secrets })
    }

    /// Draws `batch_size` groups of `n + 1` distinct images from `pool`;
    /// the first image of each group is the cover.
    pub fn sample(pool: &[ImageTensor], n: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let need = (n + 1) * batch_size;
        contract!(pool.len() >= need, "pool of {} images cannot fill {need} distinct slots", pool.len());
        let idx = sample(rng, pool.len(), need).into_vec();
        let pick = |slot: usize| -> Result<ImageTensor> {
            ImageTensor::stack(&(0..batch_size).map(|b| pool[idx[b * (n + 1) + slot]].clone()).collect::<Vec<_>>())
        };
        Self::new(pick(0)?, (1..=n).map(pick).collect::<Result<_>>()?)
    }

    pub fn size(&self) -> usize {
        self.cover.batch()
    }
}

/// Per-component losses of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub rec: f64,
    pub rec_marked: f64,
    pub rec_secret: f64,
    pub rec_cover: f64,
    pub residual: f64,
    pub dis_cover: f64,
    pub dis_secret: f64,
    pub d_cover: f64,
    pub d_secret: f64,
}

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mode: Option<AttackMode>,
    pub attacks: Vec<String>,
    pub losses: StepLosses,
    pub grad_norms: std::collections::BTreeMap<String, f64>,
    pub psnr_marked: f64,
    pub elapsed_ms: f64,
}

impl StepMetrics {
    /// Copy without wall-clock timing, for replay comparisons.
    pub fn without_timing(&self) -> Self {
        Self { elapsed_ms: 0.0, ..self.clone() }
    }
}

fn finite(name: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} at step {step}")))
    }
}

fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// Applies one Adam update to every role in `roles` from the gradients held
/// by `vars`; returns the gradient L2 norm per role.
fn update(
    bundle: &mut PipelineBundle,
    optimizers: &mut [(Role, Adam)],
    roles: &[Role],
    vars: &[(Role, Vec<Var<f32>>)],
    step: u64,
    norms: &mut std::collections::BTreeMap<String, f64>,
) -> Result<()> {
    for &role in roles {
        let Some((_, vs)) = vars.iter().find(|(r, _)| *r == role) else { continue };
        let grads: Vec<Option<Tensor<f32>>> = vs.iter().map(Var::grad).collect();
        if grads.iter().all(Option::is_none) {
            continue;
        }
        let norm = grads.iter().flatten().map(Tensor::sq_norm).sum::<f64>().sqrt();
        finite(&format!("gradient of {}", role.name()), step, norm)?;
        norms.insert(role.name().to_string(), norm);
        let adam = optimizers
            .iter_mut()
            .find(|(r, _)| *r == role)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Contract(format!("no optimiser for {}", role.name())))?;
        let params = bundle.params_mut(role).expect("bound role exists").values_mut();
        adam.step(params, &grads)?;
    }
    Ok(())
}

/// One discriminator update followed by one joint generator update.
///
/// `rng` drives batch-independent randomness (the attack layer); `step`
/// selects the attack mode.
pub fn train_step(
    bundle: &mut PipelineBundle,
    optimizers: &mut [(Role, Adam)],
    batch: &Batch,
    config: &TrainConfig,
    rng: &mut impl Rng,
    step: u64,
) -> Result<StepMetrics> {
    let started = Instant::now();
    contract!(batch.secrets.len() == bundle.n(), "batch holds {} secrets, bundle expects {}", batch.secrets.len(), bundle.n());
    let weights = config.loss_weights();
    let attack = config.attack_config();
    let progressive = config.progressive();
    let adversarial = bundle.disc_cover().is_some() && (weights.alpha > 0.0 || weights.beta > 0.0);
    let mode = config.schedule.mode_for(step);

    let cover = batch.cover.constant();
    let secrets: Vec<Var<f32>> = batch.secrets.iter().map(ImageTensor::constant).collect();

    // generator forward
    let g = bundle.bind(&Role::GENERATORS);
    let (residual, marked) = g.embed(&cover, &secrets)?;
    let (attacked, attacks) = match mode {
        Some(m) => {
            let (a, trace) = attack_pipeline(&marked, &cover, &attack, rng, m)?;
            (a, trace.stages.iter().map(|s| s.name().to_string()).collect())
        }
        None => (marked.clone(), Vec::new()),
    };
    let (r_hat, c_hat) = if progressive {
        let (r, c) = g.decouple(&attacked)?;
        (Some(r), Some(c))
    } else {
        (None, None)
    };
    let revealed = g.reveal(r_hat.as_ref().unwrap_or(&attacked))?;
    let gen_vars: Vec<(Role, Vec<Var<f32>>)> =
        vec![(Role::Embedder, g.embedder.clone()), (Role::Decoupler, g.decoupler.clone()), (Role::Revealer, g.revealer.clone())];
    drop(g);

    let mut losses = StepLosses::default();
    let mut grad_norms = std::collections::BTreeMap::new();

    // discriminators first, on detached fakes
    let real_secrets = Var::cat(&secrets, 0);
    if adversarial {
        let d = bundle.bind(&Role::DISCRIMINATORS);
        let fake_secrets = Var::cat(&revealed.iter().map(Var::detach).collect::<Vec<_>>(), 0);
        let d_cover = lsgan_discriminator_loss(&d.score_cover(&cover)?, &d.score_cover(&marked.detach())?);
        let d_secret = lsgan_discriminator_loss(&d.score_secret(&real_secrets)?, &d.score_secret(&fake_secrets)?);
        losses.d_cover = finite("discriminator loss (cover)", step, scalar(&d_cover))?;
        losses.d_secret = finite("discriminator loss (secret)", step, scalar(&d_secret))?;
        Var::sum_all(&[d_cover, d_secret]).backward();
        let disc_vars = vec![(Role::DiscCover, d.disc_cover.clone()), (Role::DiscSecret, d.disc_secret.clone())];
        drop(d);
        update(bundle, optimizers, &Role::DISCRIMINATORS, &disc_vars, step, &mut grad_norms)?;
    }

    // generator objective against the updated discriminators
    let rec = reconstruction_loss(&cover, &marked, &secrets, &revealed, c_hat.as_ref())?;
    let ls = match &r_hat {
        Some(r) => residual_loss(&residual.detach(), r, weights.residual_gain)?,
        None => losses::zero(),
    };
    let (dis_c, dis_s) = if adversarial {
        let d = bundle.frozen();
        let fake_secrets = Var::cat(&revealed, 0);
        (lsgan_generator_loss(&d.score_cover(&marked)?), lsgan_generator_loss(&d.score_secret(&fake_secrets)?))
    } else {
        (losses::zero(), losses::zero())
    };
    let parts = LossParts { rec, dis_cover: dis_c, dis_secret: dis_s, residual: ls };
    let total = total_generator_loss(&parts, &weights);

    losses.rec = finite("reconstruction loss", step, scalar(&parts.rec))?;
    losses.residual = finite("residual loss", step, scalar(&parts.residual))?;
    losses.dis_cover = finite("adversarial loss (cover)", step, scalar(&parts.dis_cover))?;
    losses.dis_secret = finite("adversarial loss (secret)", step, scalar(&parts.dis_secret))?;
    losses.total = finite("total generator loss", step, scalar(&total))?;
    losses.rec_marked = mse(marked.value(), cover.value());
    losses.rec_secret =
        secrets.iter().zip(&revealed).map(|(s, r)| mse(r.value(), s.value())).sum::<f64>() / secrets.len() as f64;
    losses.rec_cover = c_hat.as_ref().map_or(0.0, |c| mse(c.value(), cover.value()));

    total.backward();
    update(bundle, optimizers, &Role::GENERATORS, &gen_vars, step, &mut grad_norms)?;

    let psnr_marked = psnr(&ImageTensor::new(marked.value().clone())?, &batch.cover)?;
    Ok(StepMetrics {
        step,
        mode,
        attacks,
        losses,
        grad_norms,
        psnr_marked,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Random stream for step `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Bundle, optimiser state and position in the step sequence.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: PipelineBundle,
    pub optimizers: Vec<(Role, Adam)>,
    /// Number of completed steps.
    pub step: u64,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = PipelineBundle::new(config.bundle_spec(), config.seed)?;
        let optimizers = bundle
            .roles()
            .into_iter()
            .map(|r| (r, Adam::new(config.adam(), bundle.params(r).expect("role").values())))
            .collect();
        Ok(Self { bundle, optimizers, step: 0, config })
    }

    /// Continues from a checkpoint. The checkpoint's network must match the
    /// configuration.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        contract!(
            checkpoint.bundle.spec() == &config.bundle_spec(),
            "checkpoint network differs from the configured network"
        );
        let mut t = Self::new(config)?;
        t.bundle = checkpoint.bundle;
        for (role, adam) in checkpoint.optimizers {
            if let Some(slot) = t.optimizers.iter_mut().find(|(r, _)| *r == role) {
                slot.1 = adam;
            }
        }
        t.step = checkpoint.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            bundle: self.bundle.clone(),
            step: self.step,
            optimizers: self.optimizers.clone(),
            config: Some(serde_json::to_value(&self.config)?),
        })
    }

    /// Runs the next step on a batch drawn from `pool`.
    pub fn step_on(&mut self, pool: &[ImageTensor]) -> Result<StepMetrics> {
        let mut rng = step_rng(self.config.seed, self.step);
        let batch = Batch::sample(pool, self.bundle.n(), self.config.batch_size, &mut rng)?;
        self.step_with(&batch, &mut rng)
    }

    /// Runs the next step on a fixed batch.
    pub fn step_batch(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let mut rng = step_rng(self.config.seed, self.step);
        self.step_with(batch, &mut rng)
    }

    fn step_with(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<StepMetrics> {
        let m = train_step(&mut self.bundle, &mut self.optimizers, batch, &self.config, rng, self.step)?;
        self.step += 1;
        Ok(m)
    }
}

/// Cover/secret groups for validation and evaluation: consecutive runs of
/// `n + 1` images, the first being the cover.
pub fn groups(images: &[ImageTensor], n: usize) -> Vec<(ImageTensor, Vec<ImageTensor>)> {
    images.chunks_exact(n + 1).map(|c| (c[0].clone(), c[1..].to_vec())).collect()
}

/// Periodic validation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub samples: usize,
    pub psnr_marked: f64,
    pub ssim_marked: f64,
    pub psnr_secret_clean: f64,
    pub psnr_secret_jpeg90: f64,
}

/// Embedding and recovery quality on held-out groups.
pub fn validate(bundle: &PipelineBundle, images: &[ImageTensor], progressive: bool, step: u64) -> Result<ValidationRecord> {
    let gs = groups(images, bundle.n());
    contract!(!gs.is_empty(), "validation needs at least {} images", bundle.n() + 1);
    let (mut pm, mut sm, mut clean, mut jpeg) = (0.0, 0.0, 0.0, 0.0);
    let mut secrets_seen = 0.0;
    for (cover, secrets) in &gs {
        let (_, marked) = bundle.embed(cover, secrets)?;
        let marked = marked.quantized();
        pm += psnr(&marked, cover)?;
        sm += ssim(&marked, cover).unwrap_or(f64::NAN);
        let a = bundle.extract(&marked, progressive)?;
        let b = bundle.extract(&real_jpeg(&marked, 90)?, progressive)?;
        for (i, s) in secrets.iter().enumerate() {
            clean += psnr(&a.secrets[i], s)?;
            jpeg += psnr(&b.secrets[i], s)?;
            secrets_seen += 1.0;
        }
    }
    let k = gs.len() as f64;
    Ok(ValidationRecord {
        step,
        samples: gs.len(),
        psnr_marked: pm / k,
        ssim_marked: sm / k,
        psnr_secret_clean: clean / secrets_seen,
        psnr_secret_jpeg90: jpeg / secrets_seen,
    })
}

/// Data for [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<ImageTensor>,
    pub val: Vec<ImageTensor>,
}

/// Where [`train`] writes its outputs.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.jsonl")
    }

    pub fn validation(&self) -> PathBuf {
        self.0.join("validation.jsonl")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.0.join("checkpoints").join(format!("step-{step:08}.ckpt"))
    }

    pub fn latest(&self) -> PathBuf {
        self.0.join("latest.ckpt")
    }

    fn save(&self, trainer: &Trainer) -> Result<()> {
        let ck = trainer.checkpoint()?;
        let dir = self.0.join("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        ck.save(self.checkpoint(trainer.step))?;
        ck.save(self.latest())
    }
}

fn append_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub metrics: Vec<StepMetrics>,
    pub validations: Vec<ValidationRecord>,
}

/// Runs `trainer` up to `config.steps`, checkpointing and validating as
/// configured. Stops at the first non-finite loss or gradient.
pub fn train(trainer: &mut Trainer, data: &TrainData, out: Option<&RunDir>) -> Result<TrainSummary> {
    train_with(trainer, data, out, |_| {})
}

/// [`train`] with a per-step callback.
pub fn train_with(
    trainer: &mut Trainer,
    data: &TrainData,
    out: Option<&RunDir>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainSummary> {
    if let Some(dir) = out {
        fs::create_dir_all(&dir.0).map_err(|e| Error::io(&dir.0, e))?;
        if trainer.step == 0 {
            dir.save(trainer)?;
        }
    }
    let cfg = trainer.config.clone();
    let val: Vec<ImageTensor> = data.val.iter().take(cfg.val_count * (trainer.bundle.n() + 1)).cloned().collect();
    let mut summary = TrainSummary::default();
    while trainer.step < cfg.steps {
        let m = trainer.step_on(&data.train)?;
        on_step(&m);
        let done = trainer.step;
        if let Some(dir) = out {
            append_json(&dir.metrics(), &m)?;
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) && done < cfg.steps {
                dir.save(trainer)?;
            }
        }
        summary.metrics.push(m);
        if cfg.eval_every > 0 && done.is_multiple_of(cfg.eval_every) && val.len() > trainer.bundle.n() {
            let v = validate(&trainer.bundle, &val, cfg.progressive(), done)?;
            if let Some(dir) = out {
                append_json(&dir.validation(), &v)?;
            }
            summary.validations.push(v);
        }
    }
    if let Some(dir) = out {
        if !summary.metrics.is_empty() {
            dir.save(trainer)?;
        }
    }
    Ok(summary)
}
