//! The attacking layer: differentiable distortions for training and their
//! real-world counterparts for evaluation.

mod config;
pub mod dct;
pub mod gradcheck;
pub mod jpeg;
mod pipeline;
pub mod real;
pub mod simple;

use serde::{Deserialize, Serialize};

pub use config::{merge_terms, AttackConfig, MixTerm, OtherAttack};
pub use dct::{dct_8x8, idct_8x8};
pub use gradcheck::{gradient_check, GradCheckReport, GradOp};
pub use jpeg::{jpeg_mask, jpeg_mixup, jpeg_mixup_terms, jpeg_round_approx, jpeg_soft};
pub use pipeline::{apply_other, attack_pipeline, AttackMode, AttackStage, AttackTrace};
pub use real::real_jpeg;
pub use simple::{gaussian_blur, gaussian_noise, random_crop, random_scale, CropRect};

/// The three JPEG approximations mixed by [`jpeg_mixup`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JpegSimulator {
    /// Low-frequency zig-zag masking in the DCT domain.
    Mask,
    /// Quantisation through a cubic soft staircase.
    Soft,
    /// Quantisation with straight-through rounding.
    Round,
}

impl JpegSimulator {
    pub const ALL: [JpegSimulator; 3] = [JpegSimulator::Mask, JpegSimulator::Soft, JpegSimulator::Round];

    pub fn name(self) -> &'static str {
        match self {
            JpegSimulator::Mask => "mask",
            JpegSimulator::Soft => "soft",
            JpegSimulator::Round => "round",
        }
    }
}
