pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use attacks::{AttackConfig, AttackMode, JpegSimulator, OtherAttack};
pub use checkpoint::Checkpoint;
pub use dataset::{DatasetManifest, Split, SplitFractions};
pub use error::{Error, Result};
pub use evaluation::{run_battery, BatteryResult, EvalAttack, StegoPipeline};
pub use imaging::{load_image, save_image, ImageTensor};
pub use metrics::{psnr, ssim, MetricReport};
pub use networks::{BundleSpec, NetworkSpec, PipelineBundle, ResidualImage, Role};
pub use tensor::{Element, Tensor, Var};
pub use training::{LossWeights, TrainConfig, Trainer};
