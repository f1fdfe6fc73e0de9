//! Small encoder–decoder segmenter with hand-written reverse-mode
//! gradients, the compound BCE + soft-Dice loss, and AdamW.

mod loss;
mod net;
pub mod ops;
mod optim;
mod params;
mod train;

pub use loss::{bce_with_logits, head_loss, soft_dice, LossConfig, LossParts};
pub use net::{ForwardCache, LossGrad, NetConfig, SegNet};
pub use optim::{adamw_step, AdamWConfig, LrSchedule, OptState, StepReport};
pub use params::{Layout, ParamVec, TensorSpec};
pub use train::{
    crop_pair, epoch_seed, local_train, sample_patch, steps_per_epoch, LocalStats, LocalTrainOptions, PageData,
    SegModel,
};
