//! Token schemes, the joint losses, per-scheme training steps and the
//! epoch loop.

mod config;
mod gradcheck;
mod loss;
mod scheme;
mod step;
mod targets;
mod train;

pub use config::{TrainConfig, CONFIG_KEYS, DEFAULT_LR};
pub use gradcheck::{model_gradcheck, GRADCHECK_EPSILON};
pub use loss::{mix_loss_ftlid, mix_loss_lemb, LossWeights};
pub use scheme::{InferencePath, TrainingScheme};
pub use step::{batch_gradients, sample_loss, scheme_total, training_step, SampleLoss, TrainingStepReport};
pub use targets::{build_targets_en2en, build_targets_en2gt, build_targets_original, TeacherForcedPair};
pub use train::{
    balanced_subset, init_model, train, write_log, CheckpointHeader, EpochSummary, LogRecord, TrainOutcome,
    TrainedModel, Trainer,
};
