//! Student training: losses, backprop, Adam, folds and teacher logits.

pub mod backward;
pub mod kfold;
pub mod loss;
pub mod optim;
pub mod teacher;
pub mod trainer;

pub use backward::{backward_gradients, sample_gradient, GradSample};
pub use kfold::assign_folds;
pub use loss::{cross_entropy, kd_loss, loss_and_logit_grad, KdConfig};
pub use optim::{adam_update, lr_plateau_schedule, OptimizerState};
pub use teacher::{teacher_logits_load, TeacherLogits};
pub use trainer::{
    accuracy, calibrate_batchnorm, kfold_train, train_model, EpochRecord, FoldModel, FoldResult,
    KFoldReport, TrainConfig, TrainOutcome,
};
