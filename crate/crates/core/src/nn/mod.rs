//! Floating-point reference network.

pub mod layers;
pub mod model;
pub mod sacw;
pub mod spec;

pub use layers::{
    argmax, conv2d_forward, dense_forward, fold_batchnorm, log_softmax_temperature, pool2d_forward,
    softmax_temperature, BatchNormParams, ConvLayerParams, DenseParams, PoolMode, PoolSpec,
};
pub use model::{fold_model, forward_batch, layer_output, model_forward, LayerParams, ModelParams};
pub use spec::{count_report, ConvSpec, CountReport, LayerKind, LayerSpec, ModelSpec, CLASS_NAMES};
