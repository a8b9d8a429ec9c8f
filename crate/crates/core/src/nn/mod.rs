//! The behavior classifier: layers, loss, SGD training, gradient checking
//! and the checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::ModelCheckpoint;
pub use gradcheck::{grad_check, grad_check_scaled, GradCheckReport};
pub use layers::{
    conv2d, conv2d_backward, conv2d_forward, dense, dense_backward, maxpool2, maxpool2_backward,
    maxpool2_forward, relu, relu_backward, LayerParams, ParamGrads, ParamKind,
};
pub use loss::{softmax, softmax_xent};
pub use model::{default_architecture, sgd_step, Gradients, Layer, LayerSpec, Model};
pub use train::{accuracy, argmax, train_model, EpochStats, Sample, TrainConfig, TrainOutcome};
