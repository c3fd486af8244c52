//! Minimal tensor engine and the early-exit classifier.

pub mod checkpoint;
pub mod cost;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Precision};
pub use cost::{count_macs, expected_macs, mac_ratio};
pub use metrics::{ClassMetrics, Confusion, Metrics};
pub use model::{
    forward, loss, loss_and_grad, predict_early_exit, Arch, EarlyExitPolicy, Gradients,
    ModelParams, DEFAULT_PARAM_COUNT, PARAM_KEYS,
};
pub use optim::{adam_step, AdamState};
pub use tensor::Tensor;
pub use train::{decide, evaluate, predict_all, train_local, LabeledSet, TrainOptions};
