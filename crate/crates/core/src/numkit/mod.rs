//! Deterministic numerical substrate: vectors, matrices, seeded RNG, the
//! shared-encoder MLP and its optimizers.

mod loss;
mod matrix;
mod mlp;
mod optim;
mod rng;
mod vector;

pub use loss::{loss_and_grad, LossKind, TaskTargets, DEFAULT_POSITIVE_WEIGHT};
pub use matrix::Matrix;
pub use mlp::{restrict_to_last_shared, Activation, Backward, Batch, Forward, Head, ModelConfig, MtlModel, TaskLoss};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use rng::{streams, Rng};
pub use vector::{all_finite, axpy, dot, norm, softmax, FlatVector};
