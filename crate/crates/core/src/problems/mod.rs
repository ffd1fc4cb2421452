//! Synthetic multi-task problems and the training loops that run on them.

mod data;
mod landscape;
mod tasks;
mod train;

pub use data::{
    corrupt_labels, gen_scaled_suite, subsample, DatasetSpec, LatentMap, SubsampleAmount, SubsampleMode,
    SyntheticDataset,
};
pub use landscape::{gen_toy_landscape, DescentPath, ToyLandscape};
pub use tasks::{TaskKind, TaskSpec};
pub use train::{evaluate, train_mtl, train_stl, Selector, Split, TrainConfig, TrainOutcome, DIVERGENCE_LIMIT};
