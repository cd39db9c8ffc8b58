//! Desk-scale CNN training on synthetic spatially correlated data.

mod data;
mod net;
mod train;

pub use data::{
    generate_correlated_field, lag1_autocorrelation, make_dataset_with_net, make_teacher_dataset,
    make_teacher_task,
    DatasetSpec, SyntheticDataset, MIN_LAG1_AUTOCORRELATION,
};
pub use net::{
    ConvLayer, ForwardCache, Gradients, Head, InitMode, Loss, ToyNet, ToyNetConfig, Volume,
    MAX_CONV_LAYERS,
};
pub use train::{
    l2_correlation_experiment, train, train_net, L2Pair, Optimizer, RunStatus, TrainConfig,
    TrainReport,
};
