//! Two-layer graph convolutional network `H' = σ(Â H W)` trained with
//! layer-wise importance sampling.

use thiserror::Error;

mod propagate;
mod sampler;
mod train;

pub use propagate::{
    forward_full, forward_plan, forward_sampled, loss_and_gradients, sample_layer, softmax, ForwardCache, Plan, PlanLayer,
};
pub use sampler::{build_sampler, Sampler};
pub use train::{argmax, init_model, predict, train, EpochRecord, Prediction, TrainOptions, TrainReport};

#[derive(Debug, Error, PartialEq)]
pub enum GcnError {
    #[error("layer {layer}: {what} is {found}, expected {expected}")]
    Shape { layer: usize, what: &'static str, expected: usize, found: usize },
    #[error("layer {layer}: non-finite activation")]
    NonFinite { layer: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid dataset graph: {0}")]
    Graph(String),
    #[error("invalid training options: {0}")]
    Options(String),
    #[error("sampling distribution has no mass")]
    DegenerateSampler,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("sample size {t} outside 1..={n}")]
    SampleSize { t: usize, n: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelRange { label: usize, classes: usize },
    #[error("class {0} has no training node")]
    MissingTrainClass(usize),
}
