//! Shared domain types, validation and artifact formats for the
//! region-graph embedding + sampled GCN pipeline.

pub mod artifact;
pub mod config;
pub mod matrix;
pub mod types;
pub mod validate;

pub use artifact::{read_artifact, write_artifact, Artifact, ArtifactError, ArtifactKind, Stamped};
pub use config::{
    BudgetUnit, ConfigError, ConfigHash, Optimizer, PrototypeSet, RunConfig, SamplerKind, SetError, DATASET_PRESETS,
};
pub use matrix::{CsrMatrix, Matrix};
pub use types::{
    normalized_color_distance, Activation, Arsrg, DatasetGraph, Descriptor, DistanceMatrix, GcnModel, GraphStats,
    Region, Split,
};
pub use validate::{validate_arsrg, Violation};
