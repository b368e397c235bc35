//! Pipeline driver: manifests, split protocols, per-stage runs over an
//! artifact directory, evaluation reports, and a procedural toy dataset.

pub mod datasets;
pub mod eval;
pub mod manifest;
pub mod protocols;
pub mod stages;
pub mod toy;

pub use eval::{evaluate_multiclass, evaluate_ova, EvalError, EvalMode, MulticlassMetrics, OvaMetrics};
pub use manifest::{Manifest, ManifestEntry, ManifestError};
pub use protocols::{split_coil_protocol, split_eth_protocol, split_fraction, ProtocolError};
pub use stages::{run_stage, Layout, Stage, StageContext, StageError, StageOutcome};
pub use toy::generate_toy_dataset;
