//! Transductive graph node classification for segment-level pathological
//! speech detection.
//!
//! Segment embeddings become nodes of a mutual top-k graph built from a
//! similarity kernel. A GCN trained on the labeled nodes classifies every
//! segment, and speakers are scored by soft voting over their segments.
//! FC and KNN baselines share the same cross-validation harness.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gcn;
pub mod graph;
pub mod synthetic;
pub mod voting;

pub use dataset::{load_dataset, write_dataset, Dataset, Label, SegmentRecord, SpeakerTable};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{
    make_cv_plans, run_experiment, CvPlan, ExperimentReport, GridSpec, ModelKind,
};
pub use gcn::{GcnModel, PropagationMatrix, Supervision, TrainConfig};
pub use graph::{Adjacency, DistanceMeasure, Kernel};
pub use synthetic::{generate, SynthConfig};
