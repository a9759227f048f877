//! Pedestrian crossing-intention analysis pipeline.
//!
//! From ingested 3D-pose / vehicle / environment tracks this crate computes
//! pedestrian orientation, extracts a nine-feature intention vector, trains
//! and runs small sequence classifiers that predict crossing-or-not-crossing
//! intention at a future horizon, and evaluates with orientation and
//! intention metrics, throughput benchmarks and an ablation grid. A
//! deterministic synthetic scene generator with closed-form oracle labels
//! stands in for field data at desk scale.

pub mod classifiers;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod measurement;
pub mod scene_model;
pub mod stream;
pub mod synthetic;
