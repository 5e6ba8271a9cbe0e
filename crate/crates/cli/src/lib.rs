//! Manifest-driven pipeline: each stage reads hash-checked artifacts of the
//! stages before it and writes `<artifact_dir>/<experiment_id>/<stage>/`
//! `<content-hash>.<ext>` files plus a `record.json` describing the run.

pub mod artifacts;
pub mod compare;
pub mod error;
pub mod manifest;
pub mod stages;

pub use artifacts::{output_path, read_record, Outcome, RunRecord};
pub use compare::{compare, ComparisonTable, Metric, Unit};
pub use error::{CliError, Result};
pub use manifest::{ExperimentManifest, Overrides, Stage};
pub use stages::{run, run_stage, EvaluationSummary};
