//! Batch pipeline that clusters DICOM instances from their tags, pixel
//! data and exam diagnoses, evaluates the clusterings against Modality and
//! BodyPartExamined, and labels new corpora with a frozen model.

pub mod config;
pub mod error;
pub mod features;
pub mod ingest;
pub mod label;
pub mod layout;
pub mod manifest;
pub mod runs;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use label::{label_corpus, LabelSummary};
pub use manifest::{run_pipeline, run_stage, RunManifest, Stage, StageStatus};
pub use synth::{generate_synthetic, SynthOptions, SynthSummary};
