use std::path::PathBuf;

use radlabel_core::clustering::ClusterError;
use radlabel_core::dicom::DicomError;
use radlabel_core::fusion::FusionError;
use radlabel_core::image::ImageError;
use radlabel_core::matrix::MatrixError;
use radlabel_core::metrics::MetricError;
use radlabel_core::pca::PcaError;
use radlabel_core::split::SplitError;
use radlabel_core::tags::TagError;
use radlabel_core::text::TextError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing artifact {0}; run the stage that produces it first")]
    MissingArtifact(PathBuf),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Dicom(#[from] DicomError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tags(#[from] TagError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage {stage} failed: {message}")]
    StageFailed { stage: String, message: String },
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
