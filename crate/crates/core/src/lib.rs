pub mod dicom;
pub mod matrix;
pub mod image;
pub mod split;
pub mod text;
pub mod metrics;
pub mod clustering;
pub mod fusion;
pub mod pca;
pub mod tags;
pub mod report;
