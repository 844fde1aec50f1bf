//! Multi-source fusion: raw embedding concatenation, min-max normalized
//! cluster distances, and softmax cluster probabilities.
//!
//! Blocks are always concatenated in diagnosis, tags, image order no matter
//! the order the caller passes them in.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{EmbeddingMatrix, MatrixError, Source};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no sources to fuse")]
    NoSources,
    #[error("source {0} given twice")]
    DuplicateSource(Source),
    #[error("{block} has {got} rows, expected {expected}")]
    RowMismatch { block: Source, expected: usize, got: usize },
    #[error("{block} row {row} has id {got:?}, expected {expected:?}")]
    IdMisalignment { block: Source, row: usize, expected: String, got: String },
    #[error("non-finite distance in {block} at row {row}")]
    NonFiniteDistance { block: Source, row: usize },
    #[error("normalizer was fitted on {expected:?}, got {got:?}")]
    NormalizerMismatch { expected: Vec<(Source, usize)>, got: Vec<(Source, usize)> },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Embeddings,
    ClusterDists,
    ClusterProbs,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Embeddings, FusionMethod::ClusterDists, FusionMethod::ClusterProbs];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::Embeddings => "embeddings",
            FusionMethod::ClusterDists => "clusterdists",
            FusionMethod::ClusterProbs => "clusterprobs",
        }
    }
}

/// Which values share one min-max range in `clusterdists`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerColumn,
    PerSource,
    Global,
}

/// Sorts blocks into the canonical order and checks row/id alignment.
fn ordered<'a>(blocks: &[&'a EmbeddingMatrix]) -> Result<Vec<&'a EmbeddingMatrix>, FusionError> {
    let first = blocks.first().ok_or(FusionError::NoSources)?;
    let mut sorted: Vec<&EmbeddingMatrix> = blocks.to_vec();
    sorted.sort_by_key(|m| m.source);
    for w in sorted.windows(2) {
        if w[0].source == w[1].source {
            return Err(FusionError::DuplicateSource(w[0].source));
        }
    }
    for m in &sorted {
        if m.nrows() != first.nrows() {
            return Err(FusionError::RowMismatch { block: m.source, expected: first.nrows(), got: m.nrows() });
        }
        if let Some(row) = (0..m.nrows()).find(|&i| m.ids[i] != first.ids[i]) {
            return Err(FusionError::IdMisalignment {
                block: m.source,
                row,
                expected: first.ids[row].clone(),
                got: m.ids[row].clone(),
            });
        }
    }
    Ok(sorted)
}

fn concat(blocks: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix, FusionError> {
    let n = blocks[0].nrows();
    let d: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for b in blocks {
            data.extend_from_slice(b.row(i));
        }
    }
    Ok(EmbeddingMatrix::new(blocks[0].ids.clone(), Source::Fused, d, data)?)
}

/// Row-wise concatenation of raw embeddings.
pub fn fuse_embeddings(sources: &[&EmbeddingMatrix]) -> Result<EmbeddingMatrix, FusionError> {
    let blocks: Vec<EmbeddingMatrix> = ordered(sources)?.into_iter().cloned().collect();
    concat(&blocks)
}

/// Frozen min-max statistics for the distance blocks, one (min, max) pair
/// per output column. Under the coarser scopes the pairs repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistNormalizer {
    pub scope: NormScope,
    pub blocks: Vec<(Source, usize)>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

impl DistNormalizer {
    /// Fits on training-split distance matrices.
    pub fn fit(train: &[&EmbeddingMatrix], scope: NormScope) -> Result<Self, FusionError> {
        let sorted = ordered(train)?;
        check_finite(&sorted)?;
        let mut min = Vec::new();
        let mut max = Vec::new();
        for m in &sorted {
            let cols: Vec<(f64, f64)> = (0..m.ncols()).map(|j| min_max((0..m.nrows()).map(|i| m.get(i, j)))).collect();
            match scope {
                NormScope::PerColumn => {
                    min.extend(cols.iter().map(|c| c.0));
                    max.extend(cols.iter().map(|c| c.1));
                }
                NormScope::PerSource | NormScope::Global => {
                    let (lo, hi) = min_max(m.as_slice().iter().copied());
                    min.extend(std::iter::repeat_n(lo, m.ncols()));
                    max.extend(std::iter::repeat_n(hi, m.ncols()));
                }
            }
        }
        if scope == NormScope::Global {
            let lo = min.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.fill(lo);
            max.fill(hi);
        }
        Ok(Self { scope, blocks: sorted.iter().map(|m| (m.source, m.ncols())).collect(), min, max })
    }

    /// Column indices whose training range was zero.
    pub fn zero_range_columns(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] <= self.min[j]).collect()
    }
}

fn check_finite(blocks: &[&EmbeddingMatrix]) -> Result<(), FusionError> {
    for m in blocks {
        if let Some(row) = (0..m.nrows()).find(|&i| m.row(i).iter().any(|v| !v.is_finite())) {
            return Err(FusionError::NonFiniteDistance { block: m.source, row });
        }
    }
    Ok(())
}

/// Diagnostics recorded next to a `clusterdists` result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistsReport {
    /// Constant training columns, emitted as 0.
    pub zero_range_columns: Vec<usize>,
    pub values_above_one: usize,
    pub values_below_zero: usize,
}

/// Normalized cluster distances, concatenated. Values outside the training
/// range fall outside [0, 1] and are counted, not clamped.
pub fn fuse_clusterdists(
    distances: &[&EmbeddingMatrix],
    normalizer: &DistNormalizer,
) -> Result<(EmbeddingMatrix, DistsReport), FusionError> {
    let sorted = ordered(distances)?;
    check_finite(&sorted)?;
    let layout: Vec<(Source, usize)> = sorted.iter().map(|m| (m.source, m.ncols())).collect();
    if layout != normalizer.blocks {
        return Err(FusionError::NormalizerMismatch { expected: normalizer.blocks.clone(), got: layout });
    }
    let blocks: Vec<EmbeddingMatrix> = sorted.into_iter().cloned().collect();
    let fused = concat(&blocks)?;
    let (ids, _, d, mut data) = fused.into_parts();
    let mut report = DistsReport { zero_range_columns: normalizer.zero_range_columns(), ..Default::default() };
    for row in data.chunks_exact_mut(d) {
        for (j, v) in row.iter_mut().enumerate() {
            let range = normalizer.max[j] - normalizer.min[j];
            *v = if range > 0.0 { (*v - normalizer.min[j]) / range } else { 0.0 };
            if *v > 1.0 {
                report.values_above_one += 1;
            } else if *v < 0.0 {
                report.values_below_zero += 1;
            }
        }
    }
    Ok((EmbeddingMatrix::new(ids, Source::Fused, d, data)?, report))
}

/// `p_k = exp(−d_k) / Σ_j exp(−d_j)`, evaluated as a max-subtracted softmax.
pub fn softmax_neg(distances: &[f64]) -> Vec<f64> {
    let dmin = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = distances.iter().map(|d| (dmin - d).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-source softmax cluster probabilities, concatenated.
pub fn fuse_clusterprobs(distances: &[&EmbeddingMatrix]) -> Result<EmbeddingMatrix, FusionError> {
    let sorted = ordered(distances)?;
    check_finite(&sorted)?;
    let blocks: Vec<EmbeddingMatrix> = sorted
        .iter()
        .map(|m| {
            let data = m.rows().flat_map(softmax_neg).collect();
            EmbeddingMatrix::new(m.ids.clone(), m.source, m.ncols(), data)
        })
        .collect::<Result<_, _>>()?;
    concat(&blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub source: Source,
    pub dim: usize,
    /// κ of the per-source model for the distance-based methods.
    pub k: Option<usize>,
}

/// JSON written next to a fused RNEM matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSidecar {
    pub method: FusionMethod,
    pub sources: Vec<SourceInfo>,
    pub fused_dim: usize,
    pub normalizer: Option<DistNormalizer>,
    pub dists_report: Option<DistsReport>,
}

impl FusionSidecar {
    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zeros(source: Source, n: usize, d: usize) -> EmbeddingMatrix {
        let ids = (0..n).map(|i| format!("i{i}")).collect();
        EmbeddingMatrix::new(ids, source, d, vec![0.0; n * d]).unwrap()
    }

    fn mat(source: Source, rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("i{i}")).collect();
        EmbeddingMatrix::from_rows(ids, source, rows).unwrap()
    }

    #[test]
    fn embedding_dims_and_order() {
        let d = zeros(Source::Diagnosis, 3, 1000);
        let t = zeros(Source::Tags, 3, 32);
        let i = zeros(Source::Image, 3, 500);
        assert_eq!(fuse_embeddings(&[&i, &d, &t]).unwrap().ncols(), 1532);
        assert_eq!(fuse_embeddings(&[&d, &t]).unwrap().ncols(), 1032);
        assert_eq!(fuse_embeddings(&[&t, &i]).unwrap().ncols(), 532);

        let a = mat(Source::Image, &[vec![3.0], vec![4.0]]);
        let b = mat(Source::Diagnosis, &[vec![1.0, 2.0], vec![5.0, 6.0]]);
        let f = fuse_embeddings(&[&a, &b]).unwrap();
        assert_eq!(f.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(f.source, Source::Fused);
        assert_eq!(fuse_embeddings(&[&a]).unwrap().as_slice(), a.as_slice());
    }

    #[test]
    fn alignment_errors() {
        let a = zeros(Source::Image, 3, 2);
        let b = zeros(Source::Tags, 2, 2);
        assert!(matches!(fuse_embeddings(&[&a, &b]), Err(FusionError::RowMismatch { .. })));
        let mut c = zeros(Source::Tags, 3, 2);
        c.ids.swap(0, 1);
        assert!(matches!(fuse_embeddings(&[&a, &c]), Err(FusionError::IdMisalignment { row: 0, .. })));
        assert!(matches!(fuse_embeddings(&[&a, &a]), Err(FusionError::DuplicateSource(Source::Image))));
        assert!(matches!(fuse_embeddings(&[]), Err(FusionError::NoSources)));
    }

    #[test]
    fn clusterdists_dims_and_normalization() {
        let blocks = [zeros(Source::Diagnosis, 2, 20), zeros(Source::Tags, 2, 25), zeros(Source::Image, 2, 40)];
        let refs: Vec<&EmbeddingMatrix> = blocks.iter().collect();
        let norm = DistNormalizer::fit(&refs, NormScope::PerColumn).unwrap();
        let (f, rep) = fuse_clusterdists(&refs, &norm).unwrap();
        assert_eq!(f.ncols(), 85);
        assert_eq!(rep.zero_range_columns.len(), 85);
        for (pair, dim) in [((0, 1), 45), ((1, 2), 65), ((0, 2), 60)] {
            let r = [refs[pair.0], refs[pair.1]];
            let n = DistNormalizer::fit(&r, NormScope::PerColumn).unwrap();
            assert_eq!(fuse_clusterdists(&r, &n).unwrap().0.ncols(), dim);
        }

        let train = mat(Source::Tags, &[vec![0.0, 2.0], vec![4.0, 6.0]]);
        let norm = DistNormalizer::fit(&[&train], NormScope::PerColumn).unwrap();
        let (f, rep) = fuse_clusterdists(&[&train], &norm).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(rep.values_above_one, 0);
        // above the training max: (8 − 2) / 4 = 1.5, kept unclamped
        let apply = mat(Source::Tags, &[vec![0.0, 8.0]]);
        let (f, rep) = fuse_clusterdists(&[&apply], &norm).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 1.5]);
        assert_eq!(rep.values_above_one, 1);

        let per_source = DistNormalizer::fit(&[&train], NormScope::PerSource).unwrap();
        let (f, _) = fuse_clusterdists(&[&train], &per_source).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 2.0 / 6.0, 4.0 / 6.0, 1.0]);
        let other = mat(Source::Image, &[vec![10.0], vec![12.0]]);
        let global = DistNormalizer::fit(&[&train, &other], NormScope::Global).unwrap();
        assert!(global.min.iter().all(|&v| v == 0.0) && global.max.iter().all(|&v| v == 12.0));
    }

    #[test]
    fn clusterprobs_examples() {
        let p = softmax_neg(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_neg(&[0.0, 2f64.ln()]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = mat(Source::Image, &[vec![1.0, 2.0, 3.0]]);
        let b = mat(Source::Tags, &[vec![0.5, 0.5]]);
        let f = fuse_clusterprobs(&[&a, &b]).unwrap();
        assert_eq!(f.ncols(), 5);
        assert_eq!(&f.row(0)[..2], &[0.5, 0.5]);
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let train = mat(Source::Tags, &[vec![0.0, 2.0], vec![4.0, 6.0]]);
        let sc = FusionSidecar {
            method: FusionMethod::ClusterDists,
            sources: vec![SourceInfo { source: Source::Tags, dim: 2, k: Some(2) }],
            fused_dim: 2,
            normalizer: Some(DistNormalizer::fit(&[&train], NormScope::PerColumn).unwrap()),
            dists_report: Some(DistsReport::default()),
        };
        let path = dir.path().join("fused.json");
        sc.save(&path).unwrap();
        assert_eq!(FusionSidecar::load(&path).unwrap(), sc);
    }

    proptest! {
        #[test]
        fn probs_sum_to_one_and_shift_invariant(d in prop::collection::vec(0.0f64..50.0, 1..20), c in -100.0f64..100.0) {
            let p = softmax_neg(&d);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
            let shifted: Vec<f64> = d.iter().map(|v| v + c).collect();
            for (a, b) in p.iter().zip(softmax_neg(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn training_dists_within_unit_range(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 2..20)) {
            let m = mat(Source::Image, &rows);
            let norm = DistNormalizer::fit(&[&m], NormScope::PerColumn).unwrap();
            let (f, rep) = fuse_clusterdists(&[&m], &norm).unwrap();
            prop_assert!(f.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(rep.values_above_one + rep.values_below_zero, 0);
            prop_assert_eq!(f.ids, m.ids);
        }
    }
}
