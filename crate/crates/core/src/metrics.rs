//! Clustering quality metrics: entropy, NMI, homogeneity, the S score,
//! within-cluster cosine dissimilarity and the D score.
//!
//! All logarithms are natural; NMI and homogeneity are ratios, so the base
//! cancels.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::EmbeddingMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("both labelings are constant; NMI is undefined")]
    DegenerateLabels,
    #[error("target labels are constant; homogeneity is undefined")]
    ZeroTargetEntropy,
    #[error("zero vector at row {0}")]
    ZeroVector(usize),
    #[error("cluster index {index} out of range for {k} clusters")]
    ClusterOutOfRange { index: usize, k: usize },
}

fn counts<T: Hash + Eq>(labels: &[T]) -> HashMap<&T, usize> {
    let mut m = HashMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

fn entropy_of_counts(counts: impl IntoIterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Shannon entropy of the label distribution, in nats.
pub fn entropy<T: Hash + Eq>(labels: &[T]) -> Result<f64, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(entropy_of_counts(counts(labels).into_values(), labels.len()))
}

/// `H(y | ŷ)`: entropy of the targets within each cluster, weighted by
/// cluster size.
pub fn conditional_entropy<T: Hash + Eq, C: Hash + Eq>(y: &[T], clusters: &[C]) -> Result<f64, MetricError> {
    check_lengths(y.len(), clusters.len())?;
    let n = y.len() as f64;
    let mut joint: HashMap<(&C, &T), usize> = HashMap::new();
    for (t, c) in y.iter().zip(clusters) {
        *joint.entry((c, t)).or_insert(0) += 1;
    }
    let cluster_sizes = counts(clusters);
    Ok(joint
        .iter()
        .map(|((c, _), &nij)| {
            let nj = cluster_sizes[c] as f64;
            let nij = nij as f64;
            -(nij / n) * (nij / nj).ln()
        })
        .sum())
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// `2 I(y, ŷ) / (H(y) + H(ŷ))` with `I = H(y) − H(y | ŷ)`.
pub fn nmi<T: Hash + Eq, C: Hash + Eq>(y: &[T], clusters: &[C]) -> Result<f64, MetricError> {
    check_lengths(y.len(), clusters.len())?;
    let hy = entropy(y)?;
    let hc = entropy(clusters)?;
    if hy + hc == 0.0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mi = (hy - conditional_entropy(y, clusters)?).max(0.0);
    Ok((2.0 * mi / (hy + hc)).clamp(0.0, 1.0))
}

/// `1 − H(y | ŷ) / H(y)`.
pub fn homogeneity<T: Hash + Eq, C: Hash + Eq>(y: &[T], clusters: &[C]) -> Result<f64, MetricError> {
    check_lengths(y.len(), clusters.len())?;
    let hy = entropy(y)?;
    if hy == 0.0 {
        return Err(MetricError::ZeroTargetEntropy);
    }
    Ok((1.0 - conditional_entropy(y, clusters)? / hy).clamp(0.0, 1.0))
}

/// Harmonic mean of the four homogeneity/NMI values; 0 if any is 0.
pub fn s_score(hs_b: f64, hs_m: f64, nmi_b: f64, nmi_m: f64) -> f64 {
    let v = [hs_b, hs_m, nmi_b, nmi_m];
    if v.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    4.0 / v.iter().map(|x| 1.0 / x).sum::<f64>()
}

/// `1 − uᵀv / (‖u‖ ‖v‖)`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(MetricError::ZeroVector(0));
    }
    if nv == 0.0 {
        return Err(MetricError::ZeroVector(1));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (nu * nv))
}

/// How clusters with fewer than two members enter the overall mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallClusterPolicy {
    /// Contribute 0 and count towards κ.
    #[default]
    IncludeAsZero,
    /// Left out of the mean and the standard deviation.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissimilarity {
    /// Mean pairwise cosine distance per cluster; `None` when the cluster
    /// has fewer than two members.
    pub per_cluster: Vec<Option<f64>>,
    pub mean: f64,
    /// Population standard deviation across the clusters in the mean.
    pub std: f64,
    pub small_clusters: usize,
}

/// Mean within-cluster pairwise cosine distance, averaged over clusters
/// without weighting by size.
pub fn cluster_dissimilarity(
    embeddings: &EmbeddingMatrix,
    labels: &[usize],
    k: usize,
    policy: SmallClusterPolicy,
) -> Result<Dissimilarity, MetricError> {
    check_lengths(embeddings.nrows(), labels.len())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members.get_mut(c).ok_or(MetricError::ClusterOutOfRange { index: c, k })?.push(i);
    }
    let unit: Vec<Vec<f64>> = (0..embeddings.nrows())
        .map(|i| {
            let r = embeddings.row(i);
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(MetricError::ZeroVector(i))
            } else {
                Ok(r.iter().map(|x| x / norm).collect())
            }
        })
        .collect::<Result<_, _>>()?;

    let per_cluster: Vec<Option<f64>> = members
        .iter()
        .map(|m| {
            if m.len() < 2 {
                return None;
            }
            let mut sum = 0.0;
            for (a, &i) in m.iter().enumerate() {
                for &j in &m[a + 1..] {
                    let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(x, y)| x * y).sum();
                    sum += 1.0 - dot;
                }
            }
            let pairs = m.len() * (m.len() - 1) / 2;
            Some(sum / pairs as f64)
        })
        .collect();
    let small_clusters = per_cluster.iter().filter(|d| d.is_none()).count();
    let values: Vec<f64> = match policy {
        SmallClusterPolicy::IncludeAsZero => per_cluster.iter().map(|d| d.unwrap_or(0.0)).collect(),
        SmallClusterPolicy::Exclude => per_cluster.iter().flatten().copied().collect(),
    };
    let (mean, std) = mean_std(&values);
    Ok(Dissimilarity { per_cluster, mean, std, small_clusters })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DScore {
    pub value: f64,
    /// Set when either input was 0 (perfect similarity).
    pub zero_input: bool,
}

/// Harmonic mean of the image and diagnosis dissimilarities.
pub fn d_score(d_image: f64, d_diagnosis: f64) -> DScore {
    if d_image <= 0.0 || d_diagnosis <= 0.0 {
        return DScore { value: 0.0, zero_input: true };
    }
    DScore { value: 2.0 * d_image * d_diagnosis / (d_image + d_diagnosis), zero_input: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComposition {
    pub cluster: usize,
    pub size: usize,
    pub modality: BTreeMap<String, f64>,
    pub body_part: BTreeMap<String, f64>,
}

fn proportions(values: &[&str]) -> BTreeMap<String, f64> {
    let n = values.len() as f64;
    let mut m: BTreeMap<String, f64> = BTreeMap::new();
    for v in values {
        *m.entry((*v).to_owned()).or_insert(0.0) += 1.0;
    }
    m.values_mut().for_each(|c| *c /= n);
    m
}

/// Per-cluster size and target mixture. Empty clusters are listed with
/// size 0 and no proportions.
pub fn composition_report<S: AsRef<str>>(
    labels: &[usize],
    k: usize,
    modality: &[S],
    body_part: &[S],
) -> Result<Vec<ClusterComposition>, MetricError> {
    check_lengths(labels.len(), modality.len())?;
    check_lengths(labels.len(), body_part.len())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members.get_mut(c).ok_or(MetricError::ClusterOutOfRange { index: c, k })?.push(i);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(cluster, m)| {
            let mods: Vec<&str> = m.iter().map(|&i| modality[i].as_ref()).collect();
            let bps: Vec<&str> = m.iter().map(|&i| body_part[i].as_ref()).collect();
            ClusterComposition {
                cluster,
                size: m.len(),
                modality: proportions(&mods),
                body_part: proportions(&bps),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Everything reported for one clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub k: usize,
    pub n: usize,
    pub nmi_modality: f64,
    pub nmi_body_part: f64,
    pub hs_modality: f64,
    pub hs_body_part: f64,
    pub s: f64,
    pub d_image: Option<MeanStd>,
    pub d_diagnosis: Option<MeanStd>,
    pub d_score: Option<f64>,
    pub empty_clusters: usize,
    pub small_clusters: usize,
    pub composition: Vec<ClusterComposition>,
}

/// Targets aligned to the clustered instances.
pub struct Targets<'a, S: AsRef<str>> {
    pub modality: &'a [S],
    pub body_part: &'a [S],
}

/// Computes every metric for a labeling. Dissimilarities are computed only
/// for the embeddings provided.
pub fn evaluate<S: AsRef<str>>(
    labels: &[usize],
    k: usize,
    targets: &Targets<'_, S>,
    image_embeddings: Option<&EmbeddingMatrix>,
    diagnosis_embeddings: Option<&EmbeddingMatrix>,
    policy: SmallClusterPolicy,
) -> Result<EvaluationReport, MetricError> {
    let m: Vec<&str> = targets.modality.iter().map(AsRef::as_ref).collect();
    let b: Vec<&str> = targets.body_part.iter().map(AsRef::as_ref).collect();
    // a constant target has nothing to be homogeneous about; report 0
    let or_zero = |r: Result<f64, MetricError>| match r {
        Err(MetricError::ZeroTargetEntropy | MetricError::DegenerateLabels) => Ok(0.0),
        other => other,
    };
    let nmi_m = or_zero(nmi(&m, labels))?;
    let nmi_b = or_zero(nmi(&b, labels))?;
    let hs_m = or_zero(homogeneity(&m, labels))?;
    let hs_b = or_zero(homogeneity(&b, labels))?;
    let dis = |e: Option<&EmbeddingMatrix>| -> Result<Option<Dissimilarity>, MetricError> {
        e.map(|e| cluster_dissimilarity(e, labels, k, policy)).transpose()
    };
    let di = dis(image_embeddings)?;
    let dd = dis(diagnosis_embeddings)?;
    let d_score = match (&di, &dd) {
        (Some(a), Some(b)) => Some(d_score(a.mean, b.mean).value),
        _ => None,
    };
    let composition = composition_report(labels, k, targets.modality, targets.body_part)?;
    Ok(EvaluationReport {
        k,
        n: labels.len(),
        nmi_modality: nmi_m,
        nmi_body_part: nmi_b,
        hs_modality: hs_m,
        hs_body_part: hs_b,
        s: s_score(hs_b, hs_m, nmi_b, nmi_m),
        small_clusters: di.as_ref().or(dd.as_ref()).map_or(0, |d| d.small_clusters),
        d_image: di.map(|d| MeanStd { mean: d.mean, std: d.std }),
        d_diagnosis: dd.map(|d| MeanStd { mean: d.mean, std: d.std }),
        d_score,
        empty_clusters: composition.iter().filter(|c| c.size == 0).count(),
        composition,
    })
}
