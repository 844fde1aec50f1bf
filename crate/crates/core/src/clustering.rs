//! k-means (k-means++ seeding, Lloyd iterations) and k-medoids (PAM BUILD
//! and SWAP), nearest-center assignment, and Kneedle elbow selection.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{EmbeddingMatrix, MatrixError, Source};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("κ = {k} exceeds the number of instances {n}")]
    KappaExceedsN { k: usize, n: usize },
    #[error("κ must be at least 1")]
    KappaZero,
    #[error("row {0} is a zero vector; cosine distance is undefined")]
    ZeroVectorWithCosine(usize),
    #[error("k-means supports only the euclidean metric")]
    CosineKMeans,
    #[error("dimension mismatch: model has {expected} features, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("κ grid needs at least 3 points, got {0}")]
    GridTooShort(usize),
    #[error("κ grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("grid has {grid} points but {inertias} inertias were given")]
    GridLengthMismatch { grid: usize, inertias: usize },
    #[error("inertias must be finite and positive")]
    BadInertia,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("labeling file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    KMedoids,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::KMedoids => "kmedoids",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

/// A fitted, immutable clustering model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub k: usize,
    pub seed: u64,
    /// Squared Euclidean for k-means, metric distance for k-medoids.
    pub inertia: f64,
    /// Row indices of the medoids in the training matrix (k-medoids only).
    pub medoids: Option<Vec<usize>>,
    /// Training ids of the medoids (k-medoids only).
    pub medoid_ids: Option<Vec<String>>,
    pub n_features: usize,
    pub source: Source,
    pub iterations: usize,
    /// Times an empty k-means cluster was re-seeded during the winning run.
    pub empty_cluster_reseeds: usize,
    /// Inertia after each Lloyd iteration or accepted swap.
    pub cost_history: Vec<f64>,
    /// κ × d, row-major. Medoid rows for k-medoids.
    #[serde(skip)]
    pub centers: Vec<f64>,
}

impl ClusterModel {
    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.n_features..(c + 1) * self.n_features]
    }

    pub fn centers_matrix(&self) -> Result<EmbeddingMatrix, ClusterError> {
        let ids = (0..self.k).map(|c| format!("center{c}")).collect();
        Ok(EmbeddingMatrix::new(ids, self.source, self.n_features, self.centers.clone())?)
    }

    fn center_path(stem: &Path) -> PathBuf {
        stem.with_extension("centers.rnem")
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.centers.rnem`.
    pub fn save(&self, stem: &Path) -> Result<(), ClusterError> {
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(self)?)?;
        self.centers_matrix()?.save(&Self::center_path(stem))?;
        Ok(())
    }

    /// Centers are stored as f32, so a loaded model may differ from the
    /// fitted one in the last bits of each coordinate.
    pub fn load(stem: &Path) -> Result<Self, ClusterError> {
        let mut model: ClusterModel = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let centers = EmbeddingMatrix::load(&Self::center_path(stem), model.source)?;
        if centers.nrows() != model.k || centers.ncols() != model.n_features {
            return Err(ClusterError::DimensionMismatch { expected: model.n_features, got: centers.ncols() });
        }
        model.centers = centers.as_slice().to_vec();
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 300, n_init: 10 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_k(k: usize, n: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::KappaZero);
    }
    if k > n {
        return Err(ClusterError::KappaExceedsN { k, n });
    }
    Ok(())
}

/// Nearest center under squared Euclidean, lowest index on ties.
fn nearest_sq(x: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, center);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn kmeans_pp(x: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(x.row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[..d])).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // rounding can walk off the end onto an existing center
            if closest[pick] == 0.0 {
                pick = closest.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let row = x.row(pick);
        centers.extend_from_slice(row);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(x.row(i), row));
        }
    }
    centers
}

struct LloydRun {
    centers: Vec<f64>,
    inertia: f64,
    iterations: usize,
    reseeds: usize,
    history: Vec<f64>,
}

fn assign_sq(x: &EmbeddingMatrix, centers: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let d = x.ncols();
    (0..x.nrows()).map(|i| nearest_sq(x.row(i), centers, d)).unzip()
}

fn lloyd(x: &EmbeddingMatrix, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> LloydRun {
    let d = x.ncols();
    let mut centers = kmeans_pp(x, k, rng);
    let (mut labels, mut dists) = assign_sq(x, &centers);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    let mut reseeds = 0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            sums[c * d..(c + 1) * d].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centers[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]).for_each(|(m, s)| *m = s * inv);
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        for c in empty {
            // farthest point from its own center, excluding points already
            // moved onto a re-seeded center
            let far = (0..x.nrows())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                dists[i] = 0.0;
                centers[c * d..(c + 1) * d].copy_from_slice(x.row(i));
                counts[c] = 1;
                reseeds += 1;
            }
        }
        let (new_labels, new_dists) = assign_sq(x, &centers);
        let new_inertia: f64 = new_dists.iter().sum();
        debug_assert!(new_inertia <= inertia * (1.0 + 1e-12) + 1e-12, "Lloyd inertia increased");
        history.push(new_inertia);
        inertia = new_inertia;
        dists = new_dists;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    LloydRun { centers, inertia, iterations, reseeds, history }
}

/// k-means with k-means++ seeding and `n_init` Lloyd restarts; keeps the
/// run with the lowest inertia (lowest restart index on ties).
pub fn kmeans_fit(x: &EmbeddingMatrix, k: usize, seed: u64, opts: KMeansOptions) -> Result<ClusterModel, ClusterError> {
    check_k(k, x.nrows())?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let run_seeds: Vec<u64> = (0..opts.n_init.max(1)).map(|_| seeder.random()).collect();
    let runs: Vec<LloydRun> = run_seeds
        .par_iter()
        .map(|&s| lloyd(x, k, opts.max_iter, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one run");
    Ok(ClusterModel {
        algorithm: Algorithm::KMeans,
        metric: Metric::Euclidean,
        k,
        seed,
        inertia: best.inertia,
        medoids: None,
        medoid_ids: None,
        n_features: x.ncols(),
        source: x.source,
        iterations: best.iterations,
        empty_cluster_reseeds: best.reseeds,
        cost_history: best.history,
        centers: best.centers,
    })
}

/// Unit-normalized copy of the rows for cosine distance.
fn unit_rows(x: &EmbeddingMatrix) -> Result<Vec<f64>, ClusterError> {
    let mut out = Vec::with_capacity(x.nrows() * x.ncols());
    for (i, r) in x.rows().enumerate() {
        let n = norm(r);
        if n == 0.0 {
            return Err(ClusterError::ZeroVectorWithCosine(i));
        }
        out.extend(r.iter().map(|v| v / n));
    }
    Ok(out)
}

fn metric_distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => sq_dist(a, b).sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (norm(a) * norm(b))).max(0.0)
        }
    }
}

/// Full n × n distance matrix, row-major.
fn pairwise(x: &EmbeddingMatrix, metric: Metric) -> Result<Vec<f64>, ClusterError> {
    let n = x.nrows();
    let d = x.ncols();
    let (rows, cosine) = match metric {
        Metric::Euclidean => (x.as_slice().to_vec(), false),
        Metric::Cosine => (unit_rows(x)?, true),
    };
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = &rows[i * d..(i + 1) * d];
        for (j, slot) in row.iter_mut().enumerate() {
            let b = &rows[j * d..(j + 1) * d];
            *slot = if cosine {
                (1.0 - a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).max(0.0)
            } else {
                sq_dist(a, b).sqrt()
            };
        }
    });
    Ok(out)
}

fn medoid_cost(dist: &[f64], n: usize, medoids: &[usize]) -> f64 {
    (0..n).map(|j| medoids.iter().map(|&m| dist[j * n + m]).fold(f64::INFINITY, f64::min)).sum()
}

/// Greedy BUILD: first the point minimizing total distance, then repeatedly
/// the point that lowers the cost most (lowest index on ties).
fn pam_build(dist: &[f64], n: usize, k: usize) -> Vec<usize> {
    let mut nearest = vec![f64::INFINITY; n];
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let gains: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|h| {
                if medoids.contains(&h) {
                    return f64::INFINITY;
                }
                (0..n).map(|j| nearest[j].min(dist[j * n + h])).sum()
            })
            .collect();
        let mut best = 0;
        for h in 1..n {
            if gains[h] < gains[best] {
                best = h;
            }
        }
        medoids.push(best);
        for j in 0..n {
            nearest[j] = nearest[j].min(dist[j * n + best]);
        }
    }
    medoids
}

/// PAM SWAP passes; each pass applies the single best cost-decreasing swap.
/// Returns the number of accepted swaps and the cost after each.
fn pam_swap(dist: &[f64], n: usize, medoids: &mut [usize], max_iter: usize) -> (usize, Vec<f64>) {
    let k = medoids.len();
    let mut cost = medoid_cost(dist, n, medoids);
    let mut history = vec![cost];
    let mut passes = 0;
    while passes < max_iter {
        // nearest and second-nearest medoid distance per point
        let mut near = vec![(0usize, f64::INFINITY); n];
        let mut second = vec![f64::INFINITY; n];
        for j in 0..n {
            for (slot, &m) in medoids.iter().enumerate() {
                let dj = dist[j * n + m];
                if dj < near[j].1 {
                    second[j] = near[j].1;
                    near[j] = (slot, dj);
                } else if dj < second[j] {
                    second[j] = dj;
                }
            }
        }
        let best = (0..n)
            .into_par_iter()
            .filter(|h| !medoids.contains(h))
            .map(|h| {
                let mut delta = vec![0.0; k];
                for j in 0..n {
                    let djh = dist[j * n + h];
                    let (slot, dj) = near[j];
                    for (i, di) in delta.iter_mut().enumerate() {
                        *di += if i == slot { djh.min(second[j]) - dj } else { (djh - dj).min(0.0) };
                    }
                }
                let (i, d) = delta
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &d)| if d < acc.1 { (i, d) } else { acc });
                (d, i, h)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && (b.2, b.1) < (a.2, a.1)) { b } else { a },
            );
        let (delta, slot, h) = best;
        if !(delta < -1e-12 * cost.max(1.0)) {
            break;
        }
        medoids[slot] = h;
        let new_cost = medoid_cost(dist, n, medoids);
        debug_assert!(new_cost < cost, "PAM swap did not decrease cost");
        cost = new_cost;
        history.push(cost);
        passes += 1;
    }
    (passes, history)
}

fn kmedoids_model(x: &EmbeddingMatrix, metric: Metric, seed: u64, medoids: Vec<usize>, iterations: usize, history: Vec<f64>) -> ClusterModel {
    let centers = medoids.iter().flat_map(|&m| x.row(m).iter().copied()).collect();
    ClusterModel {
        algorithm: Algorithm::KMedoids,
        metric,
        k: medoids.len(),
        seed,
        inertia: *history.last().expect("non-empty history"),
        medoid_ids: Some(medoids.iter().map(|&m| x.ids[m].clone()).collect()),
        medoids: Some(medoids),
        n_features: x.ncols(),
        source: x.source,
        iterations,
        empty_cluster_reseeds: 0,
        cost_history: history,
        centers,
    }
}

/// PAM k-medoids. Deterministic, so `seed` is only recorded. Holds the full
/// n × n distance matrix in memory.
pub fn kmedoids_fit(x: &EmbeddingMatrix, k: usize, metric: Metric, seed: u64, max_iter: usize) -> Result<ClusterModel, ClusterError> {
    check_k(k, x.nrows())?;
    let n = x.nrows();
    let dist = pairwise(x, metric)?;
    let mut medoids = pam_build(&dist, n, k);
    let (passes, history) = pam_swap(&dist, n, &mut medoids, max_iter);
    Ok(kmedoids_model(x, metric, seed, medoids, passes, history))
}

/// BUILD initialization only, without SWAP passes.
pub fn kmedoids_build_only(x: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<ClusterModel, ClusterError> {
    kmedoids_fit(x, k, metric, 0, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub k: usize,
}

/// Fits the model described by `spec`; k-means options apply to k-means,
/// `max_iter` of PAM is fixed at 100 SWAP passes.
pub fn fit(x: &EmbeddingMatrix, spec: ClusterSpec, seed: u64, opts: KMeansOptions) -> Result<ClusterModel, ClusterError> {
    match (spec.algorithm, spec.metric) {
        (Algorithm::KMeans, Metric::Euclidean) => kmeans_fit(x, spec.k, seed, opts),
        (Algorithm::KMeans, Metric::Cosine) => Err(ClusterError::CosineKMeans),
        (Algorithm::KMedoids, m) => kmedoids_fit(x, spec.k, m, seed, 100),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    /// n × κ, row-major: Euclidean distance for k-means, the model metric
    /// for k-medoids.
    pub distances: Vec<f64>,
    pub k: usize,
}

impl Assignment {
    pub fn distance_row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Nearest center for every row, lowest cluster index on ties, plus the
/// full distance matrix.
pub fn assign(model: &ClusterModel, x: &EmbeddingMatrix) -> Result<Assignment, ClusterError> {
    if x.ncols() != model.n_features {
        return Err(ClusterError::DimensionMismatch { expected: model.n_features, got: x.ncols() });
    }
    if model.metric == Metric::Cosine {
        if let Some(i) = x.rows().position(|r| norm(r) == 0.0) {
            return Err(ClusterError::ZeroVectorWithCosine(i));
        }
    }
    let k = model.k;
    let mut distances = vec![0.0; x.nrows() * k];
    distances.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = metric_distance(model.metric, x.row(i), model.center(c));
        }
    });
    let labels = distances
        .chunks_exact(k)
        .map(|row| row.iter().enumerate().fold((0, f64::INFINITY), |acc, (c, &d)| if d < acc.1 { (c, d) } else { acc }).0)
        .collect();
    Ok(Assignment { labels, distances, k })
}

/// `instance_id,cluster` rows.
pub fn write_labeling(path: &Path, ids: &[String], labels: &[usize]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance_id", "cluster"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeling(path: &Path) -> Result<(Vec<String>, Vec<usize>), ClusterError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for rec in r.deserialize() {
        let (id, l): (String, usize) = rec?;
        ids.push(id);
        labels.push(l);
    }
    Ok((ids, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    pub index: usize,
    /// False when no knee was confirmed and the grid midpoint was returned.
    pub knee_found: bool,
    pub difference: Vec<f64>,
}

/// Kneedle for a decreasing convex curve, sensitivity 1, no smoothing.
///
/// Both axes are min-max normalized, the inertia axis is flipped, and the
/// difference curve `(1 − y) − x` is searched for local maxima. A maximum
/// is a knee once the curve later falls below `diff − mean(Δx)`; among
/// confirmed knees the one with the largest difference wins.
pub fn elbow(grid: &[usize], inertias: &[f64]) -> Result<Elbow, ClusterError> {
    if grid.len() != inertias.len() {
        return Err(ClusterError::GridLengthMismatch { grid: grid.len(), inertias: inertias.len() });
    }
    if grid.len() < 3 {
        return Err(ClusterError::GridTooShort(grid.len()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ClusterError::GridNotIncreasing);
    }
    if inertias.iter().any(|y| !y.is_finite() || *y < 0.0) {
        return Err(ClusterError::BadInertia);
    }
    let n = grid.len();
    let (x0, x1) = (grid[0] as f64, grid[n - 1] as f64);
    let xn: Vec<f64> = grid.iter().map(|&k| (k as f64 - x0) / (x1 - x0)).collect();
    let (ymin, ymax) = inertias.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let yn: Vec<f64> = if ymax > ymin {
        inertias.iter().map(|y| 1.0 - (y - ymin) / (ymax - ymin)).collect()
    } else {
        vec![0.0; n]
    };
    let diff: Vec<f64> = yn.iter().zip(&xn).map(|(y, x)| y - x).collect();
    let step = xn.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (n - 1) as f64;

    let maxima: Vec<usize> = (1..n - 1).filter(|&i| diff[i] >= diff[i - 1] && diff[i] > diff[i + 1]).collect();
    let mut best: Option<usize> = None;
    for (m, &i) in maxima.iter().enumerate() {
        let threshold = diff[i] - step;
        let until = maxima.get(m + 1).copied().unwrap_or(n);
        let confirmed = (i + 1..until).any(|j| diff[j] < threshold);
        if confirmed && best.is_none_or(|b| diff[i] > diff[b]) {
            best = Some(i);
        }
    }
    Ok(match best {
        Some(i) => Elbow { k: grid[i], index: i, knee_found: true, difference: diff },
        None => {
            let mid = n / 2;
            Elbow { k: grid[mid], index: mid, knee_found: false, difference: diff }
        }
    })
}
