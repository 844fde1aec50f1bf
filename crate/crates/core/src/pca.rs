//! Principal component analysis with three solvers: exact SVD, Lanczos on
//! the implicit covariance operator, and a randomized range finder.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{EmbeddingMatrix, MatrixError, Source};

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("k = {k} outside 1..={max} (min(n − 1, d))")]
    InvalidK { k: usize, max: usize },
    #[error("k = {k} exceeds the effective rank {rank}")]
    RankTooLow { k: usize, rank: usize },
    #[error("dimension mismatch: model has {expected} features, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaSolver {
    Full,
    Iterative,
    Randomized,
}

/// Convergence tolerance of the Lanczos solver, relative to the largest
/// Ritz value.
pub const LANCZOS_TOL: f64 = 1e-9;
pub const RANDOMIZED_OVERSAMPLING: usize = 10;
pub const RANDOMIZED_POWER_ITERATIONS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub solver: PcaSolver,
    pub seed: u64,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    /// k × d, row-major; each row is a unit principal direction.
    pub components: Vec<f64>,
    /// Sample variance along each component, descending.
    pub explained_variance: Vec<f64>,
    /// Scale projections to unit variance per component.
    #[serde(default)]
    pub whiten: bool,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let d = self.n_features();
        &self.components[c * d..(c + 1) * d]
    }

    pub fn with_whitening(mut self, whiten: bool) -> Self {
        self.whiten = whiten;
        self
    }

    fn scales(&self) -> Vec<f64> {
        self.explained_variance.iter().map(|&v| if self.whiten { v.sqrt() } else { 1.0 }).collect()
    }

    fn components_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k(), self.n_features(), &self.components)
    }
}

fn centered(x: &EmbeddingMatrix) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows();
    let d = x.ncols();
    let mut mean = vec![0.0; d];
    for r in x.rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    (xc, mean)
}

/// Threshold below which a singular value counts as zero.
fn rank_tol(n: usize, d: usize, sigma_max: f64) -> f64 {
    n.max(d) as f64 * f64::EPSILON * sigma_max
}

/// Flips each direction so its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top singular values (descending) and right singular vectors of `a`.
fn svd_top(a: &DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    order.truncate(k);
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vecs = order.iter().map(|&i| vt.row(i).transpose()).collect();
    (sigma, vecs)
}

fn full(xc: &DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
    svd_top(xc, k)
}

fn gaussian_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

/// Gram-Schmidt twice against the existing basis.
fn reorthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Lanczos with full reorthogonalization on `C = Xcᵀ Xc`, applied
/// implicitly. Grows the Krylov basis until the top-k Ritz residuals fall
/// below `LANCZOS_TOL · θ₁` or the basis spans the whole space.
fn lanczos(xc: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<DVector<f64>>) {
    let d = xc.ncols();
    let apply = |v: &DVector<f64>| xc.tr_mul(&(xc * v));
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut v = gaussian_vector(d, rng);
    v.normalize_mut();
    loop {
        let mut w = apply(&v);
        let a = v.dot(&w);
        q.push(v);
        alpha.push(a);
        reorthogonalize(&mut w, &q);
        let b = w.norm();
        let m = q.len();
        let t = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
            0 => alpha[i],
            1 => beta[i.min(j)],
            _ => 0.0,
        });
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let theta1 = eig.eigenvalues[order[0]].abs().max(f64::MIN_POSITIVE);
        let converged = m >= k
            && order[..k].iter().all(|&i| (b * eig.eigenvectors[(m - 1, i)]).abs() <= LANCZOS_TOL * theta1);
        if converged || m == d {
            let top = &order[..k.min(m)];
            let sigma = top.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
            let vecs = top
                .iter()
                .map(|&i| {
                    let mut r = DVector::zeros(d);
                    for (j, qj) in q.iter().enumerate() {
                        r.axpy(eig.eigenvectors[(j, i)], qj, 1.0);
                    }
                    r.normalize()
                })
                .collect();
            return (sigma, vecs);
        }
        beta.push(b);
        v = if b > LANCZOS_TOL * theta1 {
            w / b
        } else {
            // invariant subspace found: continue from a fresh direction
            *beta.last_mut().expect("just pushed") = 0.0;
            let mut r = gaussian_vector(d, rng);
            reorthogonalize(&mut r, &q);
            r.normalize()
        };
    }
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Range finder with Gaussian sketch, QR-stabilized power iterations and an
/// exact SVD of the small projected matrix.
fn randomized(xc: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<DVector<f64>>) {
    let (n, d) = xc.shape();
    let l = (k + RANDOMIZED_OVERSAMPLING).min(n.min(d));
    let omega = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(rng));
    let mut qm = orthonormal_basis(xc * omega);
    for _ in 0..RANDOMIZED_POWER_ITERATIONS {
        let z = orthonormal_basis(xc.tr_mul(&qm));
        qm = orthonormal_basis(xc * z);
    }
    let b = qm.tr_mul(xc);
    svd_top(&b, k)
}

fn max_k(n: usize, d: usize) -> usize {
    (n - 1).min(d)
}

/// Fits `k` components. Errors with `RankTooLow` instead of returning
/// directions with zero variance.
pub fn pca_fit(x: &EmbeddingMatrix, k: usize, solver: PcaSolver, seed: u64) -> Result<PcaModel, PcaError> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    if k == 0 || k > max_k(n, d) {
        return Err(PcaError::InvalidK { k, max: max_k(n, d) });
    }
    let (xc, mean) = centered(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sigma, vecs) = match solver {
        PcaSolver::Full => full(&xc, k),
        PcaSolver::Iterative => lanczos(&xc, k, &mut rng),
        PcaSolver::Randomized => randomized(&xc, k, &mut rng),
    };
    let mut tol = rank_tol(n, d, sigma.first().copied().unwrap_or(0.0));
    if solver == PcaSolver::Iterative {
        // Lanczos resolves eigenvalues of XᵀX, so zero singular values
        // surface at roughly the square root of machine precision
        tol = tol.max(sigma.first().copied().unwrap_or(0.0) * (n.max(d) as f64 * f64::EPSILON).sqrt());
    }
    let rank = sigma.iter().take_while(|&&s| s > tol && s > 0.0).count();
    if rank < k {
        return Err(PcaError::RankTooLow { k, rank });
    }
    let mut components = Vec::with_capacity(k * d);
    for v in vecs {
        let mut v: Vec<f64> = v.iter().copied().collect();
        fix_sign(&mut v);
        components.extend(v);
    }
    Ok(PcaModel {
        solver,
        seed,
        n_samples: n,
        mean,
        components,
        explained_variance: sigma.iter().map(|s| s * s / (n - 1) as f64).collect(),
        whiten: false,
    })
}

/// All `min(n, d)` sample variances of the centered data, descending.
pub fn variance_spectrum(x: &EmbeddingMatrix) -> Vec<f64> {
    let (xc, _) = centered(x);
    let n = x.nrows().max(2);
    let (sigma, _) = svd_top(&xc, x.nrows().min(x.ncols()));
    sigma.iter().map(|s| s * s / (n - 1) as f64).collect()
}

/// `(X − mean) · componentsᵀ`, divided per column by the component's
/// standard deviation when the model whitens.
pub fn pca_transform(model: &PcaModel, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix, PcaError> {
    if x.ncols() != model.n_features() {
        return Err(PcaError::DimensionMismatch { expected: model.n_features(), got: x.ncols() });
    }
    // row by row, so a row's projection does not depend on the batch it
    // arrives in
    let k = model.k();
    let scales = model.scales();
    let data: Vec<f64> = x
        .as_slice()
        .par_chunks(x.ncols().max(1))
        .flat_map_iter(|row| {
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(v, m)| v - m).collect();
            (0..k)
                .map(|c| centered.iter().zip(model.component(c)).map(|(a, b)| a * b).sum::<f64>() / scales[c])
                .collect::<Vec<f64>>()
        })
        .collect();
    Ok(EmbeddingMatrix::new(x.ids.clone(), x.source, k, data)?)
}

/// `Z · components + mean`.
pub fn pca_inverse_transform(model: &PcaModel, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix, PcaError> {
    if z.ncols() != model.k() {
        return Err(PcaError::DimensionMismatch { expected: model.k(), got: z.ncols() });
    }
    let mut zm = z.to_nalgebra();
    for (mut col, s) in zm.column_iter_mut().zip(model.scales()) {
        col *= s;
    }
    let mut x = zm * model.components_matrix();
    for mut row in x.row_iter_mut() {
        row.iter_mut().zip(&model.mean).for_each(|(v, m)| *v += m);
    }
    Ok(EmbeddingMatrix::from_nalgebra(z.ids.clone(), z.source, &x)?)
}

/// Convenience for callers that only need the projected matrix.
pub fn fit_transform(x: &EmbeddingMatrix, k: usize, solver: PcaSolver, seed: u64, source: Source) -> Result<(PcaModel, EmbeddingMatrix), PcaError> {
    let model = pca_fit(x, k, solver, seed)?;
    let z = pca_transform(&model, x)?.with_source(source);
    Ok((model, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SOLVERS: [PcaSolver; 3] = [PcaSolver::Full, PcaSolver::Iterative, PcaSolver::Randomized];

    fn mat(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::from_rows(ids, Source::Image, rows).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        mat(&rows)
    }

    /// Random matrix with singular values decaying geometrically.
    fn decaying(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let g = random(n, d, seed).to_nalgebra();
        let scaled = DMatrix::from_fn(n, d, |i, j| g[(i, j)] * 0.7f64.powi(j as i32));
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::from_nalgebra(ids, Source::Image, &scaled).unwrap()
    }

    fn orthonormality_error(m: &PcaModel) -> f64 {
        let c = m.components_matrix();
        (&c * c.transpose() - DMatrix::identity(m.k(), m.k())).abs().max()
    }

    #[test]
    fn line_y_equals_x() {
        let x = mat(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![5.0, 5.0]]);
        for solver in SOLVERS {
            let m = pca_fit(&x, 1, solver, 0).unwrap();
            let h = 1.0 / 2f64.sqrt();
            assert!((m.component(0)[0] - h).abs() < 1e-9 && (m.component(0)[1] - h).abs() < 1e-9, "{solver:?}");
            assert!(matches!(pca_fit(&x, 2, solver, 0), Err(PcaError::RankTooLow { k: 2, rank: 1 })), "{solver:?}");
        }
        let spectrum = variance_spectrum(&x);
        assert!(spectrum[1].abs() < 1e-12 * spectrum[0]);
    }

    #[test]
    fn full_rank_reconstruction() {
        let x = random(30, 6, 1);
        for solver in SOLVERS {
            let m = pca_fit(&x, 6, solver, 3).unwrap();
            assert!(orthonormality_error(&m) < 1e-8, "{solver:?}");
            let z = pca_transform(&m, &x).unwrap();
            let back = pca_inverse_transform(&m, &z).unwrap();
            for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
                assert!((a - b).abs() < 1e-8, "{solver:?}");
            }
        }
    }

    #[test]
    fn randomized_matches_full_on_decaying_spectrum() {
        let x = decaying(200, 50, 7);
        let full = pca_fit(&x, 5, PcaSolver::Full, 0).unwrap();
        for solver in [PcaSolver::Randomized, PcaSolver::Iterative] {
            let other = pca_fit(&x, 5, solver, 11).unwrap();
            for (a, b) in full.explained_variance.iter().zip(&other.explained_variance) {
                assert!(((a - b) / a).abs() < 1e-6, "{solver:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn iterative_matches_full_on_gaussian_data() {
        let x = random(200, 50, 8);
        let full = pca_fit(&x, 5, PcaSolver::Full, 0).unwrap();
        let it = pca_fit(&x, 5, PcaSolver::Iterative, 1).unwrap();
        for (a, b) in full.explained_variance.iter().zip(&it.explained_variance) {
            assert!(((a - b) / a).abs() < 1e-6);
        }
    }

    #[test]
    fn whitened_projection_has_unit_variance_and_inverts() {
        let x = random(50, 6, 4);
        let m = pca_fit(&x, 4, PcaSolver::Full, 0).unwrap().with_whitening(true);
        let z = pca_transform(&m, &x).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..z.nrows()).map(|i| z.get(i, c)).collect();
            let var = col.iter().map(|v| v * v).sum::<f64>() / (col.len() - 1) as f64;
            assert!((var - 1.0).abs() < 1e-10);
        }
        let plain = pca_fit(&x, 4, PcaSolver::Full, 0).unwrap();
        let back_w = pca_inverse_transform(&m, &z).unwrap();
        let back_p = pca_inverse_transform(&plain, &pca_transform(&plain, &x).unwrap()).unwrap();
        for (a, b) in back_w.as_slice().iter().zip(back_p.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_examples() {
        let x = random(40, 5, 2);
        let m = pca_fit(&x, 3, PcaSolver::Full, 0).unwrap();
        let mean_row = mat(&[m.mean.clone()]);
        assert!(pca_transform(&m, &mean_row).unwrap().as_slice().iter().all(|v| v.abs() < 1e-12));

        // per-column sample variance of the projection equals the explained variance
        let z = pca_transform(&m, &x).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..z.nrows()).map(|i| z.get(i, c)).collect();
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            assert!((var - m.explained_variance[c]).abs() < 1e-10 * m.explained_variance[c]);
        }
        assert!(matches!(pca_transform(&m, &random(2, 4, 0)), Err(PcaError::DimensionMismatch { expected: 5, got: 4 })));
    }

    #[test]
    fn input_errors() {
        let x = random(5, 3, 0);
        assert!(matches!(pca_fit(&random(1, 3, 0), 1, PcaSolver::Full, 0), Err(PcaError::TooFewRows(1))));
        assert!(matches!(pca_fit(&x, 4, PcaSolver::Full, 0), Err(PcaError::InvalidK { k: 4, max: 3 })));
        assert!(matches!(pca_fit(&x, 0, PcaSolver::Full, 0), Err(PcaError::InvalidK { .. })));
    }

    #[test]
    fn seeded_solvers_are_deterministic() {
        let x = random(60, 20, 4);
        for solver in SOLVERS {
            assert_eq!(pca_fit(&x, 4, solver, 9).unwrap(), pca_fit(&x, 4, solver, 9).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn variances_descending_and_components_orthonormal(seed in any::<u64>(), n in 8usize..40, d in 2usize..8) {
            let x = random(n, d, seed);
            let k = (n - 1).min(d);
            for solver in SOLVERS {
                let m = pca_fit(&x, k, solver, seed).unwrap();
                prop_assert!(orthonormality_error(&m) < 1e-8);
                for w in m.explained_variance.windows(2) {
                    prop_assert!(w[0] >= w[1] * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn full_rank_projection_is_an_isometry(seed in any::<u64>()) {
            let x = random(12, 4, seed);
            let m = pca_fit(&x, 4, PcaSolver::Full, 0).unwrap();
            let z = pca_transform(&m, &x).unwrap();
            for i in 0..12 {
                for j in i + 1..12 {
                    let dx: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let dz: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    prop_assert!((dx - dz).abs() <= 1e-6 * dx.max(1e-12));
                }
            }
        }

        #[test]
        fn solvers_agree_up_to_sign(seed in any::<u64>()) {
            let x = decaying(40, 8, seed);
            let zs: Vec<EmbeddingMatrix> = SOLVERS
                .iter()
                .map(|&s| pca_transform(&pca_fit(&x, 3, s, seed).unwrap(), &x).unwrap())
                .collect();
            for z in &zs[1..] {
                for (a, b) in zs[0].as_slice().iter().zip(z.as_slice()) {
                    prop_assert!((a.abs() - b.abs()).abs() < 1e-6, "{} vs {}", a, b);
                }
            }
        }
    }
}
