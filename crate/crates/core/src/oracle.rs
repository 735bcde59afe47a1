//! Exact kernel PCA reconstruction errors from the full training kernel
//! matrix. Cubic in the training size, so only for small instances.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{dot, sym_eigen, symmetrize, EigenDecomposition, Matrix};

pub const MAX_ORACLE_ROWS: usize = 5000;

/// Eigenpairs of the (centered) kernel matrix at or below this fraction of
/// the largest eigenvalue are ignored by the standard form.
pub const ORACLE_EIGEN_REL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ExactKpcaModel {
    /// Training rows in the kernel's input space (cosine-normalized when the
    /// spec carries the prefix).
    train: Matrix,
    spec: KernelSpec,
    eig: EigenDecomposition,
    p: usize,
    centered: bool,
    /// Row means and grand mean of the uncentered kernel matrix.
    row_means: Vec<f64>,
    grand_mean: f64,
}

/// Builds and eigendecomposes the training kernel matrix, double-centered
/// when `centered` is set. `p` is the number of trailing residual directions.
pub fn fit_exact(train: &Matrix, spec: &KernelSpec, p: usize, centered: bool) -> Result<ExactKpcaModel> {
    let n = train.rows();
    if n < 2 {
        return Err(Error::Data(format!("exact KPCA needs at least 2 rows, got {n}")));
    }
    if n > MAX_ORACLE_ROWS {
        return Err(Error::Resource(format!(
            "exact KPCA is limited to {MAX_ORACLE_ROWS} training rows, got {n}"
        )));
    }
    if p >= n {
        return Err(Error::Parameter(format!(
            "residual count p = {p} must be below the training size {n}"
        )));
    }
    let prepared = spec.prepare_rows(train)?.into_owned();
    let base = spec.without_prefix();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = base.eval_prepared(prepared.row(i), prepared.row(j));
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    let row_means: Vec<f64> = k.row_iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    if centered {
        for i in 0..n {
            for j in 0..n {
                let v = k.get(i, j) - row_means[i] - row_means[j] + grand_mean;
                k.set(i, j, v);
            }
        }
        symmetrize(&mut k);
    }
    let eig = sym_eigen(&k)?;
    Ok(ExactKpcaModel {
        train: prepared,
        spec: *spec,
        eig,
        p,
        centered,
        row_means,
        grand_mean,
    })
}

impl ExactKpcaModel {
    pub fn n_train(&self) -> usize {
        self.train.rows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of leading directions, `N - p`.
    pub fn q(&self) -> usize {
        self.n_train() - self.p
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eig
    }

    /// Leading eigenpairs used by the standard form.
    pub fn retained(&self) -> usize {
        let top = self.eig.eigenvalues[0];
        if top.is_nan() || top <= 0.0 {
            return 0;
        }
        self.eig.eigenvalues[..self.q()]
            .iter()
            .take_while(|&&l| l > ORACLE_EIGEN_REL * top)
            .count()
    }

    /// Kernel vector against the training rows and `k(z, z)`, for a raw query.
    fn kernel_vector(&self, z_hat: &[f64]) -> Result<(Vec<f64>, f64)> {
        if z_hat.len() != self.train.cols() {
            return Err(Error::Shape(format!(
                "query of length {} against an oracle over width {}",
                z_hat.len(),
                self.train.cols()
            )));
        }
        let z = self.spec.prepare(z_hat)?;
        let base = self.spec.without_prefix();
        Ok((base.eval_against_rows(&z, &self.train), base.eval_prepared(&z, &z)))
    }

    /// `|U_p^T k_z|_2` with `U_p` the trailing `p` eigenvectors of the
    /// uncentered kernel matrix.
    pub fn paper_form(&self, z_hat: &[f64]) -> Result<f64> {
        if self.centered {
            return Err(Error::Usage("the printed form is defined on the uncentered kernel matrix".into()));
        }
        let (kz, _) = self.kernel_vector(z_hat)?;
        let vecs = &self.eig.eigenvectors;
        let mut sq = 0.0;
        for j in self.q()..self.n_train() {
            let c: f64 = (0..self.n_train()).map(|i| vecs.get(i, j) * kz[i]).sum();
            sq += c * c;
        }
        Ok(sq.sqrt())
    }

    /// `sqrt(k(z,z) - sum_j (u_j . k_z)^2 / lambda_j)` over the retained
    /// leading eigenpairs, on centered kernel values when the model is
    /// centered. Clamped at zero.
    pub fn standard_form(&self, z_hat: &[f64]) -> Result<f64> {
        let (mut kz, mut kzz) = self.kernel_vector(z_hat)?;
        if self.centered {
            let n = self.n_train() as f64;
            let mean = kz.iter().sum::<f64>() / n;
            for (v, r) in kz.iter_mut().zip(&self.row_means) {
                *v += self.grand_mean - mean - r;
            }
            kzz += self.grand_mean - 2.0 * mean;
        }
        let vecs = &self.eig.eigenvectors;
        let mut explained = 0.0;
        let mut column = vec![0.0; self.n_train()];
        for j in 0..self.retained() {
            for (i, c) in column.iter_mut().enumerate() {
                *c = vecs.get(i, j);
            }
            let c = dot(&column, &kz);
            explained += c * c / self.eig.eigenvalues[j];
        }
        Ok((kzz - explained).max(0.0).sqrt())
    }

    pub fn standard_errors(&self, queries: &Matrix) -> Result<Vec<f64>> {
        queries
            .row_iter()
            .enumerate()
            .map(|(i, r)| self.standard_form(r).map_err(|e| with_row(e, i)))
            .collect()
    }

    pub fn paper_errors(&self, queries: &Matrix) -> Result<Vec<f64>> {
        queries
            .row_iter()
            .enumerate()
            .map(|(i, r)| self.paper_form(r).map_err(|e| with_row(e, i)))
            .collect()
    }
}

fn with_row(e: Error, row: usize) -> Error {
    match e {
        Error::DegenerateInput { row: None } => Error::DegenerateInput { row: Some(row) },
        other => other,
    }
}

pub fn exact_error_paper_form(model: &ExactKpcaModel, z_hat: &[f64]) -> Result<f64> {
    model.paper_form(z_hat)
}

pub fn exact_error_standard_form(model: &ExactKpcaModel, z_hat: &[f64]) -> Result<f64> {
    model.standard_form(z_hat)
}

/// Mean absolute difference between paired error vectors.
pub fn mean_abs_gap(approx: &[f64], exact: &[f64]) -> Result<f64> {
    if approx.len() != exact.len() || approx.is_empty() {
        return Err(Error::Shape(format!(
            "error vectors of length {} and {}",
            approx.len(),
            exact.len()
        )));
    }
    Ok(approx.iter().zip(exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / approx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{cos_map_rows, kernel_matrix, KernelBase};
    use crate::linalg::covariance;
    use crate::rng::SeededRng;
    use crate::subspace::{fit_subspace_with, reconstruction_error, Rank};

    fn random_rows(n: usize, m: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        Matrix::from_fn(n, m, |_, j| (1.0 + j as f64) * rng.normal())
    }

    #[test]
    fn centered_linear_spectrum_matches_covariance() {
        let x = random_rows(10, 3, 1);
        let model = fit_exact(&x, &KernelSpec::linear(), 0, true).unwrap();
        let cov = covariance(&x, &x.column_means()).unwrap();
        let cov_eig = sym_eigen(&cov).unwrap();
        for j in 0..3 {
            assert!((model.eigen().eigenvalues[j] - cov_eig.eigenvalues[j]).abs() < 1e-10);
        }
        for l in &model.eigen().eigenvalues[3..] {
            assert!(l.abs() < 1e-10);
        }
    }

    #[test]
    fn identical_points_give_rank_one() {
        let x = Matrix::from_rows(&[[0.5, -1.0], [0.5, -1.0]]).unwrap();
        let model = fit_exact(&x, &KernelSpec::gaussian(1.0).unwrap(), 1, false).unwrap();
        assert!((model.eigen().eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!(model.eigen().eigenvalues[1].abs() < 1e-14);
        assert_eq!(model.retained(), 1);
    }

    #[test]
    fn paper_form_edge_cases() {
        let x = random_rows(6, 2, 2);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let none = fit_exact(&x, &spec, 0, false).unwrap();
        assert_eq!(exact_error_paper_form(&none, &[0.3, 0.1]).unwrap(), 0.0);
        // far away from every training row the kernel vector underflows to zero
        let some = fit_exact(&x, &spec, 3, false).unwrap();
        assert_eq!(exact_error_paper_form(&some, &[1e3, 1e3]).unwrap(), 0.0);
        let centered = fit_exact(&x, &spec, 3, true).unwrap();
        assert!(matches!(exact_error_paper_form(&centered, &[0.0, 0.0]), Err(Error::Usage(_))));
        assert!(matches!(exact_error_paper_form(&some, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn training_rows_reconstruct_at_full_rank() {
        let x = random_rows(25, 4, 3);
        for centered in [false, true] {
            let model = fit_exact(&x, &KernelSpec::cosine_gaussian(2.0).unwrap(), 0, centered).unwrap();
            for i in 0..25 {
                assert!(exact_error_standard_form(&model, x.row(i)).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_kernel_matches_pca() {
        let x = random_rows(30, 5, 4);
        let probes = random_rows(20, 5, 5);
        for q in 1..=5 {
            let pca = fit_subspace_with(&x, Rank::Fixed(q)).unwrap();
            let exact = fit_exact(&x, &KernelSpec::linear(), 30 - q, true).unwrap();
            for i in 0..20 {
                let a = reconstruction_error(&pca, probes.row(i)).unwrap();
                let b = exact_error_standard_form(&exact, probes.row(i)).unwrap();
                assert!((a - b).abs() < 1e-8, "q {q}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn uncentered_standard_form_is_kernel_projection_residual() {
        // k(z,z) - k_z^T K^{-1} k_z at full rank, checked through an explicit solve
        let x = cos_map_rows(&random_rows(8, 3, 6)).unwrap();
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let model = fit_exact(&x, &spec, 0, false).unwrap();
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        let z = [0.2, -0.5, 0.3];
        let kz: Vec<f64> = x.row_iter().map(|r| crate::kernels::kernel_eval(&spec, &z, r).unwrap()).collect();
        // conjugate gradients on the symmetric positive definite K
        let mut sol = vec![0.0; 8];
        let mut r = kz.clone();
        let mut d = r.clone();
        for _ in 0..200 {
            let kd = k.matvec(&d).unwrap();
            let rr = dot(&r, &r);
            if rr < 1e-30 {
                break;
            }
            let alpha = rr / dot(&d, &kd);
            for i in 0..8 {
                sol[i] += alpha * d[i];
                r[i] -= alpha * kd[i];
            }
            let beta = dot(&r, &r) / rr;
            for i in 0..8 {
                d[i] = r[i] + beta * d[i];
            }
        }
        let expected = (1.0 - dot(&kz, &sol)).max(0.0).sqrt();
        let got = exact_error_standard_form(&model, &z).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn paper_form_ordering_tracks_standard_form() {
        // the printed form drops the eigenvalue scaling, so the orderings agree
        // only loosely; on this instance the rank correlation stays well below 1
        let x = cos_map_rows(&random_rows(20, 3, 7)).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let probes = cos_map_rows(&random_rows(50, 3, 8)).unwrap();
        for p in [5, 10, 15] {
            let model = fit_exact(&x, &spec, p, false).unwrap();
            let a = model.paper_errors(&probes).unwrap();
            let b = model.standard_errors(&probes).unwrap();
            let rho = spearman(&a, &b);
            assert!(rho > 0.5 && rho < 1.0, "p {p}: rank correlation {rho}");
        }
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn errors_and_limits() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(matches!(fit_exact(&Matrix::zeros(1, 2), &spec, 0, false), Err(Error::Data(_))));
        assert!(matches!(fit_exact(&random_rows(4, 2, 0), &spec, 4, false), Err(Error::Parameter(_))));
        let big = Matrix::zeros(MAX_ORACLE_ROWS + 1, 1);
        assert!(matches!(fit_exact(&big, &spec, 0, false), Err(Error::Resource(_))));
        let cos = KernelSpec::new(KernelBase::Gaussian { gamma: 1.0 }, true).unwrap();
        let model = fit_exact(&random_rows(4, 2, 1), &cos, 1, true).unwrap();
        let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(model.standard_errors(&q), Err(Error::DegenerateInput { row: Some(1) })));
        assert!(mean_abs_gap(&[1.0], &[]).is_err());
        assert_eq!(mean_abs_gap(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn deterministic() {
        let x = random_rows(12, 3, 9);
        let spec = KernelSpec::cosine_gaussian(0.5).unwrap();
        let a = fit_exact(&x, &spec, 4, true).unwrap();
        let b = fit_exact(&x, &spec, 4, true).unwrap();
        assert_eq!(a.eigen(), b.eigen());
    }
}
