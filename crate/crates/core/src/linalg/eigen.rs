use faer::Side;

use super::Matrix;
use crate::error::{Error, Result};

/// Matrices up to this order go through cyclic Jacobi; larger ones through
/// `faer`'s tridiagonal solver.
pub const JACOBI_MAX_DIM: usize = 128;

const SYMMETRY_TOL: f64 = 1e-9;
const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Column `j` of `eigenvectors` pairs with `eigenvalues[j]`. Each column is
/// sign-normalized so that its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.eigenvectors.clone();
        let n = scaled.cols();
        for i in 0..scaled.rows() {
            for (j, v) in scaled.row_mut(i).iter_mut().enumerate().take(n) {
                *v *= self.eigenvalues[j];
            }
        }
        scaled
            .matmul_t(&self.eigenvectors)
            .expect("eigenvector matrix is square")
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    let asym = a.asymmetry()?;
    if asym > SYMMETRY_TOL {
        return Err(Error::Shape(format!(
            "matrix is not symmetric (max |A_ij - A_ji| = {asym:.3e})"
        )));
    }
    if !a.is_finite() {
        return Err(Error::Data("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Symmetric eigendecomposition. Small matrices use cyclic Jacobi, larger
/// ones a Householder tridiagonalization. Both are deterministic.
pub fn sym_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(a)?;
    if a.rows() <= JACOBI_MAX_DIM {
        jacobi(a)
    } else {
        tridiagonal(a)
    }
}

/// Cyclic Jacobi rotations regardless of size.
pub fn sym_eigen_jacobi(a: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(a)?;
    jacobi(a)
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

fn jacobi(input: &Matrix) -> Result<EigenDecomposition> {
    let n = input.rows();
    let mut a = input.data().to_vec();
    // symmetrize exactly so rotations see one value per pair
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    // rows of `vt` are eigenvectors
    let mut vt = Matrix::identity(n).into_data();
    let threshold = JACOBI_REL_TOL * input.frobenius_norm();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a, n);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence {
                residual: off,
                sweeps,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
    }

    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let vt = Matrix::new(n, n, vt)?;
    Ok(finish(values, |j| vt.row(j).to_vec(), n))
}

fn tridiagonal(a: &Matrix) -> Result<EigenDecomposition> {
    let n = a.rows();
    let evd = a
        .as_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Convergence {
            residual: f64::NAN,
            sweeps: 0,
        })?;
    super::clear_upper_simd();
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    Ok(finish(values, |j| (0..n).map(|i| u[(i, j)]).collect(), n))
}

/// Sorts eigenpairs descending (ties by original position) and fixes signs.
fn finish(
    values: Vec<f64>,
    vector: impl Fn(usize) -> Vec<f64>,
    n: usize,
) -> EigenDecomposition {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));

    let mut eigenvectors = Matrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = vector(src);
        let mut pivot = 0;
        for (k, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        if v.get(pivot).is_some_and(|&x| x < 0.0) {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (row, x) in v.into_iter().enumerate() {
            eigenvectors.set(row, col, x);
        }
        eigenvalues.push(values[src]);
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}
