use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{sym_eigen, Matrix};
use crate::maps::energy::Sampling;

/// Eigenpairs of the landmark kernel matrix at or below this fraction of the
/// largest eigenvalue are dropped before taking inverse square roots.
pub const EIGEN_DROP_REL: f64 = 1e-10;

/// Nystrom feature map `Phi(z) = Lambda^{-1/2} U^T [k(z, l_1), ..., k(z, l_M)]`
/// over retained eigenpairs of the landmark kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromMap {
    /// Landmark rows, cosine-normalized when the spec carries the prefix.
    pub(crate) landmarks: Matrix,
    /// `M_n x kept`.
    pub(crate) u_tilde: Matrix,
    pub(crate) lambda: Vec<f64>,
    pub(crate) spec: KernelSpec,
    pub(crate) sampling: Sampling,
    /// `Lambda^{-1/2} U^T`, `kept x M_n`; derived from the fields above.
    whitening: Matrix,
}

/// Builds the map from raw landmark rows (the cosine prefix is applied here
/// when configured).
pub fn fit_nystrom(spec: &KernelSpec, landmarks: &Matrix, sampling: Sampling) -> Result<NystromMap> {
    if landmarks.rows() == 0 {
        return Err(Error::Parameter("Nystrom map needs at least one landmark".into()));
    }
    let prepared = spec.prepare_rows(landmarks)?.into_owned();
    let base = spec.without_prefix();
    let mut gram = Matrix::zeros(prepared.rows(), prepared.rows());
    for i in 0..prepared.rows() {
        for j in 0..=i {
            let v = base.eval_prepared(prepared.row(i), prepared.row(j));
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    let eig = sym_eigen(&gram)?;
    let top = eig.eigenvalues[0];
    if top.is_nan() || top <= 0.0 {
        return Err(Error::DegenerateKernel(format!(
            "landmark kernel matrix has no positive eigenvalue (largest {top:e})"
        )));
    }
    let kept = eig
        .eigenvalues
        .iter()
        .take_while(|&&l| l > EIGEN_DROP_REL * top)
        .count();
    NystromMap::from_parts(
        prepared,
        eig.eigenvectors.leading_columns(kept),
        eig.eigenvalues[..kept].to_vec(),
        *spec,
        sampling,
    )
}

impl NystromMap {
    pub(crate) fn from_parts(
        landmarks: Matrix,
        u_tilde: Matrix,
        lambda: Vec<f64>,
        spec: KernelSpec,
        sampling: Sampling,
    ) -> Result<Self> {
        if u_tilde.rows() != landmarks.rows() || u_tilde.cols() != lambda.len() {
            return Err(Error::Shape(format!(
                "{} landmarks with a {}x{} eigenvector block and {} eigenvalues",
                landmarks.rows(),
                u_tilde.rows(),
                u_tilde.cols(),
                lambda.len()
            )));
        }
        if lambda.is_empty() || lambda.iter().any(|l| l.is_nan() || *l <= 0.0) {
            return Err(Error::DegenerateKernel(
                "retained eigenvalues must be strictly positive".into(),
            ));
        }
        let whitening = Matrix::from_fn(lambda.len(), landmarks.rows(), |j, i| {
            u_tilde.get(i, j) / lambda[j].sqrt()
        });
        Ok(Self {
            landmarks,
            u_tilde,
            lambda,
            spec,
            sampling,
            whitening,
        })
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.rows()
    }

    /// Output dimension (retained eigenpairs).
    pub fn kept(&self) -> usize {
        self.lambda.len()
    }

    pub fn input_dim(&self) -> usize {
        self.landmarks.cols()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn landmarks(&self) -> &Matrix {
        &self.landmarks
    }

    pub fn u_tilde(&self) -> &Matrix {
        &self.u_tilde
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Map rows already in the kernel's input space.
    pub fn apply_rows(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "Nystrom map expects width {}, got {}",
                self.input_dim(),
                rows.cols()
            )));
        }
        let base = self.spec.without_prefix();
        let mut k = Matrix::zeros(rows.rows(), self.num_landmarks());
        for i in 0..rows.rows() {
            let z = rows.row(i);
            for (v, l) in k.row_mut(i).iter_mut().zip(self.landmarks.row_iter()) {
                *v = base.eval_prepared(z, l);
            }
        }
        k.matmul_t(&self.whitening)
    }
}

/// Single-vector form of [`NystromMap::apply_rows`].
pub fn apply_nystrom(map: &NystromMap, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != map.input_dim() {
        return Err(Error::Shape(format!(
            "Nystrom map expects length {}, got {}",
            map.input_dim(),
            z.len()
        )));
    }
    let k = map.spec.without_prefix().eval_against_rows(z, &map.landmarks);
    map.whitening.matvec(&k)
}
