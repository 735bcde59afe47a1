use crate::error::{Error, Result};
use crate::kernels::{KernelBase, KernelSpec};
use crate::linalg::{dot, Matrix};
use crate::rng::SeededRng;

/// Random Fourier features for a shift-invariant kernel:
/// `phi_i(z) = sqrt(2 / M_r) * cos(z . omega_i + u_i)`.
///
/// Inputs are expected in the kernel's input space, i.e. already
/// cosine-normalized when the spec carries the prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// `m x M_r`; column `i` is `omega_i`.
    pub(crate) omega: Matrix,
    pub(crate) phases: Vec<f64>,
    pub(crate) spec: KernelSpec,
    pub(crate) seed: u64,
}

/// Draws frequencies from the kernel's spectral density: normal with
/// standard deviation `sqrt(2 gamma)` for the Gaussian kernel, Cauchy with
/// scale `gamma` per coordinate for the Laplacian kernel. Phases are
/// uniform on `[0, 2 pi)`.
pub fn fit_rff(spec: &KernelSpec, dim: usize, num_features: usize, rng: &mut SeededRng) -> Result<RffMap> {
    if num_features == 0 || dim == 0 {
        return Err(Error::Parameter(format!(
            "random features need dim >= 1 and M_r >= 1, got dim {dim}, M_r {num_features}"
        )));
    }
    let draw: Box<dyn Fn(&mut SeededRng) -> f64> = match spec.base() {
        KernelBase::Gaussian { gamma } => {
            let std = (2.0 * gamma).sqrt();
            Box::new(move |r| std * r.normal())
        }
        KernelBase::Laplacian { gamma } => Box::new(move |r| gamma * r.cauchy()),
        other => {
            return Err(Error::UnsupportedKernel(format!(
                "random Fourier features need a shift-invariant kernel, got {}",
                other.name()
            )))
        }
    };
    let seed = rng.seed();
    let mut omega = Matrix::zeros(dim, num_features);
    let mut phases = Vec::with_capacity(num_features);
    for i in 0..num_features {
        for k in 0..dim {
            omega.set(k, i, draw(rng));
        }
        phases.push(rng.phase());
    }
    Ok(RffMap {
        omega,
        phases,
        spec: *spec,
        seed,
    })
}

impl RffMap {
    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.omega.rows()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn omega(&self) -> &Matrix {
        &self.omega
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Map rows already in the kernel's input space.
    pub fn apply_rows(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "random feature map expects width {}, got {}",
                self.input_dim(),
                rows.cols()
            )));
        }
        let scale = (2.0 / self.num_features() as f64).sqrt();
        let mut out = rows.matmul(&self.omega)?;
        for i in 0..out.rows() {
            for (v, u) in out.row_mut(i).iter_mut().zip(&self.phases) {
                *v = scale * (*v + u).cos();
            }
        }
        Ok(out)
    }
}

/// Single-vector form of [`RffMap::apply_rows`].
pub fn apply_rff(map: &RffMap, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != map.input_dim() {
        return Err(Error::Shape(format!(
            "random feature map expects length {}, got {}",
            map.input_dim(),
            z.len()
        )));
    }
    let scale = (2.0 / map.num_features() as f64).sqrt();
    let mut column = vec![0.0; map.input_dim()];
    Ok((0..map.num_features())
        .map(|i| {
            for (k, c) in column.iter_mut().enumerate() {
                *c = map.omega.get(k, i);
            }
            scale * (dot(z, &column) + map.phases[i]).cos()
        })
        .collect())
}
