//! Explicit feature maps approximating a kernel: random Fourier features and
//! Nystrom, plus the energy-based landmark selection feeding the latter.

pub mod energy;
pub mod nystrom;
pub mod rff;

pub use energy::{energy_scores, select_landmarks, EnergyScores, Sampling, DEFAULT_TEMPERATURE};
pub use nystrom::{apply_nystrom, fit_nystrom, NystromMap, EIGEN_DROP_REL};
pub use rff::{apply_rff, fit_rff, RffMap};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::kernels::{KernelBase, KernelSpec};
use crate::linalg::Matrix;

/// A fitted explicit map. [`ApproxMap::map_rows`] applies the kernel's
/// cosine prefix first, so callers hand it raw features.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproxMap {
    Rff(RffMap),
    Nystrom(NystromMap),
}

impl ApproxMap {
    pub fn spec(&self) -> &KernelSpec {
        match self {
            ApproxMap::Rff(m) => m.spec(),
            ApproxMap::Nystrom(m) => m.spec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ApproxMap::Rff(m) => m.input_dim(),
            ApproxMap::Nystrom(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ApproxMap::Rff(m) => m.num_features(),
            ApproxMap::Nystrom(m) => m.kept(),
        }
    }

    /// Maps raw feature rows; zero rows under a cosine prefix are reported
    /// with their index.
    pub fn map_rows(&self, raw: &Matrix) -> Result<Matrix> {
        let prepared = self.spec().prepare_rows(raw)?;
        match self {
            ApproxMap::Rff(m) => m.apply_rows(&prepared),
            ApproxMap::Nystrom(m) => m.apply_rows(&prepared),
        }
    }

    pub fn map_one(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let z = self.spec().prepare(raw)?;
        match self {
            ApproxMap::Rff(m) => apply_rff(m, &z),
            ApproxMap::Nystrom(m) => apply_nystrom(m, &z),
        }
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        match self {
            ApproxMap::Rff(m) => {
                w.u8(0);
                w.u64(m.seed);
                w.matrix(&m.omega);
                w.f64s(&m.phases);
            }
            ApproxMap::Nystrom(m) => {
                w.u8(1);
                w.u8(m.sampling.code());
                w.matrix(&m.landmarks);
                w.matrix(&m.u_tilde);
                w.f64s(&m.lambda);
            }
        }
        write_kernel_spec(w, self.spec());
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => {
                let seed = r.u64()?;
                let omega = r.matrix()?;
                let phases = r.f64s()?;
                let spec = read_kernel_spec(r)?;
                if phases.len() != omega.cols() {
                    return Err(Error::Format(format!(
                        "{} phases for {} frequencies",
                        phases.len(),
                        omega.cols()
                    )));
                }
                Ok(ApproxMap::Rff(RffMap {
                    omega,
                    phases,
                    spec,
                    seed,
                }))
            }
            1 => {
                let sampling = Sampling::from_code(r.u8()?)?;
                let landmarks = r.matrix()?;
                let u_tilde = r.matrix()?;
                let lambda = r.f64s()?;
                let spec = read_kernel_spec(r)?;
                Ok(ApproxMap::Nystrom(NystromMap::from_parts(
                    landmarks, u_tilde, lambda, spec, sampling,
                )?))
            }
            other => Err(Error::Format(format!("unknown map kind {other}"))),
        }
    }
}

/// `base u8, gamma f64, c f64, degree u32, cosine_prefix u8`.
pub(crate) fn write_kernel_spec(w: &mut ByteWriter, spec: &KernelSpec) {
    let base = spec.base();
    let (gamma, c, degree) = match base {
        KernelBase::Gaussian { gamma } | KernelBase::Laplacian { gamma } => (gamma, 0.0, 0),
        KernelBase::Polynomial { c, degree } => (0.0, c, degree),
        KernelBase::Linear | KernelBase::Cosine => (0.0, 0.0, 0),
    };
    w.u8(base.code());
    w.f64(gamma);
    w.f64(c);
    w.u32(degree);
    w.u8(spec.cosine_prefix() as u8);
}

pub(crate) fn read_kernel_spec(r: &mut ByteReader<'_>) -> Result<KernelSpec> {
    let code = r.u8()?;
    let gamma = r.f64()?;
    let c = r.f64()?;
    let degree = r.u32()?;
    let prefix = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad cosine-prefix flag {other}"))),
    };
    let base = match code {
        0 => KernelBase::Gaussian { gamma },
        1 => KernelBase::Laplacian { gamma },
        2 => KernelBase::Polynomial { c, degree },
        3 => KernelBase::Linear,
        4 => KernelBase::Cosine,
        other => return Err(Error::Format(format!("unknown kernel code {other}"))),
    };
    KernelSpec::new(base, prefix).map_err(|e| Error::Format(format!("invalid kernel block: {e}")))
}
