//! Exact kernel evaluations.
//!
//! A [`KernelSpec`] is a base kernel plus an optional cosine prefix: with the
//! prefix set, both arguments are projected onto the unit sphere before the
//! base kernel sees them (the "Cosine-X" kernels).

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sq_dist, Matrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelBase {
    /// `exp(-gamma * |a - b|_2^2)`
    Gaussian { gamma: f64 },
    /// `exp(-gamma * |a - b|_1)`
    Laplacian { gamma: f64 },
    /// `(a . b + c)^degree`
    Polynomial { c: f64, degree: u32 },
    Linear,
    /// `a . b / (|a| |b|)`
    Cosine,
}

impl KernelBase {
    pub fn name(&self) -> &'static str {
        match self {
            KernelBase::Gaussian { .. } => "gaussian",
            KernelBase::Laplacian { .. } => "laplacian",
            KernelBase::Polynomial { .. } => "polynomial",
            KernelBase::Linear => "linear",
            KernelBase::Cosine => "cosine",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            KernelBase::Gaussian { .. } => 0,
            KernelBase::Laplacian { .. } => 1,
            KernelBase::Polynomial { .. } => 2,
            KernelBase::Linear => 3,
            KernelBase::Cosine => 4,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            KernelBase::Gaussian { gamma } | KernelBase::Laplacian { gamma } => Some(*gamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    base: KernelBase,
    cosine_prefix: bool,
}

impl KernelSpec {
    pub fn new(base: KernelBase, cosine_prefix: bool) -> Result<Self> {
        match base {
            KernelBase::Gaussian { gamma } | KernelBase::Laplacian { gamma }
                if !(gamma > 0.0 && gamma.is_finite()) =>
            {
                return Err(Error::Parameter(format!(
                    "{} kernel needs gamma > 0, got {gamma}",
                    base.name()
                )));
            }
            KernelBase::Polynomial { c, degree } if degree == 0 || !c.is_finite() => {
                return Err(Error::Parameter(format!(
                    "polynomial kernel needs degree >= 1 and finite c, got degree {degree}, c {c}"
                )));
            }
            KernelBase::Cosine if cosine_prefix => {
                return Err(Error::Parameter(
                    "cosine kernel with a cosine prefix is redundant".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            base,
            cosine_prefix,
        })
    }

    pub fn gaussian(gamma: f64) -> Result<Self> {
        Self::new(KernelBase::Gaussian { gamma }, false)
    }

    pub fn cosine_gaussian(gamma: f64) -> Result<Self> {
        Self::new(KernelBase::Gaussian { gamma }, true)
    }

    pub fn linear() -> Self {
        Self {
            base: KernelBase::Linear,
            cosine_prefix: false,
        }
    }

    pub fn base(&self) -> KernelBase {
        self.base
    }

    pub fn cosine_prefix(&self) -> bool {
        self.cosine_prefix
    }

    /// The same base kernel with the cosine prefix removed; used once inputs
    /// have already been normalized.
    pub fn without_prefix(&self) -> Self {
        Self {
            base: self.base,
            cosine_prefix: false,
        }
    }

    /// Applies the cosine prefix to `z` when configured.
    pub fn prepare<'a>(&self, z: &'a [f64]) -> Result<Cow<'a, [f64]>> {
        if self.cosine_prefix {
            Ok(Cow::Owned(cos_map(z)?))
        } else {
            Ok(Cow::Borrowed(z))
        }
    }

    /// Applies the cosine prefix to every row when configured. Zero rows are
    /// reported with their index.
    pub fn prepare_rows<'a>(&self, rows: &'a Matrix) -> Result<Cow<'a, Matrix>> {
        if self.cosine_prefix {
            Ok(Cow::Owned(cos_map_rows(rows)?))
        } else {
            Ok(Cow::Borrowed(rows))
        }
    }

    /// Base kernel on inputs that already went through [`Self::prepare`].
    #[inline]
    pub(crate) fn eval_prepared(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.base {
            KernelBase::Gaussian { gamma } => (-gamma * sq_dist(a, b)).exp(),
            KernelBase::Laplacian { gamma } => {
                let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                (-gamma * l1).exp()
            }
            KernelBase::Polynomial { c, degree } => (dot(a, b) + c).powi(degree as i32),
            KernelBase::Linear => dot(a, b),
            KernelBase::Cosine => {
                let denom = norm2(a) * norm2(b);
                (dot(a, b) / denom).clamp(-1.0, 1.0)
            }
        }
    }

    /// Kernel values between one prepared input and every prepared row.
    pub(crate) fn eval_against_rows(&self, z: &[f64], rows: &Matrix) -> Vec<f64> {
        rows.row_iter().map(|r| self.eval_prepared(z, r)).collect()
    }
}

/// `z / |z|_2`.
pub fn cos_map(z: &[f64]) -> Result<Vec<f64>> {
    let n = norm2(z);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateInput { row: None });
    }
    Ok(z.iter().map(|v| v / n).collect())
}

pub fn cos_map_rows(rows: &Matrix) -> Result<Matrix> {
    let mut out = rows.clone();
    for i in 0..rows.rows() {
        let mapped = cos_map(rows.row(i)).map_err(|_| Error::DegenerateInput { row: Some(i) })?;
        out.row_mut(i).copy_from_slice(&mapped);
    }
    Ok(out)
}

fn check_zero(spec: &KernelSpec, z: &[f64]) -> Result<()> {
    if matches!(spec.base, KernelBase::Cosine) && norm2(z) == 0.0 {
        return Err(Error::DegenerateInput { row: None });
    }
    Ok(())
}

pub fn kernel_eval(spec: &KernelSpec, z1: &[f64], z2: &[f64]) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(Error::Shape(format!(
            "kernel arguments of length {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let a = spec.prepare(z1)?;
    let b = spec.prepare(z2)?;
    check_zero(spec, &a)?;
    check_zero(spec, &b)?;
    Ok(spec.eval_prepared(&a, &b))
}

/// `K[i][j] = k(a_i, b_j)`.
pub fn kernel_matrix(spec: &KernelSpec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "kernel inputs of width {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let a = spec.prepare_rows(a)?;
    let b = spec.prepare_rows(b)?;
    if matches!(spec.base, KernelBase::Cosine) {
        for (m, _) in [(&a, 0), (&b, 1)] {
            if let Some(i) = m.row_iter().position(|r| norm2(r) == 0.0) {
                return Err(Error::DegenerateInput { row: Some(i) });
            }
        }
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for (j, bj) in b.row_iter().enumerate() {
            out.set(i, j, spec.eval_prepared(ai, bj));
        }
    }
    Ok(out)
}

/// `1 / (2 * median squared distance)` over up to `pairs` random distinct
/// row pairs of `rows` (already in the kernel's input space).
pub fn median_heuristic_gamma(rows: &Matrix, pairs: usize, rng: &mut SeededRng) -> Result<f64> {
    let n = rows.rows();
    if n < 2 {
        return Err(Error::Data("median heuristic needs at least two rows".into()));
    }
    let mut dists: Vec<f64> = (0..pairs)
        .map(|_| {
            let i = rng.below(n);
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            sq_dist(rows.row(i), rows.row(j))
        })
        .filter(|d| *d > 0.0)
        .collect();
    if dists.is_empty() {
        return Err(Error::Data(
            "median heuristic: all sampled pairs coincide".into(),
        ));
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len().is_multiple_of(2) {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    Ok(1.0 / (2.0 * median))
}
