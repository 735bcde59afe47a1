//! Principal subspace of (mapped) training rows and reconstruction errors.

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::{axpy, covariance, norm2, sym_eigen, symmetrize, Matrix};

/// Eigenvalues at or below this fraction of the largest count as zero when
/// selecting the subspace dimension.
pub const POSITIVE_EIGEN_REL: f64 = 1e-12;

pub const DEFAULT_EVR_RFF: f64 = 0.90;
pub const DEFAULT_EVR_NYSTROM: f64 = 0.99;

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rank {
    /// Smallest `q` whose cumulative explained variance ratio reaches the
    /// threshold, over strictly positive eigenvalues.
    Evr(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub(crate) mean: Vec<f64>,
    /// `dim x q`, orthonormal columns.
    pub(crate) projection: Matrix,
    /// All `dim` eigenvalues, descending.
    pub(crate) spectrum: Vec<f64>,
    pub(crate) q: usize,
    pub(crate) evr_threshold: f64,
    /// Trailing `dim - q` eigenvectors, when the full basis was computed.
    pub(crate) residual: Option<Matrix>,
}

fn positive_count(spectrum: &[f64]) -> usize {
    let top = spectrum.first().copied().unwrap_or(0.0);
    if top.is_nan() || top <= 0.0 {
        return 0;
    }
    spectrum
        .iter()
        .take_while(|&&l| l > POSITIVE_EIGEN_REL * top)
        .count()
}

/// Subspace size for `rank` over a descending spectrum, plus the explained
/// variance ratio it achieves.
pub fn select_rank(spectrum: &[f64], rank: Rank) -> Result<(usize, f64)> {
    let positive = positive_count(spectrum);
    let total: f64 = spectrum[..positive].iter().sum();
    let ratio = |q: usize| {
        if total > 0.0 {
            spectrum[..q.min(positive)].iter().sum::<f64>() / total
        } else {
            1.0
        }
    };
    match rank {
        Rank::Fixed(q) => {
            if q > spectrum.len() {
                return Err(Error::Parameter(format!(
                    "cannot keep {q} directions of a {}-dimensional space",
                    spectrum.len()
                )));
            }
            Ok((q, ratio(q)))
        }
        Rank::Evr(threshold) => {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Parameter(format!(
                    "explained variance ratio must lie in (0, 1], got {threshold}"
                )));
            }
            let target = threshold * total - 1e-12 * total;
            let mut cum = 0.0;
            let mut q = 0;
            while q < positive {
                cum += spectrum[q];
                q += 1;
                if cum >= target {
                    break;
                }
            }
            Ok((q, threshold))
        }
    }
}

pub fn fit_subspace(mapped: &Matrix, evr_threshold: f64) -> Result<SubspaceModel> {
    fit_subspace_with(mapped, Rank::Evr(evr_threshold))
}

/// Fits from rows in memory. When there are fewer rows than columns the
/// eigenvectors come from the row Gram matrix and the residual basis is not
/// retained.
pub fn fit_subspace_with(mapped: &Matrix, rank: Rank) -> Result<SubspaceModel> {
    if mapped.rows() < 2 {
        return Err(Error::Data(format!(
            "subspace fitting needs at least 2 rows, got {}",
            mapped.rows()
        )));
    }
    let mean = mapped.column_means();
    if mapped.rows() >= mapped.cols() {
        let cov = covariance(mapped, &mean)?;
        from_scatter(mean, &cov, rank)
    } else {
        from_gram(mapped, mean, rank)
    }
}

/// Fits from a precomputed mean and unnormalized scatter matrix.
pub fn from_scatter(mean: Vec<f64>, scatter: &Matrix, rank: Rank) -> Result<SubspaceModel> {
    if scatter.rows() != mean.len() || scatter.cols() != mean.len() {
        return Err(Error::Shape(format!(
            "scatter {}x{} against mean of length {}",
            scatter.rows(),
            scatter.cols(),
            mean.len()
        )));
    }
    let eig = sym_eigen(scatter)?;
    let (q, evr) = select_rank(&eig.eigenvalues, rank)?;
    Ok(SubspaceModel {
        mean,
        projection: eig.eigenvectors.leading_columns(q),
        residual: Some(eig.eigenvectors.trailing_columns(q)),
        spectrum: eig.eigenvalues,
        q,
        evr_threshold: evr,
    })
}

fn from_gram(mapped: &Matrix, mean: Vec<f64>, rank: Rank) -> Result<SubspaceModel> {
    let dim = mapped.cols();
    let centered = mapped.center_rows(&mean)?;
    let mut gram = centered.matmul_t(&centered)?;
    symmetrize(&mut gram);
    let eig = sym_eigen(&gram)?;
    let mut spectrum = eig.eigenvalues.clone();
    spectrum.resize(dim, 0.0);
    let (q, evr) = select_rank(&spectrum, rank)?;
    let usable = positive_count(&spectrum).min(q);
    if usable < q {
        return Err(Error::Parameter(format!(
            "{q} directions requested but the {} training rows only span {usable}",
            mapped.rows()
        )));
    }
    // u_j = Xc^T v_j / sqrt(lambda_j)
    let v = eig.eigenvectors.leading_columns(q);
    let mut projection = centered.t_matmul(&v)?;
    for j in 0..q {
        let s = 1.0 / eig.eigenvalues[j].sqrt();
        let mut col: Vec<f64> = (0..dim).map(|i| projection.get(i, j) * s).collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold(0, |p, (k, x)| if x.abs() > col[p].abs() { k } else { p });
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in col.into_iter().enumerate() {
            projection.set(i, j, x);
        }
    }
    Ok(SubspaceModel {
        mean,
        projection,
        spectrum,
        q,
        evr_threshold: evr,
        residual: None,
    })
}

/// Streaming mean and scatter over row chunks, shifted by the first chunk's
/// mean to limit cancellation.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    n: usize,
    shift: Vec<f64>,
    sum: Vec<f64>,
    scatter: Matrix,
}

impl ScatterAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            shift: Vec::new(),
            sum: vec![0.0; dim],
            scatter: Matrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn add_rows(&mut self, rows: &Matrix) -> Result<()> {
        if rows.cols() != self.sum.len() {
            return Err(Error::Shape(format!(
                "rows of width {} into a {}-dimensional accumulator",
                rows.cols(),
                self.sum.len()
            )));
        }
        if rows.rows() == 0 {
            return Ok(());
        }
        if self.n == 0 {
            self.shift = rows.column_means();
        }
        let shifted = rows.center_rows(&self.shift)?;
        for r in shifted.row_iter() {
            axpy(1.0, r, &mut self.sum);
        }
        let block = shifted.t_matmul(&shifted)?;
        for (acc, b) in self.scatter.data_mut().iter_mut().zip(block.data()) {
            *acc += b;
        }
        self.n += rows.rows();
        Ok(())
    }

    /// Mean and unnormalized scatter about the mean.
    pub fn finish(self) -> Result<(Vec<f64>, Matrix)> {
        if self.n < 2 {
            return Err(Error::Data(format!(
                "subspace fitting needs at least 2 rows, got {}",
                self.n
            )));
        }
        let n = self.n as f64;
        let delta: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mean: Vec<f64> = self.shift.iter().zip(&delta).map(|(s, d)| s + d).collect();
        let mut scatter = self.scatter;
        let dim = delta.len();
        for i in 0..dim {
            for j in 0..dim {
                let v = scatter.get(i, j) - n * delta[i] * delta[j];
                scatter.set(i, j, v);
            }
        }
        symmetrize(&mut scatter);
        Ok((mean, scatter))
    }
}

impl SubspaceModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn evr_threshold(&self) -> f64 {
        self.evr_threshold
    }

    pub fn has_residual_basis(&self) -> bool {
        self.residual.is_some()
    }

    /// Drops the residual basis; scoring only needs the projection.
    pub fn compact(mut self) -> Self {
        self.residual = None;
        self
    }

    fn centered(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector of length {} against a {}-dimensional subspace model",
                v.len(),
                self.dim()
            )));
        }
        Ok(v.iter().zip(&self.mean).map(|(x, m)| x - m).collect())
    }

    /// Reconstruction errors for every row, computed as in
    /// [`reconstruction_error`].
    pub fn reconstruction_errors(&self, rows: &Matrix) -> Result<Vec<f64>> {
        let centered = rows.center_rows(&self.mean)?;
        if self.q == 0 {
            return Ok(centered.row_iter().map(norm2).collect());
        }
        let coords = centered.matmul(&self.projection)?;
        let rebuilt = coords.matmul_t(&self.projection)?;
        Ok(rebuilt
            .row_iter()
            .zip(centered.row_iter())
            .map(|(r, d)| r.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect())
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.f64s(&self.mean);
        w.matrix(&self.projection);
        w.f64s(&self.spectrum);
        w.usize(self.q);
        w.f64(self.evr_threshold);
        match &self.residual {
            Some(r) => {
                w.u8(1);
                w.matrix(r);
            }
            None => w.u8(0),
        }
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let mean = r.f64s()?;
        let projection = r.matrix()?;
        let spectrum = r.f64s()?;
        let q = r.usize()?;
        let evr_threshold = r.f64()?;
        let residual = match r.u8()? {
            0 => None,
            1 => Some(r.matrix()?),
            other => return Err(Error::Format(format!("bad residual flag {other}"))),
        };
        if projection.rows() != mean.len() || projection.cols() != q || spectrum.len() != mean.len() {
            return Err(Error::Format(format!(
                "inconsistent subspace block: mean {}, projection {}x{}, spectrum {}, q {q}",
                mean.len(),
                projection.rows(),
                projection.cols(),
                spectrum.len()
            )));
        }
        Ok(Self {
            mean,
            projection,
            spectrum,
            q,
            evr_threshold,
            residual,
        })
    }
}

/// `|U_q U_q^T (v - mu) - (v - mu)|_2`.
pub fn reconstruction_error(model: &SubspaceModel, v: &[f64]) -> Result<f64> {
    let d = model.centered(v)?;
    let coords = model.projection.t_matvec(&d)?;
    let rebuilt = model.projection.matvec(&coords)?;
    Ok(rebuilt
        .iter()
        .zip(&d)
        .map(|(r, x)| (r - x) * (r - x))
        .sum::<f64>()
        .sqrt())
}

/// `|U_p^T (v - mu)|_2` over the trailing eigenvectors. Needs a model fitted
/// with the full basis.
pub fn residual_form_error(model: &SubspaceModel, v: &[f64]) -> Result<f64> {
    let residual = model.residual.as_ref().ok_or_else(|| {
        Error::Usage("residual form needs a model that retains its full eigenvector basis".into())
    })?;
    let d = model.centered(v)?;
    if residual.cols() == 0 {
        return Ok(0.0);
    }
    Ok(norm2(&residual.t_matvec(&d)?))
}

/// Projection onto the subspace, `U_q^T (v - mu)`.
pub fn project(model: &SubspaceModel, v: &[f64]) -> Result<Vec<f64>> {
    let d = model.centered(v)?;
    model.projection.t_matvec(&d)
}
