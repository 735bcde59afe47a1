//! Synthetic in-distribution / out-of-distribution bundles for desk-scale
//! checks, with class logits attached to every set.
//!
//! Logits are negative squared distances to class prototypes,
//! `f_k(z) = -|z - p_k|^2 / (2 tau)`, with `tau` the mean squared distance
//! from an in-distribution training row to its nearest prototype. Values are
//! rounded to f32 so a bundle written to disk reads back identically.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{read_matrix, write_matrix, FeatureMatrix, MatrixFormat, Role};
use crate::linalg::{axpy, dot, norm2, sq_dist, Matrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Clusters,
    SwissRoll,
    ShiftedNorms,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Clusters => "clusters",
            SynthKind::SwissRoll => "swiss-roll",
            SynthKind::ShiftedNorms => "shifted-norms",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(SynthKind::Clusters),
            "swiss-roll" => Ok(SynthKind::SwissRoll),
            "shifted-norms" => Ok(SynthKind::ShiftedNorms),
            other => Err(Error::Usage(format!(
                "unknown synthetic kind {other:?} (expected clusters, swiss-roll or shifted-norms)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// How far the out-of-distribution set moves away from the
    /// in-distribution one; 0 makes them identically distributed.
    pub displacement: f64,
    /// Norm factor of the shifted-norms OoD set.
    pub norm_factor: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            displacement: 1.0,
            norm_factor: 3.0,
        }
    }
}

/// One evaluation set: features plus optional logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub name: String,
    pub features: FeatureMatrix,
    pub logits: Option<FeatureMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub ind_train: FeatureMatrix,
    pub ind_train_logits: Option<FeatureMatrix>,
    pub ind_test: FeatureMatrix,
    pub ind_test_logits: Option<FeatureMatrix>,
    pub ood_sets: Vec<LabeledSet>,
}

impl DatasetBundle {
    pub fn new(
        ind_train: FeatureMatrix,
        ind_train_logits: Option<FeatureMatrix>,
        ind_test: FeatureMatrix,
        ind_test_logits: Option<FeatureMatrix>,
        ood_sets: Vec<LabeledSet>,
    ) -> Result<Self> {
        let m = ind_train.cols();
        let widths = std::iter::once(("ind_test", ind_test.cols()))
            .chain(ood_sets.iter().map(|s| (s.name.as_str(), s.features.cols())));
        for (name, w) in widths {
            if w != m {
                return Err(Error::Shape(format!(
                    "{name} has width {w}, training features have {m}"
                )));
            }
        }
        let pairs = [
            ("ind_train", &ind_train, ind_train_logits.as_ref()),
            ("ind_test", &ind_test, ind_test_logits.as_ref()),
        ];
        for (name, f, l) in pairs
            .into_iter()
            .chain(ood_sets.iter().map(|s| (s.name.as_str(), &s.features, s.logits.as_ref())))
        {
            if let Some(l) = l {
                if l.rows() != f.rows() {
                    return Err(Error::Shape(format!(
                        "{name}: {} logit rows for {} feature rows",
                        l.rows(),
                        f.rows()
                    )));
                }
            }
        }
        Ok(Self {
            ind_train,
            ind_train_logits,
            ind_test,
            ind_test_logits,
            ood_sets,
        })
    }

    pub fn dim(&self) -> usize {
        self.ind_train.cols()
    }

    /// Writes `ind_train`, `ind_test` and every OoD set (plus logits) as
    /// binary matrices named after the set, e.g. `ind_train.kpcf` and
    /// `ind_train_logits.kpcf`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, f: &FeatureMatrix, l: Option<&FeatureMatrix>| -> Result<()> {
            let path = dir.join(format!("{name}.kpcf"));
            write_matrix(f, &path, MatrixFormat::Binary)?;
            written.push(path);
            if let Some(l) = l {
                let path = dir.join(format!("{name}_logits.kpcf"));
                write_matrix(l, &path, MatrixFormat::Binary)?;
                written.push(path);
            }
            Ok(())
        };
        put("ind_train", &self.ind_train, self.ind_train_logits.as_ref())?;
        put("ind_test", &self.ind_test, self.ind_test_logits.as_ref())?;
        for s in &self.ood_sets {
            put(&s.name, &s.features, s.logits.as_ref())?;
        }
        Ok(written)
    }

    /// Reads a directory written by [`Self::write_dir`] with the given OoD
    /// set names.
    pub fn read_dir(dir: &Path, ood_names: &[&str]) -> Result<Self> {
        let get = |name: &str| -> Result<(FeatureMatrix, Option<FeatureMatrix>)> {
            let f = read_matrix(&dir.join(format!("{name}.kpcf")), MatrixFormat::Binary)?;
            let lp = dir.join(format!("{name}_logits.kpcf"));
            let l = if lp.exists() {
                Some(read_matrix(&lp, MatrixFormat::Binary)?)
            } else {
                None
            };
            Ok((f, l))
        };
        let (ind_train, ind_train_logits) = get("ind_train")?;
        let (ind_test, ind_test_logits) = get("ind_test")?;
        let ood_sets = ood_names
            .iter()
            .map(|n| {
                get(n).map(|(features, logits)| LabeledSet {
                    name: n.to_string(),
                    features,
                    logits,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ind_train, ind_train_logits, ind_test, ind_test_logits, ood_sets)
    }
}

pub fn gen_synthetic(kind: SynthKind, n_ind: usize, n_ood: usize, dim: usize, seed: u64) -> Result<DatasetBundle> {
    gen_synthetic_with(kind, n_ind, n_ood, dim, seed, &SynthOptions::default())
}

/// `ind_train` and `ind_test` get `n_ind` rows each; the single OoD set,
/// named `ood`, gets `n_ood`.
pub fn gen_synthetic_with(
    kind: SynthKind,
    n_ind: usize,
    n_ood: usize,
    dim: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<DatasetBundle> {
    if n_ind < 2 || n_ood < 2 {
        return Err(Error::Parameter(format!(
            "synthetic sets need at least 2 rows, got n_ind {n_ind}, n_ood {n_ood}"
        )));
    }
    if dim < 2 {
        return Err(Error::Parameter(format!("synthetic dimension must be >= 2, got {dim}")));
    }
    if !(opts.displacement >= 0.0 && opts.displacement.is_finite()) {
        return Err(Error::Parameter(format!("displacement must be >= 0, got {}", opts.displacement)));
    }
    if !(opts.norm_factor > 0.0 && opts.norm_factor.is_finite()) {
        return Err(Error::Parameter(format!("norm factor must be positive, got {}", opts.norm_factor)));
    }
    let root = SeededRng::new(seed);
    let mut layout = root.fork(1);
    let gen: Box<dyn Generator> = match kind {
        SynthKind::Clusters => Box::new(Clusters::new(dim, opts, &mut layout)),
        SynthKind::SwissRoll => Box::new(SwissRoll::new(dim, opts, &mut layout)),
        SynthKind::ShiftedNorms => Box::new(ShiftedNorms::new(dim, opts, &mut layout)),
    };
    let draw = |stream: u64, n: usize, ood: bool| -> Matrix {
        let mut rng = root.fork(stream);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| gen.sample(ood, &mut rng)).collect();
        let mut m = Matrix::from_rows(&rows).expect("rows share a width");
        m.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        m
    };
    let train = draw(2, n_ind, false);
    let test = draw(3, n_ind, false);
    let ood = draw(4, n_ood, true);

    let protos = gen.prototypes();
    let tau = train
        .row_iter()
        .map(|r| protos.row_iter().map(|p| sq_dist(r, p)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / train.rows() as f64;
    let tau = tau.max(1e-6);
    let logits = |x: &Matrix| -> Result<FeatureMatrix> {
        let l = Matrix::from_fn(x.rows(), protos.rows(), |i, k| {
            (-sq_dist(x.row(i), protos.row(k)) / (2.0 * tau)) as f32 as f64
        });
        FeatureMatrix::new(l, Role::Logits)
    };
    DatasetBundle::new(
        FeatureMatrix::features(train.clone())?,
        Some(logits(&train)?),
        FeatureMatrix::features(test.clone())?,
        Some(logits(&test)?),
        vec![LabeledSet {
            name: "ood".into(),
            logits: Some(logits(&ood)?),
            features: FeatureMatrix::features(ood)?,
        }],
    )
}

trait Generator {
    fn sample(&self, ood: bool, rng: &mut SeededRng) -> Vec<f64>;
    /// Class prototypes, one per row.
    fn prototypes(&self) -> Matrix;
}

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `k` orthonormal columns in `dim` dimensions (`k <= dim`), returned as
/// `k` rows, by Gram-Schmidt on gaussian vectors.
fn orthonormal_rows(dim: usize, k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                axpy(-c, b, &mut v);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// `sum_i coords[i] * basis[i]`.
fn embed(coords: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (c, b) in coords.iter().zip(basis) {
        axpy(*c, b, &mut out);
    }
    out
}

fn jitter(v: &mut [f64], sigma: f64, rng: &mut SeededRng) {
    v.iter_mut().for_each(|x| *x += sigma * rng.normal());
}

/// Gaussian blobs around unit-norm centers. OoD blobs sit at centers turned
/// away from the InD ones and scaled in norm, both in proportion to the
/// displacement.
struct Clusters {
    centers: Vec<Vec<f64>>,
    ood_centers: Vec<Vec<f64>>,
    sigma: f64,
}

const CLUSTER_COUNT: usize = 8;

impl Clusters {
    fn new(dim: usize, opts: &SynthOptions, rng: &mut SeededRng) -> Self {
        let centers: Vec<Vec<f64>> = (0..CLUSTER_COUNT).map(|_| unit_vector(dim, rng)).collect();
        let d = opts.displacement;
        let ood_centers = centers
            .iter()
            .map(|c| {
                let g = unit_vector(dim, rng);
                let mut moved: Vec<f64> = c.iter().zip(&g).map(|(a, b)| a + d * b).collect();
                let n = norm2(&moved);
                let scale = (1.0 + 0.5 * d) / n;
                moved.iter_mut().for_each(|x| *x *= scale);
                moved
            })
            .collect();
        Self {
            centers,
            ood_centers,
            sigma: 0.25 / (dim as f64).sqrt(),
        }
    }
}

impl Generator for Clusters {
    fn sample(&self, ood: bool, rng: &mut SeededRng) -> Vec<f64> {
        let set = if ood { &self.ood_centers } else { &self.centers };
        let mut v = set[rng.below(set.len())].clone();
        jitter(&mut v, self.sigma, rng);
        v
    }

    fn prototypes(&self) -> Matrix {
        Matrix::from_rows(&self.centers).expect("centers share a width")
    }
}

/// A swiss roll `(t cos t, h, t sin t)` with `t` in `[1.5 pi, 4.5 pi]`,
/// scaled to unit size and lifted by a constant coordinate so that the
/// cosine map keeps the radius, then rotated into `dim` dimensions. OoD rows
/// lie between consecutive turns of the roll.
struct SwissRoll {
    basis: Vec<Vec<f64>>,
    displacement: f64,
}

const ROLL_SCALE: f64 = 1.0 / 14.0;
const ROLL_LIFT: f64 = 2.0;
const ROLL_NOISE: f64 = 0.01;
const ROLL_T0: f64 = 1.5 * std::f64::consts::PI;
const ROLL_T1: f64 = 4.5 * std::f64::consts::PI;

impl SwissRoll {
    fn new(dim: usize, opts: &SynthOptions, rng: &mut SeededRng) -> Self {
        Self {
            basis: orthonormal_rows(dim, dim.min(4), rng),
            displacement: opts.displacement,
        }
    }

    /// Radius `r` at angle `t`; coordinates in the order that survives
    /// truncation to low dimensions best.
    fn point(&self, t: f64, r: f64, h: f64) -> Vec<f64> {
        let coords = [
            r * t.cos() * ROLL_SCALE,
            r * t.sin() * ROLL_SCALE,
            ROLL_LIFT,
            h,
        ];
        embed(&coords[..self.basis.len()], &self.basis)
    }
}

impl Generator for SwissRoll {
    fn sample(&self, ood: bool, rng: &mut SeededRng) -> Vec<f64> {
        let h = 1.5 * rng.uniform() - 0.75;
        let mut v = if ood {
            // half a turn of radius outward, i.e. midway to the next sheet
            let t = ROLL_T0 + (ROLL_T1 - ROLL_T0 - 2.0 * std::f64::consts::PI) * rng.uniform();
            self.point(t, t + self.displacement * std::f64::consts::PI, h)
        } else {
            let t = ROLL_T0 + (ROLL_T1 - ROLL_T0) * rng.uniform();
            self.point(t, t, h)
        };
        jitter(&mut v, ROLL_NOISE, rng);
        v
    }

    fn prototypes(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let t = ROLL_T0 + (ROLL_T1 - ROLL_T0) * (i as f64 + 0.5) / 6.0;
                self.point(t, t, 0.0)
            })
            .collect();
        Matrix::from_rows(&rows).expect("prototypes share a width")
    }
}

/// Unit-norm directions clustered inside a low-dimensional subspace plus
/// small isotropic jitter. OoD rows take directions between the InD
/// clusters and a norm `norm_factor` times larger; the jitter keeps its
/// absolute scale.
struct ShiftedNorms {
    basis: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    ood_centers: Vec<Vec<f64>>,
    norm_factor: f64,
}

const SHIFT_SUBSPACE: usize = 4;
const SHIFT_CLUSTERS: usize = 5;
const SHIFT_ANGULAR: f64 = 0.08;
const SHIFT_JITTER: f64 = 0.02;

impl ShiftedNorms {
    fn new(dim: usize, opts: &SynthOptions, rng: &mut SeededRng) -> Self {
        let k = dim.min(SHIFT_SUBSPACE);
        let basis = orthonormal_rows(dim, k, rng);
        let centers: Vec<Vec<f64>> = (0..SHIFT_CLUSTERS).map(|_| unit_vector(k, rng)).collect();
        let ood_centers = (0..SHIFT_CLUSTERS)
            .map(|i| {
                let a = &centers[i];
                let b = &centers[(i + 1) % SHIFT_CLUSTERS];
                let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                let n = norm2(&mid);
                let mid: Vec<f64> = if n > 1e-6 {
                    mid.iter().map(|x| x / n).collect()
                } else {
                    unit_vector(k, rng)
                };
                // displacement 0 keeps the InD centers
                let d = opts.displacement.min(1.0);
                let mut c: Vec<f64> = a.iter().zip(&mid).map(|(x, y)| (1.0 - d) * x + d * y).collect();
                let n = norm2(&c).max(1e-12);
                c.iter_mut().for_each(|x| *x /= n);
                c
            })
            .collect();
        Self {
            basis,
            centers,
            ood_centers,
            norm_factor: opts.norm_factor,
        }
    }
}

impl Generator for ShiftedNorms {
    fn sample(&self, ood: bool, rng: &mut SeededRng) -> Vec<f64> {
        let set = if ood { &self.ood_centers } else { &self.centers };
        let c = &set[rng.below(set.len())];
        let mut dir: Vec<f64> = c.iter().map(|x| x + SHIFT_ANGULAR * rng.normal()).collect();
        let n = norm2(&dir).max(1e-12);
        let radius = (1.0 + 0.1 * rng.normal()) * if ood { self.norm_factor } else { 1.0 };
        dir.iter_mut().for_each(|x| *x *= radius / n);
        let mut v = embed(&dir, &self.basis);
        jitter(&mut v, SHIFT_JITTER, rng);
        v
    }

    fn prototypes(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.centers.iter().map(|c| embed(c, &self.basis)).collect();
        Matrix::from_rows(&rows).expect("prototypes share a width")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_norm(m: &Matrix) -> f64 {
        m.row_iter().map(norm2).sum::<f64>() / m.rows() as f64
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in [SynthKind::Clusters, SynthKind::SwissRoll, SynthKind::ShiftedNorms] {
            let a = gen_synthetic(kind, 50, 20, 6, 3).unwrap();
            let b = gen_synthetic(kind, 50, 20, 6, 3).unwrap();
            assert_eq!(a, b);
            let c = gen_synthetic(kind, 50, 20, 6, 4).unwrap();
            assert_ne!(a.ind_train, c.ind_train);
        }
    }

    #[test]
    fn shapes_and_logits() {
        let b = gen_synthetic(SynthKind::Clusters, 30, 10, 5, 0).unwrap();
        assert_eq!(b.ind_train.shape(), (30, 5));
        assert_eq!(b.ind_test.shape(), (30, 5));
        assert_eq!(b.ood_sets.len(), 1);
        assert_eq!(b.ood_sets[0].features.shape(), (10, 5));
        let l = b.ind_train_logits.as_ref().unwrap();
        assert_eq!(l.role(), Role::Logits);
        assert_eq!(l.shape(), (30, CLUSTER_COUNT));
        assert!(l.data().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn shifted_norms_ratio_is_three() {
        let b = gen_synthetic(SynthKind::ShiftedNorms, 2000, 1000, 16, 0).unwrap();
        let ratio = mean_norm(&b.ood_sets[0].features) / mean_norm(&b.ind_test);
        assert!((ratio - 3.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn values_are_single_precision() {
        let b = gen_synthetic(SynthKind::SwissRoll, 20, 5, 8, 1).unwrap();
        assert!(b.ind_train.data().iter().all(|&v| v as f32 as f64 == v));
    }

    #[test]
    fn swiss_roll_lies_near_a_four_dimensional_span() {
        let b = gen_synthetic(SynthKind::SwissRoll, 200, 50, 16, 2).unwrap();
        let cov = crate::linalg::covariance(&b.ind_train, &b.ind_train.column_means()).unwrap();
        let eig = crate::linalg::sym_eigen(&cov).unwrap();
        // the lift coordinate is constant, so the spread lives in 3 directions
        let total: f64 = eig.eigenvalues.iter().sum();
        let top3: f64 = eig.eigenvalues[..3].iter().sum();
        assert!(top3 / total > 0.95, "{}", top3 / total);
    }

    #[test]
    fn low_dimensions_are_supported() {
        for kind in [SynthKind::Clusters, SynthKind::SwissRoll, SynthKind::ShiftedNorms] {
            let b = gen_synthetic(kind, 10, 4, 2, 0).unwrap();
            assert_eq!(b.dim(), 2);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!("moons".parse::<SynthKind>().unwrap_err().is_usage());
        assert!(gen_synthetic(SynthKind::Clusters, 1, 5, 4, 0).is_err());
        assert!(gen_synthetic(SynthKind::Clusters, 5, 5, 1, 0).is_err());
        for k in ["clusters", "swiss-roll", "shifted-norms"] {
            assert_eq!(k.parse::<SynthKind>().unwrap().to_string(), k);
        }
    }

    #[test]
    fn bundle_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_synthetic(SynthKind::ShiftedNorms, 12, 6, 5, 9).unwrap();
        let files = b.write_dir(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let back = DatasetBundle::read_dir(dir.path(), &["ood"]).unwrap();
        assert_eq!(back, b);
    }
}
