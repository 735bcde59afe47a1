//! Detector pipelines: fit on in-distribution training data, then score
//! queries so that higher means more in-distribution.

mod clip;
mod model_file;

pub use clip::ClipThresholds;
pub use model_file::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{FeatureMatrix, Role};
use crate::kernels::{cos_map, cos_map_rows, median_heuristic_gamma, KernelSpec};
use crate::linalg::{sq_dist, Matrix};
use crate::maps::energy::{check_temperature, energy};
use crate::maps::{energy_scores, fit_nystrom, fit_rff, select_landmarks, ApproxMap, Sampling};
use crate::rng::SeededRng;
use crate::subspace::{
    fit_subspace_with, from_scatter, Rank, ScatterAccumulator, SubspaceModel, DEFAULT_EVR_NYSTROM, DEFAULT_EVR_RFF,
};
use crate::synth::DatasetBundle;

pub const DEFAULT_NUM_FEATURES: usize = 4096;
pub const DEFAULT_NUM_LANDMARKS: usize = 2048;
/// Post-cosine training pairs used by the median heuristic.
pub const MEDIAN_PAIRS: usize = 1000;
/// Rows mapped at a time, bounding memory on large training sets.
const CHUNK_ROWS: usize = 4096;
const KNN_CHUNK_ROWS: usize = 64;

// rng streams forked from the detector seed
const STREAM_GAMMA: u64 = 10;
const STREAM_MAP: u64 = 11;
const STREAM_LANDMARKS: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pca,
    KpcaRff,
    KpcaNys,
    Knn,
    Msp,
    MaxLogit,
    Energy,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Pca,
        Method::KpcaRff,
        Method::KpcaNys,
        Method::Knn,
        Method::Msp,
        Method::MaxLogit,
        Method::Energy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::KpcaRff => "kpca-rff",
            Method::KpcaNys => "kpca-nys",
            Method::Knn => "knn",
            Method::Msp => "msp",
            Method::MaxLogit => "maxlogit",
            Method::Energy => "energy",
        }
    }

    pub(crate) fn code(self) -> u8 {
        Method::ALL.iter().position(|&m| m == self).expect("listed") as u8
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Method::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown method code {code}")))
    }

    /// Scores come from logits rather than features.
    pub fn uses_logits(self) -> bool {
        matches!(self, Method::Msp | Method::MaxLogit | Method::Energy)
    }

    pub fn is_kpca(self) -> bool {
        matches!(self, Method::KpcaRff | Method::KpcaNys)
    }

    /// Default explained variance threshold for the subspace methods.
    pub fn default_evr(self) -> f64 {
        match self {
            Method::KpcaNys => DEFAULT_EVR_NYSTROM,
            _ => DEFAULT_EVR_RFF,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.iter().copied().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Usage(format!("unknown method {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaChoice {
    #[default]
    Median,
    Value(f64),
}

impl FromStr for GammaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(GammaChoice::Median);
        }
        match s.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaChoice::Value(g)),
            _ => Err(Error::Usage(format!("--gamma expects a positive number or \"median\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub method: Method,
    pub gamma: GammaChoice,
    pub num_features: usize,
    pub num_landmarks: usize,
    /// `None` picks the method default.
    pub evr: Option<f64>,
    /// Fixed subspace size, overriding the variance threshold.
    pub components: Option<usize>,
    pub sampling: Sampling,
    pub temperature: f64,
    pub clip_percentile: Option<f64>,
    /// Cosine-normalize inputs before the kernel (the kpca methods).
    pub cosine: bool,
}

impl DetectorConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            gamma: GammaChoice::Median,
            num_features: DEFAULT_NUM_FEATURES,
            num_landmarks: DEFAULT_NUM_LANDMARKS,
            evr: None,
            components: None,
            sampling: Sampling::LowEnergy,
            temperature: 1.0,
            clip_percentile: None,
            cosine: true,
        }
    }

    fn rank(&self) -> Rank {
        match self.components {
            Some(q) => Rank::Fixed(q),
            None => Rank::Evr(self.evr.unwrap_or(self.method.default_evr())),
        }
    }
}

/// A fitted detector. Which optional parts are present depends on the method.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub(crate) method: Method,
    pub(crate) seed: u64,
    pub(crate) feature_dim: usize,
    pub(crate) n_train: usize,
    pub(crate) clip: Option<ClipThresholds>,
    pub(crate) temperature: Option<f64>,
    pub(crate) map: Option<ApproxMap>,
    /// Training rows used as Nystrom landmarks.
    pub(crate) landmark_indices: Option<Vec<usize>>,
    pub(crate) subspace: Option<SubspaceModel>,
    /// Cosine-normalized training rows.
    pub(crate) knn_bank: Option<Matrix>,
}

impl DetectorModel {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn clip(&self) -> Option<&ClipThresholds> {
        self.clip.as_ref()
    }

    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    pub fn map(&self) -> Option<&ApproxMap> {
        self.map.as_ref()
    }

    pub fn landmark_indices(&self) -> Option<&[usize]> {
        self.landmark_indices.as_deref()
    }

    pub fn subspace(&self) -> Option<&SubspaceModel> {
        self.subspace.as_ref()
    }

    pub fn knn_bank(&self) -> Option<&Matrix> {
        self.knn_bank.as_ref()
    }

    /// Kernel of the map for kpca models; the linear kernel for plain PCA.
    pub fn kernel(&self) -> Option<KernelSpec> {
        match self.method {
            Method::Pca => Some(KernelSpec::linear()),
            _ => self.map.as_ref().map(|m| *m.spec()),
        }
    }

    /// Checks that the parts present match the method.
    pub(crate) fn validate(&self) -> Result<()> {
        let expect = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::Format(format!("{} model {what}", self.method)))
            }
        };
        let m = self.method;
        expect(self.map.is_some() == m.is_kpca(), "has a mismatched map block")?;
        expect(self.subspace.is_some() == (m.is_kpca() || m == Method::Pca), "has a mismatched subspace block")?;
        expect(self.knn_bank.is_some() == (m == Method::Knn), "has a mismatched neighbour bank")?;
        expect(self.temperature.is_some() == m.uses_logits(), "has a mismatched temperature")?;
        expect(self.landmark_indices.is_some() == (m == Method::KpcaNys), "has mismatched landmark indices")?;
        if let (Some(map), Some(sub)) = (&self.map, &self.subspace) {
            expect(map.input_dim() == self.feature_dim, "map width differs from the feature width")?;
            expect(sub.dim() == map.output_dim(), "subspace width differs from the map output")?;
        }
        if m == Method::Pca {
            expect(self.subspace.as_ref().is_some_and(|s| s.dim() == self.feature_dim), "subspace width differs from the feature width")?;
        }
        if let Some(b) = &self.knn_bank {
            expect(b.cols() == self.feature_dim, "bank width differs from the feature width")?;
        }
        if let Some(c) = &self.clip {
            expect(c.thresholds.len() == self.feature_dim, "has clip thresholds of the wrong width")?;
        }
        Ok(())
    }
}

/// Fits on the bundle's training set.
pub fn fit_detector(config: &DetectorConfig, bundle: &DatasetBundle, rng: &mut SeededRng) -> Result<DetectorModel> {
    fit_detector_on(config, &bundle.ind_train, bundle.ind_train_logits.as_ref(), rng)
}

pub fn fit_detector_on(
    config: &DetectorConfig,
    train: &FeatureMatrix,
    train_logits: Option<&FeatureMatrix>,
    rng: &mut SeededRng,
) -> Result<DetectorModel> {
    let method = config.method;
    check_temperature(config.temperature)?;
    if let Some(l) = train_logits {
        if l.rows() != train.rows() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} training rows",
                l.rows(),
                train.rows()
            )));
        }
    }
    let clip = config
        .clip_percentile
        .map(|p| ClipThresholds::fit(train, p))
        .transpose()?;
    let features = match &clip {
        Some(c) => c.apply(train)?,
        None => train.matrix().clone(),
    };
    let mut model = DetectorModel {
        method,
        seed: rng.seed(),
        feature_dim: train.cols(),
        n_train: train.rows(),
        clip,
        temperature: None,
        map: None,
        landmark_indices: None,
        subspace: None,
        knn_bank: None,
    };
    match method {
        Method::Pca => {
            model.subspace = Some(fit_subspace_with(&features, config.rank())?.compact());
        }
        Method::KpcaRff | Method::KpcaNys => {
            let gamma = match config.gamma {
                GammaChoice::Value(g) => g,
                GammaChoice::Median => {
                    let prepared = if config.cosine {
                        cos_map_rows(&features)?
                    } else {
                        features.clone()
                    };
                    median_heuristic_gamma(&prepared, MEDIAN_PAIRS, &mut rng.fork(STREAM_GAMMA))?
                }
            };
            let spec = KernelSpec::new(crate::kernels::KernelBase::Gaussian { gamma }, config.cosine)?;
            let map = if method == Method::KpcaRff {
                ApproxMap::Rff(fit_rff(&spec, features.cols(), config.num_features, &mut rng.fork(STREAM_MAP))?)
            } else {
                let count = config.num_landmarks.min(features.rows());
                let energies = if config.sampling.needs_energies() {
                    let logits = train_logits.ok_or_else(|| {
                        Error::Usage(format!("{} landmark sampling needs training logits", config.sampling))
                    })?;
                    Some(energy_scores(logits, config.temperature)?)
                } else {
                    None
                };
                let idx = select_landmarks(
                    features.rows(),
                    energies.as_ref(),
                    count,
                    config.sampling,
                    &mut rng.fork(STREAM_LANDMARKS),
                )?;
                let map = fit_nystrom(&spec, &features.select_rows(&idx), config.sampling)?;
                model.landmark_indices = Some(idx);
                ApproxMap::Nystrom(map)
            };
            model.subspace = Some(fit_mapped_subspace(&map, &features, config.rank())?);
            model.map = Some(map);
        }
        Method::Knn => {
            model.knn_bank = Some(cos_map_rows(&features)?);
        }
        Method::Msp | Method::MaxLogit | Method::Energy => {
            model.temperature = Some(config.temperature);
        }
    }
    Ok(model)
}

/// Maps `rows` in chunks, shifting degenerate-row indices back to `rows`.
pub fn map_rows_chunked(map: &ApproxMap, rows: &Matrix, mut sink: impl FnMut(usize, Matrix) -> Result<()>) -> Result<()> {
    let mut start = 0;
    while start < rows.rows() {
        let end = (start + CHUNK_ROWS).min(rows.rows());
        let idx: Vec<usize> = (start..end).collect();
        let mapped = map.map_rows(&rows.select_rows(&idx)).map_err(|e| offset_row(e, start))?;
        sink(start, mapped)?;
        start = end;
    }
    Ok(())
}

fn offset_row(e: Error, offset: usize) -> Error {
    match e {
        Error::DegenerateInput { row: Some(r) } => Error::DegenerateInput { row: Some(r + offset) },
        other => other,
    }
}

fn fit_mapped_subspace(map: &ApproxMap, rows: &Matrix, rank: Rank) -> Result<SubspaceModel> {
    let out = map.output_dim();
    let model = if rows.rows() >= out {
        let mut acc = ScatterAccumulator::new(out);
        map_rows_chunked(map, rows, |_, chunk| acc.add_rows(&chunk))?;
        let (mean, scatter) = acc.finish()?;
        from_scatter(mean, &scatter, rank)?
    } else {
        fit_subspace_with(&map.map_rows(rows)?, rank)?
    };
    Ok(model.compact())
}

fn softmax_max(row: &[f64], t: f64) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|f| ((f - max) / t).exp()).sum();
    1.0 / sum
}

/// Applies the model's stored clip thresholds.
pub fn clip_features(model: &DetectorModel, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let clip = model
        .clip
        .as_ref()
        .ok_or_else(|| Error::Usage("model carries no clip thresholds".into()))?;
    clip.apply_features(features)
}

/// Per-row scores, higher meaning more in-distribution:
///
/// * pca, kpca-*: negative reconstruction error (after clipping, and the
///   cosine map plus explicit map for kpca)
/// * knn: negative distance to the nearest cosine-normalized training row
/// * msp: largest softmax probability of `logits / T`
/// * maxlogit: largest logit
/// * energy: `T log sum exp(logits / T)`
pub fn score(model: &DetectorModel, features: &FeatureMatrix, logits: Option<&FeatureMatrix>) -> Result<Vec<f64>> {
    if model.method.uses_logits() {
        let logits = logits.ok_or_else(|| Error::Usage(format!("{} scoring needs logits", model.method)))?;
        if logits.role() != Role::Logits {
            return Err(Error::Usage(format!("{} scoring needs a logits matrix", model.method)));
        }
        let t = model.temperature.unwrap_or(1.0);
        let f: fn(&[f64], f64) -> f64 = match model.method {
            Method::Msp => softmax_max,
            Method::MaxLogit => |r, _| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            _ => energy,
        };
        return Ok(logits.row_iter().map(|r| f(r, t)).collect());
    }
    if features.cols() != model.feature_dim {
        return Err(Error::Shape(format!(
            "model expects {} feature columns, got {}",
            model.feature_dim,
            features.cols()
        )));
    }
    let clipped;
    let x: &Matrix = match &model.clip {
        Some(c) => {
            clipped = c.apply(features)?;
            &clipped
        }
        None => features.matrix(),
    };
    match model.method {
        Method::Pca => {
            let sub = model.subspace.as_ref().expect("validated");
            Ok(sub.reconstruction_errors(x)?.into_iter().map(|e| -e).collect())
        }
        Method::KpcaRff | Method::KpcaNys => {
            let map = model.map.as_ref().expect("validated");
            let sub = model.subspace.as_ref().expect("validated");
            let mut out = Vec::with_capacity(x.rows());
            map_rows_chunked(map, x, |_, chunk| {
                out.extend(sub.reconstruction_errors(&chunk)?.into_iter().map(|e| -e));
                Ok(())
            })?;
            Ok(out)
        }
        Method::Knn => knn_scores(model.knn_bank.as_ref().expect("validated"), x),
        _ => unreachable!("logit methods handled above"),
    }
}

fn knn_scores(bank: &Matrix, x: &Matrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.rows());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + KNN_CHUNK_ROWS).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let q = cos_map_rows(&x.select_rows(&idx)).map_err(|e| offset_row(e, start))?;
        let dots = q.matmul_t(bank)?;
        for (i, row) in dots.row_iter().enumerate() {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            out.push(-sq_dist(q.row(i), bank.row(best)).sqrt());
        }
        start = end;
    }
    Ok(out)
}

/// Rows that the cosine map cannot normalize (zero after clipping), for
/// methods that apply it. Scoring such rows is an error.
pub fn degenerate_rows(model: &DetectorModel, features: &FeatureMatrix) -> Result<Vec<usize>> {
    let cosine = match model.method {
        Method::Knn => true,
        Method::KpcaRff | Method::KpcaNys => model.map.as_ref().is_some_and(|m| m.spec().cosine_prefix()),
        _ => false,
    };
    if !cosine {
        return Ok(Vec::new());
    }
    let x = match &model.clip {
        Some(c) => c.apply(features)?,
        None => features.matrix().clone(),
    };
    Ok(x.row_iter()
        .enumerate()
        .filter(|(_, r)| {
            let n = crate::linalg::norm2(r);
            n == 0.0 || !n.is_finite()
        })
        .map(|(i, _)| i)
        .collect())
}

/// Scores a single feature vector (and logit row for logit methods).
pub fn score_one(model: &DetectorModel, z: &[f64], logits: Option<&[f64]>) -> Result<f64> {
    if model.method.uses_logits() {
        let l = logits.ok_or_else(|| Error::Usage(format!("{} scoring needs logits", model.method)))?;
        let m = FeatureMatrix::logits(Matrix::from_rows(&[l])?)?;
        return Ok(score(model, &m, Some(&m))?[0]);
    }
    if model.method == Method::Knn {
        // validate the zero-norm case without the row index
        cos_map(z)?;
    }
    let m = FeatureMatrix::features(Matrix::from_rows(&[z])?)?;
    score(model, &m, None)
        .map(|s| s[0])
        .map_err(|e| match e {
            Error::DegenerateInput { .. } => Error::DegenerateInput { row: None },
            other => other,
        })
}
