//! Command-line front end: `gen-synth`, `fit`, `score` and `eval`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or numeric errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

use crate::detectors::{
    degenerate_rows, fit_detector_on, load_model, save_model, score, DetectorConfig, DetectorModel, GammaChoice,
    Method, DEFAULT_NUM_FEATURES, DEFAULT_NUM_LANDMARKS,
};
use crate::error::{Error, Result};
use crate::io::{read_matrix_as, FeatureMatrix, MatrixFormat, Role};
use crate::maps::{Sampling, DEFAULT_TEMPERATURE};
use crate::metrics::{evaluate_scores, write_score_csv, ScoreSets};
use crate::oracle::{fit_exact, mean_abs_gap};
use crate::rng::SeededRng;
use crate::synth::{gen_synthetic_with, SynthKind, SynthOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Write a synthetic bundle into the --out directory
    GenSynth,
    /// Fit a detector and write it to --model
    Fit,
    /// Score --features with --model and write a CSV
    Score,
    /// Score an InD test set and OoD sets and write a JSON report
    Eval,
}

/// Kernel PCA out-of-distribution detection on precomputed features.
#[derive(Debug, Parser)]
#[command(name = "kpca-ood", version)]
pub struct Args {
    pub command: Command,

    /// Feature matrix (binary, or CSV by extension)
    #[arg(long, value_name = "PATH")]
    pub features: Option<PathBuf>,
    /// Logit matrix matching --features row for row
    #[arg(long, value_name = "PATH")]
    pub logits: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub method: Option<String>,
    /// Gaussian kernel gamma, or "median" for the median heuristic
    #[arg(long, value_name = "F|median", default_value = "median")]
    pub gamma: String,
    #[arg(long, value_name = "INT", default_value_t = DEFAULT_NUM_FEATURES)]
    pub num_features: usize,
    #[arg(long, value_name = "INT", default_value_t = DEFAULT_NUM_LANDMARKS)]
    pub num_landmarks: usize,
    /// Explained variance threshold (default 0.90, or 0.99 for kpca-nys)
    #[arg(long, value_name = "F")]
    pub evr: Option<f64>,
    /// Fixed subspace size instead of --evr
    #[arg(long, value_name = "INT")]
    pub components: Option<usize>,
    #[arg(long, value_name = "SCHEME", default_value = "low-energy")]
    pub sampling: String,
    #[arg(long, value_name = "F", default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, value_name = "F")]
    pub clip_percentile: Option<f64>,
    #[arg(long, value_name = "INT", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Compare against exact kernel PCA errors (eval; needs --train)
    #[arg(long)]
    pub oracle: bool,
    /// OoD feature set, repeatable
    #[arg(long, value_name = "NAME=PATH")]
    pub ood: Vec<String>,
    /// Logits for an OoD set, repeatable
    #[arg(long, value_name = "NAME=PATH")]
    pub ood_logits: Vec<String>,
    /// Training features, for --oracle
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// Also write per-sample scores of every set (eval)
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
    /// Add 50-bin score histograms to the report
    #[arg(long)]
    pub histograms: bool,
    /// Synthetic bundle kind: clusters, swiss-roll or shifted-norms
    #[arg(long, value_name = "KIND")]
    pub kind: Option<String>,
    #[arg(long, value_name = "INT", default_value_t = 2000)]
    pub n_ind: usize,
    #[arg(long, value_name = "INT", default_value_t = 1000)]
    pub n_ood: usize,
    #[arg(long, value_name = "INT", default_value_t = 16)]
    pub dim: usize,
    /// OoD displacement for gen-synth; 0 gives identical distributions
    #[arg(long, value_name = "F", default_value_t = 1.0)]
    pub displacement: f64,
}

/// Runs the command line and returns the process exit code. Diagnostics go
/// to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kpca-ood: {e}");
            if e.is_usage() {
                eprintln!("usage: kpca-ood <gen-synth|fit|score|eval> [flags]; see --help");
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

pub fn execute(args: &Args) -> Result<()> {
    match args.command {
        Command::GenSynth => gen_synth(args),
        Command::Fit => fit(args),
        Command::Score => score_cmd(args),
        Command::Eval => eval(args),
    }
}

fn required<'a, T>(value: Option<&'a T>, flag: &str, command: &str) -> Result<&'a T> {
    value.ok_or_else(|| Error::Usage(format!("{command} needs --{flag}")))
}

fn read_input(path: &Path, role: Role) -> Result<FeatureMatrix> {
    Ok(read_matrix_as(path, MatrixFormat::from_path(path), role)?.with_role(role))
}

fn parse_named(pairs: &[String], flag: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for p in pairs {
        let (name, path) = p
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| Error::Usage(format!("--{flag} expects NAME=PATH, got {p:?}")))?;
        if out.iter().any(|(n, _)| n == name) {
            return Err(Error::Usage(format!("--{flag} names {name:?} twice")));
        }
        out.push((name.to_string(), PathBuf::from(path)));
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn gen_synth(args: &Args) -> Result<()> {
    let kind: SynthKind = required(args.kind.as_ref(), "kind", "gen-synth")?.parse()?;
    let out = required(args.out.as_ref(), "out", "gen-synth")?;
    let opts = SynthOptions {
        displacement: args.displacement,
        ..SynthOptions::default()
    };
    let bundle = gen_synthetic_with(kind, args.n_ind, args.n_ood, args.dim, args.seed, &opts)?;
    for path in bundle.write_dir(out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn config(args: &Args) -> Result<DetectorConfig> {
    let method: Method = required(args.method.as_ref(), "method", "fit")?.parse()?;
    let mut c = DetectorConfig::new(method);
    c.gamma = args.gamma.parse::<GammaChoice>()?;
    c.num_features = args.num_features;
    c.num_landmarks = args.num_landmarks;
    c.evr = args.evr;
    c.components = args.components;
    c.sampling = args.sampling.parse::<Sampling>()?;
    c.temperature = args.temperature;
    c.clip_percentile = args.clip_percentile;
    Ok(c)
}

fn fit(args: &Args) -> Result<()> {
    let config = config(args)?;
    let features_path = required(args.features.as_ref(), "features", "fit")?;
    let model_path = required(args.model.as_ref(), "model", "fit")?;
    let features = read_input(features_path, Role::Features)?;
    let logits = args.logits.as_deref().map(|p| read_input(p, Role::Logits)).transpose()?;
    let model = fit_detector_on(&config, &features, logits.as_ref(), &mut SeededRng::new(args.seed))?;
    save_model(&model, model_path)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn score_cmd(args: &Args) -> Result<()> {
    let model_path = required(args.model.as_ref(), "model", "score")?;
    let features_path = required(args.features.as_ref(), "features", "score")?;
    let model = load_model(model_path)?;
    let features = read_input(features_path, Role::Features)?;
    let logits = args.logits.as_deref().map(|p| read_input(p, Role::Logits)).transpose()?;
    if let Some(l) = &logits {
        if l.rows() != features.rows() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} feature rows",
                l.rows(),
                features.rows()
            )));
        }
    }
    let rejected = degenerate_rows(&model, &features)?;
    let keep: Vec<usize> = (0..features.rows()).filter(|i| rejected.binary_search(i).is_err()).collect();
    for r in &rejected {
        eprintln!("{}: row {r} rejected (zero-norm vector)", features_path.display());
    }
    let name = dataset_name(features_path);
    let mut out = Vec::new();
    writeln!(out, "dataset,row,score").expect("in-memory write");
    if !keep.is_empty() {
        let kept = features.select_rows(&keep)?;
        let kept_logits = logits.as_ref().map(|l| l.select_rows(&keep)).transpose()?;
        let scores = score(&model, &kept, kept_logits.as_ref())?;
        for (i, s) in keep.iter().zip(&scores) {
            writeln!(out, "{name},{i},{s}").expect("in-memory write");
        }
    }
    emit(args.out.as_deref(), &out)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn eval(args: &Args) -> Result<()> {
    let model_path = required(args.model.as_ref(), "model", "eval")?;
    let ind_path = required(args.features.as_ref(), "features", "eval")?;
    let oods = parse_named(&args.ood, "ood")?;
    if oods.is_empty() {
        return Err(Error::Usage("eval needs at least one --ood NAME=PATH".into()));
    }
    let ood_logits = parse_named(&args.ood_logits, "ood-logits")?;
    for (n, _) in &ood_logits {
        if !oods.iter().any(|(m, _)| m == n) {
            return Err(Error::Usage(format!("--ood-logits names unknown set {n:?}")));
        }
    }
    if args.oracle && args.train.is_none() {
        return Err(Error::Usage("--oracle needs --train with the training features".into()));
    }
    let model = load_model(model_path)?;
    let ind = read_input(ind_path, Role::Features)?;
    let ind_logits = args.logits.as_deref().map(|p| read_input(p, Role::Logits)).transpose()?;
    let mut sets = Vec::new();
    for (name, path) in &oods {
        let f = read_input(path, Role::Features)?;
        let l = ood_logits
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| read_input(p, Role::Logits))
            .transpose()?;
        sets.push((name.clone(), f, l));
    }
    let ind_scores = score(&model, &ind, ind_logits.as_ref()).map_err(|e| e.context(ind_path.display().to_string()))?;
    let mut ood_scores = Vec::new();
    for (name, f, l) in &sets {
        let s = score(&model, f, l.as_ref()).map_err(|e| e.context(name.clone()))?;
        ood_scores.push((name.clone(), s));
    }
    let score_sets = ScoreSets {
        ind: ind_scores,
        ood: ood_scores,
    };
    let mut report = evaluate_scores(model.method().name(), &score_sets, args.histograms)?;
    if args.oracle {
        let train_path = args.train.as_ref().expect("checked above");
        let train = read_input(train_path, Role::Features)?;
        let gaps = oracle_gaps(&model, &train, &ind, &score_sets, &sets)?;
        report.oracle_ind_mean_abs_error = Some(gaps[0]);
        for (r, g) in report.per_ood.iter_mut().zip(&gaps[1..]) {
            r.oracle_mean_abs_error = Some(*g);
        }
    }
    if let Some(path) = &args.scores {
        let mut named: Vec<(&str, &[f64])> = vec![("ind_test", &score_sets.ind)];
        named.extend(score_sets.ood.iter().map(|(n, s)| (n.as_str(), s.as_slice())));
        let mut buf = Vec::new();
        write_score_csv(&mut buf, &named).expect("in-memory write");
        write_file(path, &buf)?;
    }
    emit(args.out.as_deref(), report.to_json().as_bytes())
}

/// Mean |approximate - exact| reconstruction error for the InD set and each
/// OoD set, against centered exact kernel PCA with the model's kernel and
/// subspace size.
fn oracle_gaps(
    model: &DetectorModel,
    train: &FeatureMatrix,
    ind: &FeatureMatrix,
    scores: &ScoreSets,
    sets: &[(String, FeatureMatrix, Option<FeatureMatrix>)],
) -> Result<Vec<f64>> {
    let (Some(kernel), Some(sub)) = (model.kernel(), model.subspace()) else {
        return Err(Error::Usage(format!(
            "--oracle applies to pca and kpca models, not {}",
            model.method()
        )));
    };
    if train.cols() != model.feature_dim() {
        return Err(Error::Shape(format!(
            "training features have width {}, the model expects {}",
            train.cols(),
            model.feature_dim()
        )));
    }
    let prepare = |f: &FeatureMatrix| -> Result<crate::linalg::Matrix> {
        match model.clip() {
            Some(c) => c.apply(f),
            None => Ok(f.matrix().clone()),
        }
    };
    let n = train.rows();
    let p = n.checked_sub(sub.q()).filter(|&p| p < n).ok_or_else(|| {
        Error::Parameter(format!("subspace size {} does not fit {n} training rows", sub.q()))
    })?;
    let exact = fit_exact(&prepare(train)?, &kernel, p, true)?;
    let gap = |f: &FeatureMatrix, s: &[f64]| -> Result<f64> {
        let e = exact.standard_errors(&prepare(f)?)?;
        let approx: Vec<f64> = s.iter().map(|v| -v).collect();
        mean_abs_gap(&approx, &e)
    };
    let mut out = vec![gap(ind, &scores.ind)?];
    for ((_, f, _), (_, s)) in sets.iter().zip(&scores.ood) {
        out.push(gap(f, s)?);
    }
    Ok(out)
}
