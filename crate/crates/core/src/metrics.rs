//! FPR at 95% TPR, AUROC and evaluation reports. Scores are oriented so that
//! higher means more in-distribution.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detectors::{score, DetectorModel};
use crate::error::{Error, Result};
use crate::synth::DatasetBundle;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprAt95 {
    pub fpr: f64,
    /// The in-distribution score at which 95% of InD samples are accepted.
    pub threshold: f64,
}

fn check_scores(ind: &[f64], ood: &[f64]) -> Result<()> {
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::Data(format!(
            "metrics need non-empty score sets, got {} InD and {} OoD",
            ind.len(),
            ood.len()
        )));
    }
    if ind.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    Ok(())
}

/// Threshold `s` is the `ceil(0.05 n_ind)`-th smallest InD score; the FPR is
/// the fraction of OoD scores `>= s`.
pub fn fpr_at_95tpr(ind: &[f64], ood: &[f64]) -> Result<FprAt95> {
    check_scores(ind, ood)?;
    let mut sorted = ind.to_vec();
    sorted.sort_by(f64::total_cmp);
    // ceil(0.05 n) in integer arithmetic
    let k = (5 * ind.len()).div_ceil(100).max(1);
    let threshold = sorted[k - 1];
    let accepted = ood.iter().filter(|&&s| s >= threshold).count();
    Ok(FprAt95 {
        fpr: accepted as f64 / ood.len() as f64,
        threshold,
    })
}

/// `(#{InD > OoD} + #{ties}/2) / (n_ind n_ood)`, counted exactly by sorting.
pub fn auroc(ind: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(ind, ood)?;
    let mut sorted = ood.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the win count, kept integral
    let mut twice: u128 = 0;
    for s in ind {
        let below = sorted.partition_point(|o| o < s);
        let up_to = sorted.partition_point(|o| o <= s);
        twice += 2 * below as u128 + (up_to - below) as u128;
    }
    Ok(twice as f64 / (2.0 * ind.len() as f64 * ood.len() as f64))
}

/// Area under the ROC curve by trapezoids over every distinct threshold.
pub fn auroc_trapezoid(ind: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(ind, ood)?;
    let mut all: Vec<(f64, bool)> = ind.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_pos, n_neg) = (ind.len() as f64, ood.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp as f64 / n_pos, fp as f64 / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub name: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub n_ood: usize,
    /// Mean |approximate - exact| reconstruction error, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_mean_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub counts: Vec<u64>,
}

/// Shared-range score histograms, one per scored set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    pub sets: Vec<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_ind: usize,
    pub threshold_s: f64,
    pub per_ood: Vec<OodResult>,
    pub average_fpr95: f64,
    pub average_auroc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_ind_mean_abs_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub histograms: Option<Histograms>,
}

impl EvalReport {
    /// Pretty JSON with keys in declaration order and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Named score vectors for the InD test set and each OoD set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSets {
    pub ind: Vec<f64>,
    pub ood: Vec<(String, Vec<f64>)>,
}

pub fn histograms(sets: &[(&str, &[f64])], bins: usize) -> Result<Histograms> {
    if bins == 0 || sets.is_empty() {
        return Err(Error::Parameter("histograms need at least one bin and one set".into()));
    }
    let all = sets.iter().flat_map(|(_, s)| s.iter().copied());
    let (min, max) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !min.is_finite() {
        return Err(Error::Data("histograms need at least one finite score".into()));
    }
    let width = (max - min) / bins as f64;
    let sets = sets
        .iter()
        .map(|(name, scores)| {
            let mut counts = vec![0u64; bins];
            for &v in scores.iter() {
                let b = if width > 0.0 {
                    (((v - min) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
            Histogram {
                name: name.to_string(),
                counts,
            }
        })
        .collect();
    Ok(Histograms { min, max, bins, sets })
}

/// Metrics for precomputed scores. Averages are unweighted over OoD sets.
pub fn evaluate_scores(method: &str, sets: &ScoreSets, with_histograms: bool) -> Result<EvalReport> {
    if sets.ood.is_empty() {
        return Err(Error::Data("evaluation needs at least one OoD set".into()));
    }
    let mut per_ood = Vec::with_capacity(sets.ood.len());
    let mut threshold = f64::NAN;
    for (name, scores) in &sets.ood {
        let f = fpr_at_95tpr(&sets.ind, scores).map_err(|e| e.context(name.clone()))?;
        threshold = f.threshold;
        per_ood.push(OodResult {
            name: name.clone(),
            fpr95: f.fpr,
            auroc: auroc(&sets.ind, scores)?,
            n_ood: scores.len(),
            oracle_mean_abs_error: None,
        });
    }
    let k = per_ood.len() as f64;
    let hist = if with_histograms {
        let mut named: Vec<(&str, &[f64])> = vec![("ind_test", &sets.ind)];
        named.extend(sets.ood.iter().map(|(n, s)| (n.as_str(), s.as_slice())));
        Some(histograms(&named, HISTOGRAM_BINS)?)
    } else {
        None
    };
    Ok(EvalReport {
        method: method.to_string(),
        n_ind: sets.ind.len(),
        threshold_s: threshold,
        average_fpr95: per_ood.iter().map(|r| r.fpr95).sum::<f64>() / k,
        average_auroc: per_ood.iter().map(|r| r.auroc).sum::<f64>() / k,
        per_ood,
        oracle_ind_mean_abs_error: None,
        histograms: hist,
    })
}

/// Scores the bundle's InD test set and every OoD set once.
pub fn score_bundle(model: &DetectorModel, bundle: &DatasetBundle) -> Result<ScoreSets> {
    let ind = score(model, &bundle.ind_test, bundle.ind_test_logits.as_ref()).map_err(|e| e.context("ind_test"))?;
    let ood = bundle
        .ood_sets
        .iter()
        .map(|s| {
            score(model, &s.features, s.logits.as_ref())
                .map(|v| (s.name.clone(), v))
                .map_err(|e| e.context(s.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSets { ind, ood })
}

pub fn evaluate(model: &DetectorModel, bundle: &DatasetBundle) -> Result<EvalReport> {
    evaluate_scores(model.method().name(), &score_bundle(model, bundle)?, false)
}

/// CSV with columns `dataset,row,score`.
pub fn write_score_csv(out: &mut impl Write, sets: &[(&str, &[f64])]) -> std::io::Result<()> {
    writeln!(out, "dataset,row,score")?;
    for (name, scores) in sets {
        for (i, s) in scores.iter().enumerate() {
            writeln!(out, "{name},{i},{s}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Pairwise definition, for cross-checking.
    fn auroc_pairs(ind: &[f64], ood: &[f64]) -> f64 {
        let mut wins = 0.0;
        for a in ind {
            for b in ood {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        wins / (ind.len() * ood.len()) as f64
    }

    #[test]
    fn fpr_hand_example() {
        let ind: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let r = fpr_at_95tpr(&ind, &[0.5, 5.5, 200.0]).unwrap();
        assert_eq!(r.threshold, 5.0);
        assert_eq!(r.fpr, 2.0 / 3.0);
    }

    #[test]
    fn fpr_edge_cases() {
        let ind = [3.0, 4.0, 5.0];
        assert_eq!(fpr_at_95tpr(&ind, &[1.0, 2.0]).unwrap().fpr, 0.0);
        let same: Vec<f64> = (0..40).map(|v| v as f64).collect();
        assert!(fpr_at_95tpr(&same, &same).unwrap().fpr >= 0.95);
        assert!(matches!(fpr_at_95tpr(&[], &[1.0]), Err(Error::Data(_))));
        assert!(matches!(fpr_at_95tpr(&[1.0], &[]), Err(Error::Data(_))));
        // a single InD score is its own threshold
        assert_eq!(fpr_at_95tpr(&[2.0], &[2.0, 1.0]).unwrap().fpr, 0.5);
    }

    #[test]
    fn auroc_hand_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[3.0, 1.0], &[2.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert_eq!(auroc_trapezoid(&[3.0, 1.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(auroc_trapezoid(&[1.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn averages_are_unweighted() {
        let sets = ScoreSets {
            ind: (0..20).map(|v| 10.0 + v as f64).collect(),
            ood: vec![("far".into(), vec![0.0; 3]), ("near".into(), vec![100.0; 50])],
        };
        let r = evaluate_scores("x", &sets, false).unwrap();
        assert_eq!(r.per_ood[0].fpr95, 0.0);
        assert_eq!(r.per_ood[1].fpr95, 1.0);
        assert_eq!(r.average_fpr95, 0.5);
        assert_eq!(r.average_auroc, 0.5);
        assert!(evaluate_scores("x", &ScoreSets { ind: vec![1.0], ood: vec![] }, false).is_err());
    }

    #[test]
    fn report_json_has_stable_key_order() {
        let sets = ScoreSets {
            ind: vec![1.0, 2.0, 3.0],
            ood: vec![("a".into(), vec![0.0, 2.5])],
        };
        let json = evaluate_scores("pca", &sets, true).unwrap().to_json();
        let keys = ["\"method\"", "\"n_ind\"", "\"threshold_s\"", "\"per_ood\"", "\"average_fpr95\"", "\"average_auroc\"", "\"histograms\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn histogram_counts_cover_every_score() {
        let h = histograms(&[("a", &[0.0, 1.0, 0.5]), ("b", &[1.0, 1.0])], 4).unwrap();
        assert_eq!(h.sets[0].counts, vec![1, 0, 1, 1]);
        assert_eq!(h.sets[1].counts, vec![0, 0, 0, 2]);
        let flat = histograms(&[("a", &[2.0, 2.0])], 3).unwrap();
        assert_eq!(flat.sets[0].counts, vec![2, 0, 0]);
    }

    #[test]
    fn score_csv_layout() {
        let mut out = Vec::new();
        write_score_csv(&mut out, &[("ind_test", &[1.5, -2.0]), ("ood", &[0.25])]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "dataset,row,score\nind_test,0,1.5\nind_test,1,-2\nood,0,0.25\n");
    }

    #[test]
    fn rank_and_trapezoid_forms_agree_with_ties() {
        let mut rng = SeededRng::new(0);
        for _ in 0..100 {
            let n = 1 + rng.below(60);
            let m = 1 + rng.below(60);
            // coarse grid to force ties
            let ind: Vec<f64> = (0..n).map(|_| (rng.normal() * 3.0).round() + 1.0).collect();
            let ood: Vec<f64> = (0..m).map(|_| (rng.normal() * 3.0).round()).collect();
            let a = auroc(&ind, &ood).unwrap();
            assert!((a - auroc_trapezoid(&ind, &ood).unwrap()).abs() <= 1e-12);
            assert!((a - auroc_pairs(&ind, &ood)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn tpr_is_at_least_95_percent(ind in prop::collection::vec(-1e3f64..1e3, 1..200), ood in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let r = fpr_at_95tpr(&ind, &ood).unwrap();
            let tpr = ind.iter().filter(|&&s| s >= r.threshold).count() as f64 / ind.len() as f64;
            prop_assert!(tpr >= 0.95);
        }

        #[test]
        fn auroc_is_invariant_to_increasing_maps(ind in prop::collection::vec(-5f64..5.0, 1..50), ood in prop::collection::vec(-5f64..5.0, 1..50)) {
            let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect::<Vec<f64>>();
            prop_assert_eq!(auroc(&ind, &ood).unwrap(), auroc(&f(&ind), &f(&ood)).unwrap());
        }

        #[test]
        fn auroc_swaps_to_complement(ind in prop::collection::hash_set(-1000i32..1000, 1..40), ood in prop::collection::hash_set(1000i32..3000, 1..40)) {
            // disjoint integer ranges keep the sets tie-free
            let mut a: Vec<f64> = ind.into_iter().map(f64::from).collect();
            let mut b: Vec<f64> = ood.into_iter().map(|v| f64::from(v) - 2000.0).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            b.retain(|x| a.binary_search_by(|y| y.total_cmp(x)).is_err());
            prop_assume!(!b.is_empty());
            let s = auroc(&a, &b).unwrap() + auroc(&b, &a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
