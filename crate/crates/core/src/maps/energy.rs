//! Logit energies and landmark selection.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{FeatureMatrix, Role};
use crate::rng::SeededRng;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Per-sample energies `T * log sum_j exp(f_j / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyScores {
    pub values: Vec<f64>,
    pub temperature: f64,
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be positive, got {t}")))
    }
}

/// Max-shifted log-sum-exp of `row / t`, scaled back by `t`.
pub fn energy(row: &[f64], t: f64) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|f| ((f - max) / t).exp()).sum();
    max + t * sum.ln()
}

pub fn energy_scores(logits: &FeatureMatrix, temperature: f64) -> Result<EnergyScores> {
    if logits.role() != Role::Logits {
        return Err(Error::Usage("energy scores need a logits matrix".into()));
    }
    check_temperature(temperature)?;
    Ok(EnergyScores {
        values: logits.row_iter().map(|r| energy(r, temperature)).collect(),
        temperature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// The `M_n` training samples with the smallest energy.
    #[default]
    LowEnergy,
    /// The `M_n` training samples with the largest energy.
    HighEnergy,
    Uniform,
}

impl Sampling {
    pub fn needs_energies(self) -> bool {
        !matches!(self, Sampling::Uniform)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Sampling::LowEnergy => 0,
            Sampling::HighEnergy => 1,
            Sampling::Uniform => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Sampling::LowEnergy),
            1 => Ok(Sampling::HighEnergy),
            2 => Ok(Sampling::Uniform),
            other => Err(Error::Format(format!("unknown sampling code {other}"))),
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::LowEnergy => "low-energy",
            Sampling::HighEnergy => "high-energy",
            Sampling::Uniform => "uniform",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low-energy" => Ok(Sampling::LowEnergy),
            "high-energy" => Ok(Sampling::HighEnergy),
            "uniform" => Ok(Sampling::Uniform),
            other => Err(Error::Usage(format!(
                "unknown sampling scheme {other:?} (expected low-energy, high-energy or uniform)"
            ))),
        }
    }
}

/// Picks `count` landmark rows out of `n_train`, returned in ascending index
/// order. Energy ties are broken by the lower index.
pub fn select_landmarks(
    n_train: usize,
    energies: Option<&EnergyScores>,
    count: usize,
    sampling: Sampling,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if count == 0 || count > n_train {
        return Err(Error::Parameter(format!(
            "cannot select {count} landmarks from {n_train} training rows"
        )));
    }
    let mut picked = match sampling {
        Sampling::Uniform => rng.sample_without_replacement(n_train, count),
        Sampling::LowEnergy | Sampling::HighEnergy => {
            let e = energies.ok_or_else(|| {
                Error::Usage(format!("{sampling} sampling needs logits for energies"))
            })?;
            if e.values.len() != n_train {
                return Err(Error::Shape(format!(
                    "{} energies for {n_train} training rows",
                    e.values.len()
                )));
            }
            let mut order: Vec<usize> = (0..n_train).collect();
            let v = &e.values;
            match sampling {
                Sampling::LowEnergy => order.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j))),
                _ => order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j))),
            }
            order.truncate(count);
            order
        }
    };
    picked.sort_unstable();
    Ok(picked)
}
