//! AIC and BIC for the directed SBM.

use std::fmt;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cv::argmin_by_k;
use crate::error::{Error, Result};
use crate::netgen::Adjacency;
use crate::sbm::{FitOptions, FittedSbm, Fitter, TrainingMask};
use crate::{child_seed, stream};

/// Free parameters of a K-block directed SBM: K² block probabilities plus
/// K − 1 block proportions.
pub fn degrees_of_freedom(k: usize) -> usize {
    k * k + k - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Aic,
    Bic,
    /// Unpenalized −2 logL.
    #[serde(rename = "loglik")]
    LogLikelihood,
}

impl CriterionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionKind::Aic => "aic",
            CriterionKind::Bic => "bic",
            CriterionKind::LogLikelihood => "loglik",
        }
    }

    pub fn evaluate(&self, log_likelihood: f64, k: usize, n: usize) -> InformationCriterion {
        match self {
            CriterionKind::Aic => aic(log_likelihood, k),
            CriterionKind::Bic => bic(log_likelihood, k, n),
            CriterionKind::LogLikelihood => InformationCriterion {
                kind: *self,
                value: -2.0 * log_likelihood,
                d: degrees_of_freedom(k),
                k,
            },
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(CriterionKind::Aic),
            "bic" => Ok(CriterionKind::Bic),
            "loglik" | "log-likelihood" | "none" => Ok(CriterionKind::LogLikelihood),
            other => Err(format!("unknown criterion `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriterion {
    pub kind: CriterionKind,
    pub value: f64,
    pub d: usize,
    pub k: usize,
}

pub fn aic(log_likelihood: f64, k: usize) -> InformationCriterion {
    let d = degrees_of_freedom(k);
    InformationCriterion {
        kind: CriterionKind::Aic,
        value: -2.0 * log_likelihood + 2.0 * d as f64,
        d,
        k,
    }
}

/// BIC with the number of ordered dyads n(n−1) as the sample size.
pub fn bic(log_likelihood: f64, k: usize, n: usize) -> InformationCriterion {
    let d = degrees_of_freedom(k);
    let dyads = (n * n.saturating_sub(1)) as f64;
    InformationCriterion {
        kind: CriterionKind::Bic,
        value: -2.0 * log_likelihood + d as f64 * dyads.ln(),
        d,
        k,
    }
}

/// Full-data fits for every K in `ks`, each from its own stream derived from
/// one seed drawn from `rng`.
pub fn full_data_fits<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    opts: FitOptions,
    rng: &mut R,
) -> Result<Vec<FittedSbm>> {
    let n = y.n();
    if ks.is_empty() || *ks.start() == 0 || *ks.end() > n {
        return Err(Error::InvalidBlockCount {
            k: if ks.is_empty() { 0 } else { *ks.end() },
            n,
        });
    }
    let base: u64 = rng.random();
    let mask = TrainingMask::full(n);
    let fitter = Fitter::with_options(y, &mask, opts)?;
    ks.map(|k| fitter.fit(k, &mut stream(child_seed(base, &[k as u64]))))
        .collect()
}

/// Criterion values for already computed fits and the minimizing K (ties to
/// the smaller K).
pub fn select_from_fits(
    fits: &[FittedSbm],
    kind: CriterionKind,
    n: usize,
) -> Result<(usize, Vec<InformationCriterion>)> {
    if fits.is_empty() {
        return Err(Error::EmptyInput("fits"));
    }
    let curve: Vec<InformationCriterion> = fits
        .iter()
        .map(|f| kind.evaluate(f.log_likelihood, f.k, n))
        .collect();
    let values: Vec<(usize, f64)> = curve.iter().map(|c| (c.k, c.value)).collect();
    let k_hat = argmin_by_k(&values).expect("nonempty");
    Ok((k_hat, curve))
}

pub fn select_model_ic<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    kind: CriterionKind,
    rng: &mut R,
) -> Result<(usize, Vec<InformationCriterion>)> {
    let fits = full_data_fits(y, ks, FitOptions::default(), rng)?;
    select_from_fits(&fits, kind, y.n())
}

/// `kind,K,d,value` rows.
pub fn curve_to_csv(curve: &[InformationCriterion]) -> String {
    let mut out = String::from("kind,K,d,value\n");
    for c in curve {
        let _ = writeln!(out, "{},{},{},{}", c.kind, c.k, c.d, c.value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degrees() {
        assert_eq!(degrees_of_freedom(1), 1);
        assert_eq!(degrees_of_freedom(2), 5);
        assert_eq!(degrees_of_freedom(3), 11);
    }

    #[test]
    fn aic_examples() {
        assert_eq!(aic(-100.0, 1).value, 202.0);
        assert_eq!(aic(-100.0, 2).value, 210.0);
    }

    #[test]
    fn bic_examples() {
        assert!((bic(-100.0, 2, 30).value - (200.0 + 5.0 * 870f64.ln())).abs() < 1e-12);
        assert!(12f64.ln() > 2.0);
        assert!(bic(-10.0, 1, 4).value > aic(-10.0, 1).value);
    }

    #[test]
    fn bic_minus_aic_identity() {
        for (ll, k, n) in [(-5.0, 1, 4), (-1234.5, 3, 60), (-0.1, 7, 300)] {
            let diff = bic(ll, k, n).value - aic(ll, k).value;
            let expected = degrees_of_freedom(k) as f64 * (((n * (n - 1)) as f64).ln() - 2.0);
            assert!((diff - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("AIC".parse::<CriterionKind>().unwrap(), CriterionKind::Aic);
        assert_eq!("none".parse::<CriterionKind>().unwrap(), CriterionKind::LogLikelihood);
        assert!("cv".parse::<CriterionKind>().is_err());
    }
}
