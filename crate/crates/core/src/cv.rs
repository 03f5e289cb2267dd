//! V-fold cross-validated predictive risk and CV model selection.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{training_mask, FoldAssignment, FoldScheme};
use crate::netgen::Adjacency;
use crate::sbm::{predict_with, FitOptions, Fitter, Prediction, TrainingMask};
use crate::{child_seed, stream};

/// Mean of `(truth - estimate)^2` over `cells`.
pub fn mse_loss(truth: &DMatrix<f64>, estimate: &DMatrix<f64>, cells: &[(usize, usize)]) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch {
            expected: truth.nrows(),
            found: estimate.nrows(),
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyCellSet);
    }
    let total: f64 = cells
        .iter()
        .map(|&(i, j)| {
            let d = truth[(i, j)] - estimate[(i, j)];
            d * d
        })
        .sum();
    Ok(total / cells.len() as f64)
}

/// All off-diagonal cells of an n×n matrix.
pub fn off_diagonal_cells(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// `Y` as a real matrix with held-out dyads replaced by the training density.
pub fn impute_heldout(y: &Adjacency, mask: &TrainingMask) -> Result<DMatrix<f64>> {
    if mask.n() != y.n() {
        return Err(Error::DimensionMismatch {
            expected: y.n(),
            found: mask.n(),
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let fill = mask.training_density(y);
    Ok(DMatrix::from_fn(y.n(), y.n(), |i, j| {
        if i == j {
            0.0
        } else if mask.observed(i, j) {
            y.value(i, j)
        } else {
            fill
        }
    }))
}

/// Which denominator a risk is reported with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the number of validated dyads.
    #[default]
    PerValidated,
    /// Divide by n(n-1) regardless of how many dyads were validated.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CvOptions {
    pub fit: FitOptions,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub scheme: FoldScheme,
    pub v: usize,
    pub k: usize,
    pub risk_paper: f64,
    pub risk_per_validated: f64,
    pub validated_count: usize,
    /// Mean squared error within each fold (0 for a fold with no dyads).
    pub per_fold_losses: Vec<f64>,
}

impl RiskEstimate {
    pub fn risk(&self, norm: Normalization) -> f64 {
        match norm {
            Normalization::PerValidated => self.risk_per_validated,
            Normalization::Paper => self.risk_paper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub scheme: FoldScheme,
    pub v: usize,
    pub estimates: Vec<RiskEstimate>,
}

impl RiskCurve {
    pub fn ks(&self) -> Vec<usize> {
        self.estimates.iter().map(|e| e.k).collect()
    }

    pub fn values(&self, norm: Normalization) -> Vec<(usize, f64)> {
        self.estimates.iter().map(|e| (e.k, e.risk(norm))).collect()
    }

    /// Smallest-risk K; ties go to the smaller K.
    pub fn argmin(&self, norm: Normalization) -> Option<usize> {
        argmin_by_k(&self.values(norm))
    }

    pub fn csv_header() -> &'static str {
        "scheme,V,K,risk_paper,risk_per_validated,validated_count"
    }

    pub fn to_csv(&self, header: bool) -> String {
        let mut out = String::new();
        if header {
            out.push_str(Self::csv_header());
            out.push('\n');
        }
        for e in &self.estimates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.scheme, e.v, e.k, e.risk_paper, e.risk_per_validated, e.validated_count
            );
        }
        out
    }
}

/// Index of the minimum value by K, with ties resolved to the smaller K.
pub fn argmin_by_k(values: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, v) in values {
        match best {
            Some((bk, bv)) if v > bv || (v == bv && k >= bk) => {}
            _ => best = Some((k, v)),
        }
    }
    best.map(|(k, _)| k)
}

struct FoldLoss {
    sum: f64,
    count: usize,
}

fn fold_loss<R: Rng + ?Sized>(
    y: &Adjacency,
    fitter: &Fitter<'_>,
    cells: &[(usize, usize)],
    k: usize,
    prediction: Prediction,
    rng: &mut R,
) -> Result<FoldLoss> {
    let fit = fitter.fit(k, rng)?;
    let p = predict_with(&fit, prediction);
    let sum = cells
        .iter()
        .map(|&(i, j)| {
            let d = y.value(i, j) - p.get(i, j);
            d * d
        })
        .sum();
    Ok(FoldLoss {
        sum,
        count: cells.len(),
    })
}

fn estimate(y: &Adjacency, a: &FoldAssignment, k: usize, losses: &[FoldLoss]) -> RiskEstimate {
    let n = y.n();
    let total: f64 = losses.iter().map(|l| l.sum).sum();
    let validated: usize = losses.iter().map(|l| l.count).sum();
    let dyads = (n * (n - 1)) as f64;
    RiskEstimate {
        scheme: a.scheme(),
        v: a.folds(),
        k,
        risk_paper: total / dyads,
        risk_per_validated: if validated > 0 { total / validated as f64 } else { 0.0 },
        validated_count: validated,
        per_fold_losses: losses
            .iter()
            .map(|l| if l.count > 0 { l.sum / l.count as f64 } else { 0.0 })
            .collect(),
    }
}

fn check_assignment(y: &Adjacency, a: &FoldAssignment) -> Result<()> {
    if a.n() != y.n() {
        return Err(Error::DimensionMismatch {
            expected: y.n(),
            found: a.n(),
        });
    }
    if y.n() < 2 {
        return Err(Error::EmptyNetwork);
    }
    Ok(())
}

/// Fold `t`'s training mask and validation dyads.
fn fold_data(a: &FoldAssignment, t: usize) -> (TrainingMask, Vec<(usize, usize)>) {
    (training_mask(a, t), a.validation_cells(t))
}

/// CV risk for one K. Every (fold, K) fit draws from its own stream derived
/// from a single seed taken from `rng`, so the value for K does not depend on
/// which other K are evaluated alongside it.
pub fn cv_risk<R: Rng + ?Sized>(
    y: &Adjacency,
    k: usize,
    a: &FoldAssignment,
    rng: &mut R,
) -> Result<RiskEstimate> {
    cv_risk_with(y, k, a, CvOptions::default(), rng)
}

pub fn cv_risk_with<R: Rng + ?Sized>(
    y: &Adjacency,
    k: usize,
    a: &FoldAssignment,
    opts: CvOptions,
    rng: &mut R,
) -> Result<RiskEstimate> {
    let curve = cv_risk_curve_with(y, k..=k, a, opts, rng)?;
    Ok(curve.estimates.into_iter().next().expect("one estimate"))
}

/// Risk for every K in `ks` on one fold assignment; each fold's imputed matrix
/// and its decomposition are computed once and shared across K.
pub fn cv_risk_curve<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    a: &FoldAssignment,
    rng: &mut R,
) -> Result<RiskCurve> {
    cv_risk_curve_with(y, ks, a, CvOptions::default(), rng)
}

pub fn cv_risk_curve_with<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    a: &FoldAssignment,
    opts: CvOptions,
    rng: &mut R,
) -> Result<RiskCurve> {
    check_assignment(y, a)?;
    let n = y.n();
    if ks.is_empty() || *ks.start() == 0 {
        return Err(Error::InvalidBlockCount { k: 0, n });
    }
    if *ks.end() > n {
        return Err(Error::InvalidBlockCount { k: *ks.end(), n });
    }
    let base: u64 = rng.random();
    let ks: Vec<usize> = ks.collect();
    let mut losses: Vec<Vec<FoldLoss>> = ks.iter().map(|_| Vec::new()).collect();
    for t in 1..=a.folds() {
        let (mask, cells) = fold_data(a, t);
        let fitter = Fitter::with_options(y, &mask, opts.fit)?;
        for (slot, &k) in losses.iter_mut().zip(&ks) {
            let mut sub = stream(child_seed(base, &[t as u64, k as u64]));
            slot.push(fold_loss(y, &fitter, &cells, k, opts.prediction, &mut sub)?);
        }
    }
    Ok(RiskCurve {
        scheme: a.scheme(),
        v: a.folds(),
        estimates: ks
            .iter()
            .zip(&losses)
            .map(|(&k, l)| estimate(y, a, k, l))
            .collect(),
    })
}

/// Draws one fold assignment, evaluates the whole K range on it and returns
/// the risk-minimizing K (ties to the smaller K).
pub fn select_model_cv<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    scheme: FoldScheme,
    v: usize,
    rng: &mut R,
) -> Result<(usize, RiskCurve)> {
    select_model_cv_with(y, ks, scheme, v, CvOptions::default(), rng)
}

pub fn select_model_cv_with<R: Rng + ?Sized>(
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    scheme: FoldScheme,
    v: usize,
    opts: CvOptions,
    rng: &mut R,
) -> Result<(usize, RiskCurve)> {
    let a = scheme.assign(y.n(), v, rng)?;
    let curve = cv_risk_curve_with(y, ks, &a, opts, rng)?;
    let k_hat = curve
        .argmin(Normalization::PerValidated)
        .expect("nonempty curve");
    Ok((k_hat, curve))
}
