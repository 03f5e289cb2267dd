//! Scoring of simulation outcomes: selection accuracy, confusion tables, MSE
//! against the generating probabilities and variance studies of CV risk.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::cv::{argmin_by_k, cv_risk_with, mse_loss, off_diagonal_cells, CvOptions};
use crate::error::{Error, Result};
use crate::folds::FoldScheme;
use crate::netgen::{sample_network, Adjacency, GeneratorCell, Membership, TieProbabilities};
use crate::sbm::{fit_sbm, mle_block_probabilities, predict_probabilities, FittedSbm, TrainingMask};
use crate::{child_seed, stream};

pub const STATUS_OK: &str = "ok";

/// One method's outcome on one simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub k_true: usize,
    pub sizes: String,
    pub b: f64,
    pub r: f64,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub k_hat: Option<usize>,
    pub mse_true: Option<f64>,
    /// `K:value;` pairs.
    pub curve: String,
    pub wall_ms: u64,
    pub status: String,
    pub network_hash: String,
}

impl ReplicateRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK && self.k_hat.is_some()
    }

    pub fn correct(&self) -> bool {
        self.k_hat == Some(self.k_true)
    }
}

pub fn format_curve(values: &[(usize, f64)]) -> String {
    values.iter().map(|(k, v)| format!("{k}:{v};")).collect()
}

pub fn parse_curve(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(';')
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once(':').ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("curve entry `{pair}` lacks ':'"),
            })?;
            let k = k.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad K `{k}`"),
            })?;
            let v = v.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad value `{v}`"),
            })?;
            Ok((k, v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// `p ± 1.96 sqrt(p(1-p)/N)`, clipped to [0, 1].
    #[default]
    Normal,
    /// Clopper–Pearson.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub method: String,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// 95% interval for `hits` successes in `count` trials.
pub fn proportion_interval(hits: usize, count: usize, kind: IntervalKind) -> (f64, f64) {
    let p = hits as f64 / count as f64;
    match kind {
        IntervalKind::Normal => {
            let half = Z_975 * (p * (1.0 - p) / count as f64).sqrt();
            ((p - half).max(0.0), (p + half).min(1.0))
        }
        IntervalKind::Exact => {
            let lo = if hits == 0 {
                0.0
            } else {
                Beta::new(hits as f64, (count - hits + 1) as f64)
                    .map(|d| d.inverse_cdf(0.025))
                    .unwrap_or(0.0)
            };
            let hi = if hits == count {
                1.0
            } else {
                Beta::new((hits + 1) as f64, (count - hits) as f64)
                    .map(|d| d.inverse_cdf(0.975))
                    .unwrap_or(1.0)
            };
            (lo.min(p), hi.max(p))
        }
    }
}

/// Fraction of (K_true, K̂) pairs that agree.
pub fn accuracy_of_pairs(method: &str, pairs: &[(usize, usize)], kind: IntervalKind) -> Result<AccuracySummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let hits = pairs.iter().filter(|(t, h)| t == h).count();
    let (ci_low, ci_high) = proportion_interval(hits, pairs.len(), kind);
    Ok(AccuracySummary {
        method: method.to_string(),
        accuracy: hits as f64 / pairs.len() as f64,
        ci_low,
        ci_high,
        count: pairs.len(),
    })
}

/// Selection accuracy over records. Failed records are not scored.
pub fn accuracy(records: &[ReplicateRecord]) -> Result<AccuracySummary> {
    accuracy_with(records, IntervalKind::Normal)
}

pub fn accuracy_with(records: &[ReplicateRecord], kind: IntervalKind) -> Result<AccuracySummary> {
    let method = records
        .first()
        .map(|r| r.method.clone())
        .ok_or(Error::EmptyInput("records"))?;
    let method = if records.iter().all(|r| r.method == method) {
        method
    } else {
        "mixed".to_string()
    };
    let pairs: Vec<(usize, usize)> = records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.k_true, r.k_hat.expect("ok records carry K")))
        .collect();
    accuracy_of_pairs(&method, &pairs, kind)
}

/// Column-normalized frequencies of K̂ given K_true. Row `k_max` (zero-based)
/// is the overflow row for K̂ > K_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub k_max: usize,
    pub k_true: Vec<usize>,
    /// `table[row][col]`, rows K̂ = 1..=K_max then overflow.
    pub table: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl Confusion {
    pub fn column(&self, k_true: usize) -> Option<Vec<f64>> {
        let c = self.k_true.iter().position(|&k| k == k_true)?;
        Some(self.table.iter().map(|row| row[c]).collect())
    }

    pub fn get(&self, k_hat: usize, k_true: usize) -> f64 {
        let Some(c) = self.k_true.iter().position(|&k| k == k_true) else {
            return 0.0;
        };
        let row = if k_hat > self.k_max { self.k_max } else { k_hat - 1 };
        self.table[row][c]
    }
}

pub fn confusion_of_pairs(pairs: &[(usize, usize)], k_max: usize) -> Result<Confusion> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let mut columns: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(t, h) in pairs {
        let col = columns.entry(t).or_insert_with(|| vec![0; k_max + 1]);
        let row = if h > k_max || h == 0 { k_max } else { h - 1 };
        col[row] += 1;
    }
    let k_true: Vec<usize> = columns.keys().copied().collect();
    let counts: Vec<usize> = columns.values().map(|c| c.iter().sum()).collect();
    let table = (0..=k_max)
        .map(|row| {
            columns
                .values()
                .zip(&counts)
                .map(|(c, &total)| c[row] as f64 / total as f64)
                .collect()
        })
        .collect();
    Ok(Confusion {
        k_max,
        k_true,
        table,
        counts,
    })
}

pub fn confusion(records: &[ReplicateRecord], k_max: usize) -> Result<Confusion> {
    let pairs: Vec<(usize, usize)> = records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.k_true, r.k_hat.expect("ok records carry K")))
        .collect();
    confusion_of_pairs(&pairs, k_max)
}

/// Mean squared error of the fitted tie probabilities against the truth over
/// all off-diagonal dyads.
pub fn mse_vs_truth(p: &TieProbabilities, fit: &FittedSbm) -> Result<f64> {
    let estimate = predict_probabilities(fit);
    mse_loss(p.entries(), estimate.entries(), &off_diagonal_cells(p.n()))
}

/// MSE against the truth of the block model refit by conditional MLE on a
/// given partition (used for community detection outputs).
pub fn mse_of_partition(p: &TieProbabilities, y: &Adjacency, labels: &Membership) -> Result<f64> {
    let b = mle_block_probabilities(y, labels, &TrainingMask::full(y.n()))?;
    let n = y.n();
    let estimate = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            b.get(labels.label(i), labels.label(j))
        }
    });
    mse_loss(p.entries(), &estimate, &off_diagonal_cells(n))
}

/// Law-of-total-variance split of risk estimates indexed by network (rows)
/// and fold draw (columns). Variances are population variances, so
/// `fold_component + network_component = total` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub total: f64,
    pub sd: f64,
    pub fold_component: f64,
    pub network_component: f64,
    pub fold_share: f64,
    pub network_share: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn decompose_variance(grid: &[Vec<f64>]) -> Result<VarianceDecomposition> {
    if grid.len() < 2 || grid.iter().any(|row| row.len() < 2) {
        return Err(Error::EmptyInput("variance grid needs at least 2 networks and 2 fold draws"));
    }
    let f = grid[0].len();
    if grid.iter().any(|row| row.len() != f) {
        return Err(Error::DimensionMismatch {
            expected: f,
            found: grid.iter().map(Vec::len).find(|&l| l != f).unwrap_or(f),
        });
    }
    let fold_component = mean(&grid.iter().map(|row| population_variance(row)).collect::<Vec<_>>());
    let network_component = population_variance(&grid.iter().map(|row| mean(row)).collect::<Vec<_>>());
    let total = fold_component + network_component;
    let (fold_share, network_share) = if total > 0.0 {
        (fold_component / total, network_component / total)
    } else {
        (0.0, 0.0)
    };
    Ok(VarianceDecomposition {
        total,
        sd: total.sqrt(),
        fold_component,
        network_component,
        fold_share,
        network_share,
    })
}

/// Risk estimates for `networks` × `draws` (network, fold assignment) pairs
/// on one generator cell and candidate K, plus their decomposition.
#[allow(clippy::too_many_arguments)]
pub fn variance_decomposition(
    scheme: FoldScheme,
    v: usize,
    cell: &GeneratorCell,
    k: usize,
    networks: usize,
    draws: usize,
    seed: u64,
    opts: CvOptions,
) -> Result<(Vec<Vec<f64>>, VarianceDecomposition)> {
    let model = cell.model()?;
    let mut grid = Vec::with_capacity(networks);
    for m in 0..networks {
        let y = sample_network(&model.probabilities, &mut stream(child_seed(seed, &[m as u64])));
        let row = risk_draws(&y, scheme, v, k, draws, child_seed(seed, &[m as u64, 1]), opts)?;
        grid.push(row);
    }
    let dec = decompose_variance(&grid)?;
    Ok((grid, dec))
}

/// Per-validated risk of `y` under `draws` independent fold assignments.
pub fn risk_draws(
    y: &Adjacency,
    scheme: FoldScheme,
    v: usize,
    k: usize,
    draws: usize,
    seed: u64,
    opts: CvOptions,
) -> Result<Vec<f64>> {
    (0..draws)
        .map(|f| {
            let mut rng = stream(child_seed(seed, &[f as u64]));
            let a = scheme.assign(y.n(), v, &mut rng)?;
            Ok(cv_risk_with(y, k, &a, opts, &mut rng)?.risk_per_validated)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Squared bias, population variance and MSE of `estimates` around `target`.
pub fn bias_variance(estimates: &[f64], target: f64) -> Result<BiasVariance> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    let m = mean(estimates);
    let variance = population_variance(estimates);
    let mse = estimates.iter().map(|e| (e - target) * (e - target)).sum::<f64>() / estimates.len() as f64;
    Ok(BiasVariance {
        bias2: (m - target) * (m - target),
        variance,
        mse,
    })
}

/// Expected per-dyad predictive risk of the full-data K-block fit:
/// `E[mse_vs_truth] + mean p(1-p)`, averaged over `reps` fresh networks.
pub fn true_risk(cell: &GeneratorCell, k: usize, reps: usize, seed: u64) -> Result<f64> {
    if reps == 0 {
        return Err(Error::EmptyInput("replicates"));
    }
    let model = cell.model()?;
    let mut total = 0.0;
    for rep in 0..reps {
        let mut rng = stream(child_seed(seed, &[rep as u64]));
        let y = sample_network(&model.probabilities, &mut rng);
        let fit = fit_sbm(&y, k, &TrainingMask::full(y.n()), &mut rng)?;
        total += mse_vs_truth(&model.probabilities, &fit)?;
    }
    Ok(total / reps as f64 + model.probabilities.mean_bernoulli_variance())
}

/// Bias/variance of a scheme's CV risk estimate for K against `r_star`, over
/// `reps` (network, fold assignment) pairs.
#[allow(clippy::too_many_arguments)]
pub fn bias_variance_of_risk(
    scheme: FoldScheme,
    v: usize,
    cell: &GeneratorCell,
    k: usize,
    r_star: f64,
    reps: usize,
    seed: u64,
    opts: CvOptions,
) -> Result<BiasVariance> {
    let model = cell.model()?;
    let estimates = (0..reps)
        .map(|rep| {
            let mut rng = stream(child_seed(seed, &[rep as u64]));
            let y = sample_network(&model.probabilities, &mut rng);
            let a = scheme.assign(y.n(), v, &mut rng)?;
            Ok(cv_risk_with(&y, k, &a, opts, &mut rng)?.risk_per_validated)
        })
        .collect::<Result<Vec<f64>>>()?;
    bias_variance(&estimates, r_star)
}

/// K whose full-data fit is closest to the truth, with the MSE per K.
pub fn true_risk_minimizer_from_fits(p: &TieProbabilities, fits: &[FittedSbm]) -> Result<(usize, Vec<(usize, f64)>)> {
    if fits.is_empty() {
        return Err(Error::EmptyInput("fits"));
    }
    let curve = fits
        .iter()
        .map(|f| Ok((f.k, mse_vs_truth(p, f)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmin_by_k(&curve).expect("nonempty"), curve))
}

pub fn true_risk_minimizer<R: Rng + ?Sized>(
    p: &TieProbabilities,
    y: &Adjacency,
    ks: RangeInclusive<usize>,
    rng: &mut R,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let fits = crate::criteria::full_data_fits(y, ks, Default::default(), rng)?;
    true_risk_minimizer_from_fits(p, &fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{memberships_from_sizes, planted_partition, tie_probabilities, BlockSizeScheme};

    fn record(k_true: usize, k_hat: usize) -> ReplicateRecord {
        ReplicateRecord {
            n: 30,
            k_true,
            sizes: "equal".into(),
            b: 0.1,
            r: 3.0,
            method: "latin-10".into(),
            replicate: 0,
            seed: 0,
            k_hat: Some(k_hat),
            mse_true: Some(0.0),
            curve: String::new(),
            wall_ms: 0,
            status: STATUS_OK.into(),
            network_hash: String::new(),
        }
    }

    #[test]
    fn accuracy_examples() {
        let all: Vec<_> = (0..10).map(|_| record(2, 2)).collect();
        let s = accuracy(&all).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.ci_high, 1.0);

        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (1, if i < 42 { 1 } else { 2 })).collect();
        let s = accuracy_of_pairs("x", &pairs, IntervalKind::Normal).unwrap();
        assert_eq!(s.accuracy, 0.42);
        let half = 1.96 * (0.42f64 * 0.58 / 100.0).sqrt();
        assert!((s.ci_low - (0.42 - half)).abs() < 1e-4);
        assert!((s.ci_high - (0.42 + half)).abs() < 1e-4);
        assert!((half / 1.96 - 0.04936).abs() < 1e-5);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn exact_interval_brackets_estimate() {
        let (lo, hi) = proportion_interval(42, 100, IntervalKind::Exact);
        assert!(lo < 0.42 && hi > 0.42);
        // Reference values for 42/100.
        assert!((lo - 0.3220).abs() < 2e-3, "{lo}");
        assert!((hi - 0.5229).abs() < 2e-3, "{hi}");
        assert_eq!(proportion_interval(0, 10, IntervalKind::Exact).0, 0.0);
        assert_eq!(proportion_interval(10, 10, IntervalKind::Exact).1, 1.0);
    }

    #[test]
    fn confusion_single_record() {
        let c = confusion(&[record(2, 3)], 11).unwrap();
        assert_eq!(c.get(3, 2), 1.0);
        assert_eq!(c.column(2).unwrap().iter().sum::<f64>(), 1.0);
        let over = confusion(&[record(2, 14)], 11).unwrap();
        assert_eq!(over.table[11][0], 1.0);
    }

    #[test]
    fn confusion_columns_sum_to_one() {
        let mut rng = stream(1);
        let pairs: Vec<(usize, usize)> = (0..500)
            .map(|_| (rng.random_range(1..=5), rng.random_range(1..=14)))
            .collect();
        let c = confusion_of_pairs(&pairs, 11).unwrap();
        for (col, &kt) in c.k_true.iter().enumerate() {
            let s: f64 = c.table.iter().map(|row| row[col]).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let count = pairs.iter().filter(|p| p.0 == kt).count();
            assert_eq!(c.counts[col], count);
            let hits = pairs.iter().filter(|p| p.0 == kt && p.1 == kt).count();
            assert!((c.get(kt, kt) - hits as f64 / count as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_round_trip() {
        let values = vec![(1, 0.25), (2, 0.125)];
        let text = format_curve(&values);
        assert_eq!(text, "1:0.25;2:0.125;");
        assert_eq!(parse_curve(&text).unwrap(), values);
        assert!(parse_curve("1-0.2;").is_err());
    }

    #[test]
    fn mse_vs_truth_constant_fit() {
        let truth = memberships_from_sizes(&[5, 5]);
        let p = tie_probabilities(&planted_partition(2, 0.1, 4.0).unwrap(), &truth).unwrap();
        let y = sample_network(&p, &mut stream(3));
        let fit = fit_sbm(&y, 1, &TrainingMask::full(10), &mut stream(0)).unwrap();
        let c = fit.blocks.get(0, 0);
        let mut total = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    total += (p.get(i, j) - c).powi(2);
                }
            }
        }
        assert!((mse_vs_truth(&p, &fit).unwrap() - total / 90.0).abs() < 1e-12);
    }

    #[test]
    fn partition_mse_matches_fit_mse() {
        let truth = memberships_from_sizes(&[6, 6]);
        let p = tie_probabilities(&planted_partition(2, 0.1, 5.0).unwrap(), &truth).unwrap();
        let y = sample_network(&p, &mut stream(8));
        let fit = fit_sbm(&y, 2, &TrainingMask::full(12), &mut stream(1)).unwrap();
        let a = mse_vs_truth(&p, &fit).unwrap();
        let b = mse_of_partition(&p, &y, &fit.membership).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identities() {
        let constant_rows = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]];
        let d = decompose_variance(&constant_rows).unwrap();
        assert_eq!(d.fold_share, 0.0);
        assert_eq!(d.network_share, 1.0);

        let mut rng = stream(4);
        let grid: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
            .collect();
        let d = decompose_variance(&grid).unwrap();
        assert!((d.fold_share + d.network_share - 1.0).abs() < 1e-10);
        let flat: Vec<f64> = grid.iter().flatten().copied().collect();
        assert!((population_variance(&flat) - d.total).abs() < 1e-12);

        let zero = decompose_variance(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!((zero.fold_share, zero.network_share), (0.0, 0.0));
        assert!(decompose_variance(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bias_variance_identity() {
        let exact = bias_variance(&[0.3, 0.3, 0.3], 0.3).unwrap();
        assert_eq!((exact.bias2, exact.variance, exact.mse), (0.0, 0.0, 0.0));
        let mut rng = stream(5);
        let draws: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let bv = bias_variance(&draws, 0.7).unwrap();
        assert!((bv.bias2 + bv.variance - bv.mse).abs() < 1e-10);
    }

    #[test]
    fn variance_grid_shape() {
        let cell = GeneratorCell {
            n: 12,
            k: 2,
            sizes: BlockSizeScheme::Equal,
            b: 0.1,
            r: 4.0,
        };
        let (grid, d) =
            variance_decomposition(FoldScheme::Latin, 3, &cell, 2, 2, 3, 7, CvOptions::default()).unwrap();
        assert_eq!(grid.len(), 2);
        assert!(grid.iter().all(|r| r.len() == 3));
        assert!(d.total >= 0.0);
    }

    #[test]
    fn true_risk_minimizer_matches_scan() {
        let truth = memberships_from_sizes(&[10, 10]);
        let p = tie_probabilities(&planted_partition(2, 0.1, 5.0).unwrap(), &truth).unwrap();
        for seed in 0..3 {
            let y = sample_network(&p, &mut stream(seed));
            let (k, curve) = true_risk_minimizer(&p, &y, 1..=4, &mut stream(seed + 10)).unwrap();
            let best = curve
                .iter()
                .fold((0, f64::INFINITY), |acc, &(kk, v)| if v < acc.1 { (kk, v) } else { acc });
            assert_eq!(k, best.0);
        }
    }
}
