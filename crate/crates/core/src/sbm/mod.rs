//! SBM estimation for a fixed block count: spectral start, variational EM,
//! conditional MLE of the block matrix and likelihood evaluation.

pub mod em;
pub mod kmeans;
mod mask;
pub mod spectral;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use em::{EmOptions, PROB_CLAMP};
pub use kmeans::{kmeans, KMeansResult, Points};
pub use mask::TrainingMask;
pub use spectral::{spectral_clustering, SpectralBasis};

use crate::cv::impute_heldout;
use crate::error::{Error, Result};
use crate::netgen::{Adjacency, BlockMatrix, Membership, TieProbabilities};

/// A fitted SBM for one candidate K.
///
/// `blocks` is the conditional MLE given the hard labels `membership`, and
/// `log_likelihood` is the complete log-likelihood at that pair over the
/// training dyads.
#[derive(Debug, Clone)]
pub struct FittedSbm {
    pub k: usize,
    pub blocks: BlockMatrix,
    pub responsibilities: DMatrix<f64>,
    pub membership: Membership,
    pub prior: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Flat record of a fit for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub k: usize,
    pub blocks: Vec<Vec<f64>>,
    /// One-based labels.
    pub membership: Vec<usize>,
    pub prior: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedSbm {
    pub fn record(&self) -> FitRecord {
        FitRecord {
            k: self.k,
            blocks: self.blocks.rows(),
            membership: self.membership.labels().iter().map(|l| l + 1).collect(),
            prior: self.prior.clone(),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// `key=value` text, one field per line; block rows are `;`-separated.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "K={}", self.k);
        let rows: Vec<String> = self.blocks.rows().iter().map(|r| join(r)).collect();
        let _ = writeln!(out, "B={}", rows.join(";"));
        let labels: Vec<String> = self
            .membership
            .labels()
            .iter()
            .map(|l| (l + 1).to_string())
            .collect();
        let _ = writeln!(out, "memberships={}", labels.join(","));
        let _ = writeln!(out, "gamma={}", join(&self.prior));
        let _ = writeln!(out, "logL={}", self.log_likelihood);
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "converged={}", self.converged);
        out
    }
}

/// How fitted models turn into tie probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    /// `p_ij = b[label_i, label_j]`
    #[default]
    Hard,
    /// `p_ij = sum_lk tau_il tau_jk b_lk`
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub em: EmOptions,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    /// Return the starting labels when EM ends at a lower complete
    /// log-likelihood than they had (for instance after collapsing blocks).
    pub keep_better_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            em: EmOptions::default(),
            kmeans_restarts: kmeans::DEFAULT_RESTARTS,
            kmeans_max_iter: kmeans::DEFAULT_MAX_ITER,
            keep_better_start: true,
        }
    }
}

fn check_labels(y: &Adjacency, membership: &Membership, k: usize) -> Result<()> {
    if membership.len() != y.n() {
        return Err(Error::DimensionMismatch {
            expected: y.n(),
            found: membership.len(),
        });
    }
    if let Some(&label) = membership.labels().iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, k });
    }
    Ok(())
}

/// Tie and dyad counts per ordered block pair over observed dyads.
fn block_counts(
    y: &Adjacency,
    membership: &Membership,
    mask: &TrainingMask,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ties = vec![0.0; k * k];
    let mut dyads = vec![0.0; k * k];
    let labels = membership.labels();
    for i in 0..y.n() {
        for j in 0..y.n() {
            if mask.observed(i, j) {
                let c = labels[i] * k + labels[j];
                dyads[c] += 1.0;
                ties[c] += y.value(i, j);
            }
        }
    }
    (ties, dyads)
}

/// `b_lk = Y_(lk) / n_lk` over observed dyads; cells with no observed dyads get
/// the overall training density.
pub fn mle_block_probabilities(
    y: &Adjacency,
    membership: &Membership,
    mask: &TrainingMask,
) -> Result<BlockMatrix> {
    let k = membership.k();
    check_labels(y, membership, k)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let density = mask.training_density(y);
    let (ties, dyads) = block_counts(y, membership, mask, k);
    BlockMatrix::new(DMatrix::from_fn(k, k, |l, m| {
        let c = l * k + m;
        if dyads[c] > 0.0 {
            ties[c] / dyads[c]
        } else {
            density
        }
    }))
}

/// Complete log-likelihood over observed dyads, with probabilities clamped to
/// `[1e-9, 1 - 1e-9]`.
pub fn complete_log_likelihood(
    y: &Adjacency,
    blocks: &BlockMatrix,
    membership: &Membership,
    mask: &TrainingMask,
) -> f64 {
    let k = blocks.k();
    let (ties, dyads) = block_counts(y, membership, mask, k.max(membership.k()));
    let kk = k.max(membership.k());
    let mut total = 0.0;
    for l in 0..k {
        for m in 0..k {
            let c = l * kk + m;
            if dyads[c] == 0.0 {
                continue;
            }
            let b = blocks.get(l, m).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += ties[c] * b.ln() + (dyads[c] - ties[c]) * (1.0 - b).ln();
        }
    }
    total
}

/// Hard labels from responsibilities; ties go to the smallest label.
pub fn argmax_labels(tau: &DMatrix<f64>) -> Membership {
    let k = tau.ncols();
    let labels = (0..tau.nrows())
        .map(|i| {
            let mut best = 0;
            for l in 1..k {
                if tau[(i, l)] > tau[(i, best)] {
                    best = l;
                }
            }
            best
        })
        .collect();
    Membership::new(labels, k).expect("argmax below k")
}

fn finish(
    y: &Adjacency,
    mask: &TrainingMask,
    k: usize,
    state: em::EmState,
) -> Result<FittedSbm> {
    let membership = argmax_labels(&state.responsibilities);
    let blocks = mle_block_probabilities(y, &membership, mask)?;
    let log_likelihood = complete_log_likelihood(y, &blocks, &membership, mask);
    Ok(FittedSbm {
        k,
        blocks,
        responsibilities: state.responsibilities,
        membership,
        prior: state.prior,
        log_likelihood,
        iterations: state.iterations,
        converged: state.converged,
    })
}

/// Mean-field EM from the given initial labels.
pub fn variational_em(
    y: &Adjacency,
    k: usize,
    mask: &TrainingMask,
    init: &Membership,
    opts: EmOptions,
) -> Result<FittedSbm> {
    if k == 0 || k > y.n() {
        return Err(Error::InvalidBlockCount { k, n: y.n() });
    }
    check_labels(y, init, k)?;
    let data = em::MaskedData::new(y, mask)?;
    finish(y, mask, k, em::run(&data, init, k, opts))
}

/// Fits many candidate block counts on one (network, mask) pair, sharing the
/// imputed matrix and its singular value decomposition.
pub struct Fitter<'a> {
    y: &'a Adjacency,
    mask: &'a TrainingMask,
    data: em::MaskedData,
    basis: SpectralBasis,
    opts: FitOptions,
}

impl<'a> Fitter<'a> {
    pub fn new(y: &'a Adjacency, mask: &'a TrainingMask) -> Result<Self> {
        Self::with_options(y, mask, FitOptions::default())
    }

    pub fn with_options(y: &'a Adjacency, mask: &'a TrainingMask, opts: FitOptions) -> Result<Self> {
        let data = em::MaskedData::new(y, mask)?;
        let basis = SpectralBasis::new(&impute_heldout(y, mask)?)?;
        Ok(Self {
            y,
            mask,
            data,
            basis,
            opts,
        })
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    /// Spectral labels alone (no EM).
    pub fn spectral<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Membership> {
        self.basis
            .cluster_with(k, self.opts.kmeans_restarts, self.opts.kmeans_max_iter, rng)
    }

    pub fn fit<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<FittedSbm> {
        if k == 0 || k > self.y.n() {
            return Err(Error::InvalidBlockCount { k, n: self.y.n() });
        }
        let init = self.spectral(k, rng)?;
        self.fit_from(k, &init)
    }

    pub fn fit_from(&self, k: usize, init: &Membership) -> Result<FittedSbm> {
        check_labels(self.y, init, k)?;
        let state = em::run(&self.data, init, k, self.opts.em);
        let fit = finish(self.y, self.mask, k, state)?;
        if !self.opts.keep_better_start {
            return Ok(fit);
        }
        let blocks = mle_block_probabilities(self.y, init, self.mask)?;
        let log_likelihood = complete_log_likelihood(self.y, &blocks, init, self.mask);
        if log_likelihood <= fit.log_likelihood {
            return Ok(fit);
        }
        let mut prior = vec![0.0; k];
        for &l in init.labels() {
            prior[l] += 1.0 / self.y.n() as f64;
        }
        Ok(FittedSbm {
            k,
            blocks,
            responsibilities: DMatrix::from_fn(init.len(), k, |i, l| (init.label(i) == l) as u8 as f64),
            membership: Membership::new(init.labels().to_vec(), k)?,
            prior,
            log_likelihood,
            iterations: fit.iterations,
            converged: fit.converged,
        })
    }
}

/// Spectral clustering on the imputed matrix followed by variational EM.
pub fn fit_sbm<R: Rng + ?Sized>(
    y: &Adjacency,
    k: usize,
    mask: &TrainingMask,
    rng: &mut R,
) -> Result<FittedSbm> {
    if k == 0 || k > y.n() {
        return Err(Error::InvalidBlockCount { k, n: y.n() });
    }
    Fitter::new(y, mask)?.fit(k, rng)
}

pub fn predict_probabilities(fit: &FittedSbm) -> TieProbabilities {
    predict_with(fit, Prediction::Hard)
}

pub fn predict_with(fit: &FittedSbm, mode: Prediction) -> TieProbabilities {
    let n = fit.membership.len();
    let entries = match mode {
        Prediction::Hard => {
            let labels = fit.membership.labels();
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.0
                } else {
                    fit.blocks.get(labels[i], labels[j])
                }
            })
        }
        Prediction::Soft => {
            let tau = &fit.responsibilities;
            let mut p = tau * fit.blocks.entries() * tau.transpose();
            p.fill_diagonal(0.0);
            p.apply(|v| *v = v.clamp(0.0, 1.0));
            p
        }
    };
    TieProbabilities::new(entries).expect("fitted probabilities lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{memberships_from_sizes, planted_partition, sample_network, tie_probabilities};
    use crate::stream;

    fn random_network(n: usize, p: f64, seed: u64) -> Adjacency {
        let mut rng = stream(seed);
        let probs = TieProbabilities::new(DMatrix::from_element(n, n, p)).unwrap();
        sample_network(&probs, &mut rng)
    }

    /// Direct double loop over dyads.
    fn loop_log_likelihood(y: &Adjacency, b: &BlockMatrix, m: &Membership, mask: &TrainingMask) -> f64 {
        let mut total = 0.0;
        for i in 0..y.n() {
            for j in 0..y.n() {
                if i == j || !mask.observed(i, j) {
                    continue;
                }
                let p = b.get(m.label(i), m.label(j)).clamp(1e-9, 1.0 - 1e-9);
                total += if y.get(i, j) { p.ln() } else { (1.0 - p).ln() };
            }
        }
        total
    }

    #[test]
    fn mle_density_single_block() {
        let y = Adjacency::from_edges(4, &[(0, 1), (1, 2), (3, 0)]).unwrap();
        let b = mle_block_probabilities(&y, &Membership::from_labels(vec![0; 4]), &TrainingMask::full(4)).unwrap();
        assert_eq!(b.get(0, 0), 0.25);
    }

    #[test]
    fn mle_matches_dyad_enumeration() {
        let y = random_network(4, 0.5, 7);
        let m = Membership::from_labels(vec![0, 0, 1, 1]);
        let b = mle_block_probabilities(&y, &m, &TrainingMask::full(4)).unwrap();
        for l in 0..2 {
            for k in 0..2 {
                let (mut ties, mut dyads) = (0, 0);
                for i in 0..4 {
                    for j in 0..4 {
                        if i != j && m.label(i) == l && m.label(j) == k {
                            dyads += 1;
                            ties += usize::from(y.get(i, j));
                        }
                    }
                }
                let expected_dyads = if l == k { 2 } else { 4 };
                assert_eq!(dyads, expected_dyads);
                assert_eq!(b.get(l, k), ties as f64 / dyads as f64);
            }
        }
        let empty = mle_block_probabilities(&Adjacency::empty(4), &m, &TrainingMask::full(4)).unwrap();
        assert!(empty.entries().iter().all(|&v| v == 0.0));
        assert_eq!(
            mle_block_probabilities(&y, &m, &TrainingMask::from_fn(4, |_, _| false)),
            Err(Error::EmptyMask)
        );
    }

    #[test]
    fn mle_empty_cell_uses_training_density() {
        let y = Adjacency::from_edges(3, &[(0, 1), (1, 0)]).unwrap();
        let m = Membership::new(vec![0, 0, 0], 2).unwrap();
        let b = mle_block_probabilities(&y, &m, &TrainingMask::full(3)).unwrap();
        assert!((b.get(1, 1) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_examples() {
        let n = 5;
        let y = random_network(n, 0.3, 1);
        let half = BlockMatrix::from_rows(&[vec![0.5]]).unwrap();
        let one = Membership::from_labels(vec![0; n]);
        let ll = complete_log_likelihood(&y, &half, &one, &TrainingMask::full(n));
        assert!((ll - (n * (n - 1)) as f64 * 0.5f64.ln()).abs() < 1e-10);

        // Perfect deterministic fit: each node its own block.
        let own = Membership::from_labels((0..n).collect());
        let b = mle_block_probabilities(&y, &own, &TrainingMask::full(n)).unwrap();
        let ll = complete_log_likelihood(&y, &b, &own, &TrainingMask::full(n));
        assert!(ll <= 0.0 && ll.abs() < (n * (n - 1)) as f64 * 1.1e-9);
    }

    #[test]
    fn log_likelihood_matches_double_loop() {
        for seed in 0..10 {
            let y = random_network(6, 0.4, seed);
            let fit = fit_sbm(&y, 2, &TrainingMask::full(6), &mut stream(seed)).unwrap();
            let mask = TrainingMask::from_fn(6, |i, j| (i + 2 * j + seed as usize) % 3 != 0);
            for mask in [TrainingMask::full(6), mask] {
                let a = complete_log_likelihood(&y, &fit.blocks, &fit.membership, &mask);
                let b = loop_log_likelihood(&y, &fit.blocks, &fit.membership, &mask);
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_block_fit_is_training_density() {
        let y = random_network(12, 0.2, 3);
        let mask = TrainingMask::from_fn(12, |i, j| (i * 7 + j) % 4 != 1);
        let fit = fit_sbm(&y, 1, &mask, &mut stream(0)).unwrap();
        assert_eq!(fit.blocks.get(0, 0), mask.training_density(&y));
        assert!(fit.converged);
        assert!(fit.iterations <= 2);
        let ll = complete_log_likelihood(&y, &fit.blocks, &fit.membership, &mask);
        assert_eq!(fit.log_likelihood, ll);
    }

    #[test]
    fn empty_network_single_block() {
        let y = Adjacency::empty(6);
        let fit = fit_sbm(&y, 1, &TrainingMask::full(6), &mut stream(0)).unwrap();
        assert_eq!(fit.blocks.get(0, 0), 0.0);
        assert!(fit.log_likelihood.abs() < 30.0 * 1.1e-9);
    }

    #[test]
    fn fit_is_deterministic_and_well_formed() {
        let truth = memberships_from_sizes(&[15, 15]);
        let p = tie_probabilities(&planted_partition(2, 0.1, 5.0).unwrap(), &truth).unwrap();
        let y = sample_network(&p, &mut stream(21));
        let mask = TrainingMask::full(30);
        let a = fit_sbm(&y, 3, &mask, &mut stream(5)).unwrap();
        let b = fit_sbm(&y, 3, &mask, &mut stream(5)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        for i in 0..30 {
            let s: f64 = a.responsibilities.row(i).sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
        assert!((a.prior.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(a.blocks.entries().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.membership, argmax_labels(&a.responsibilities));
    }

    #[test]
    fn em_recovers_strong_two_block_structure() {
        let truth = memberships_from_sizes(&[30, 30]);
        let p = tie_probabilities(&planted_partition(2, 0.1, 5.0).unwrap(), &truth).unwrap();
        let y = sample_network(&p, &mut stream(2));
        let fit = fit_sbm(&y, 2, &TrainingMask::full(60), &mut stream(3)).unwrap();
        assert!(fit.membership.same_partition(&truth));
    }

    #[test]
    fn fit_never_ends_below_its_start() {
        for seed in 0..20 {
            let y = random_network(40, 0.08, seed);
            let mask = TrainingMask::full(40);
            let fitter = Fitter::new(&y, &mask).unwrap();
            let mut lls = Vec::new();
            for k in 1..=6 {
                let init = fitter.spectral(k, &mut stream(seed * 10 + k as u64)).unwrap();
                let start = complete_log_likelihood(&y, &mle_block_probabilities(&y, &init, &mask).unwrap(), &init, &mask);
                let fit = fitter.fit_from(k, &init).unwrap();
                assert!(fit.log_likelihood >= start);
                assert_eq!(fit.membership, argmax_labels(&fit.responsibilities));
                assert!((fit.prior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                lls.push(fit.log_likelihood);
            }
            // Structureless networks must not leave every K tied with K = 1.
            assert!(lls[1..].iter().all(|&l| l > lls[0]), "seed {seed}: {lls:?}");
        }
    }

    #[test]
    fn prediction_hard_and_soft() {
        let y = random_network(10, 0.3, 4);
        let fit = fit_sbm(&y, 1, &TrainingMask::full(10), &mut stream(0)).unwrap();
        let p = predict_probabilities(&fit);
        let b = fit.blocks.get(0, 0);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(p.get(i, j), if i == j { 0.0 } else { b });
            }
        }
        let fit2 = fit_sbm(&y, 2, &TrainingMask::full(10), &mut stream(0)).unwrap();
        let p2 = predict_probabilities(&fit2);
        let mut values: Vec<f64> = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    let v = p2.get(i, j);
                    assert_eq!(v, fit2.blocks.get(fit2.membership.label(i), fit2.membership.label(j)));
                    if !values.contains(&v) {
                        values.push(v);
                    }
                }
            }
        }
        assert!(values.len() <= 4);
        let soft = predict_with(&fit2, Prediction::Soft);
        assert!(soft.entries().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fit_record_text_has_all_fields() {
        let y = random_network(8, 0.3, 9);
        let fit = fit_sbm(&y, 2, &TrainingMask::full(8), &mut stream(1)).unwrap();
        let text = fit.to_text();
        for key in ["K=2", "B=", "memberships=", "gamma=", "logL=", "iterations=", "converged="] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        let rec = fit.record();
        assert!(rec.membership.iter().all(|&l| (1..=2).contains(&l)));
    }
}
