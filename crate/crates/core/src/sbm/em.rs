//! Mean-field variational EM for the directed SBM.
//!
//! E-step, for each node i and block l:
//!
//! ```text
//! log tau_il = log gamma_l + sum_{j != i, observed} sum_k tau_jk
//!     [ Y_ij log b_lk + (1 - Y_ij) log(1 - b_lk)
//!     + Y_ji log b_kl + (1 - Y_ji) log(1 - b_kl) ]
//! ```
//!
//! normalized per row with log-sum-exp. All nodes are updated from the
//! previous responsibilities, which turns the sums into four n×n by n×K
//! products. M-step: `b_lk = sum tau_il tau_jk Y_ij / sum tau_il tau_jk`
//! over observed dyads and `gamma_l = mean_i tau_il`.

use nalgebra::DMatrix;

use super::mask::TrainingMask;
use crate::error::{Error, Result};
use crate::netgen::{Adjacency, Membership};

/// Floor/ceiling applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-9;
const PRIOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Stop once the largest change in any block probability falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Raw output of the EM iterations (before the hard-label refit).
#[derive(Debug, Clone)]
pub struct EmState {
    pub responsibilities: DMatrix<f64>,
    pub blocks: DMatrix<f64>,
    pub prior: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Observed dyads in adjacency-list form, shared across EM runs on the same
/// data.
pub(crate) struct MaskedData {
    n: usize,
    /// Observed ties i -> j, by sender and by receiver.
    ties_out: Vec<Vec<usize>>,
    ties_in: Vec<Vec<usize>>,
    /// Held-out off-diagonal dyads, by sender and by receiver.
    held_out: Vec<Vec<usize>>,
    held_in: Vec<Vec<usize>>,
    pub density: f64,
}

impl MaskedData {
    pub fn new(y: &Adjacency, mask: &TrainingMask) -> Result<Self> {
        let n = y.n();
        if mask.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mask.n(),
            });
        }
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut ties_out = vec![Vec::new(); n];
        let mut ties_in = vec![Vec::new(); n];
        let mut held_out = vec![Vec::new(); n];
        let mut held_in = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if !mask.observed(i, j) {
                    held_out[i].push(j);
                    held_in[j].push(i);
                } else if y.get(i, j) {
                    ties_out[i].push(j);
                    ties_in[j].push(i);
                }
            }
        }
        Ok(Self {
            n,
            ties_out,
            ties_in,
            held_out,
            held_in,
            density: mask.training_density(y),
        })
    }

    /// The four neighbourhood sums the updates need, for row-major `tau`:
    /// `s_out = (Y∘M) tau`, `n_out = M tau`, `s_in = (Y∘M)^T tau`, `n_in = M^T tau`.
    fn sums(&self, tau: &[f64], k: usize) -> Sums {
        let n = self.n;
        let mut colsum = vec![0.0; k];
        for row in tau.chunks_exact(k) {
            for (c, v) in colsum.iter_mut().zip(row) {
                *c += v;
            }
        }
        let gather = |lists: &[Vec<usize>]| {
            let mut out = vec![0.0; n * k];
            for (i, list) in lists.iter().enumerate() {
                let dst = &mut out[i * k..(i + 1) * k];
                for &j in list {
                    for (d, v) in dst.iter_mut().zip(&tau[j * k..(j + 1) * k]) {
                        *d += v;
                    }
                }
            }
            out
        };
        let s_out = gather(&self.ties_out);
        let s_in = gather(&self.ties_in);
        let complement = |held: Vec<f64>| {
            let mut out = held;
            for i in 0..n {
                for c in 0..k {
                    out[i * k + c] = colsum[c] - tau[i * k + c] - out[i * k + c];
                }
            }
            out
        };
        let n_out = complement(gather(&self.held_out));
        let n_in = complement(gather(&self.held_in));
        Sums {
            s_out,
            n_out,
            s_in,
            n_in,
        }
    }
}

struct Sums {
    s_out: Vec<f64>,
    n_out: Vec<f64>,
    s_in: Vec<f64>,
    n_in: Vec<f64>,
}

/// Responsibilities seeded from hard labels: 0.9 on the assigned block and
/// 0.1/(K-1) spread over the rest (all mass on the single block when K = 1).
pub fn initial_responsibilities(init: &Membership, k: usize) -> DMatrix<f64> {
    let n = init.len();
    if k == 1 {
        return DMatrix::from_element(n, 1, 1.0);
    }
    let off = 0.1 / (k - 1) as f64;
    DMatrix::from_fn(n, k, |i, l| if init.label(i) == l { 0.9 } else { off })
}

fn to_rows(tau: &DMatrix<f64>) -> Vec<f64> {
    let k = tau.ncols();
    let mut out = vec![0.0; tau.nrows() * k];
    for i in 0..tau.nrows() {
        for c in 0..k {
            out[i * k + c] = tau[(i, c)];
        }
    }
    out
}

fn m_step(data: &MaskedData, tau: &[f64], sums: &Sums, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = data.n;
    let mut num = vec![0.0; k * k];
    let mut den = vec![0.0; k * k];
    let mut prior = vec![0.0; k];
    for i in 0..n {
        let t = &tau[i * k..(i + 1) * k];
        let so = &sums.s_out[i * k..(i + 1) * k];
        let no = &sums.n_out[i * k..(i + 1) * k];
        for l in 0..k {
            prior[l] += t[l];
            for m in 0..k {
                num[l * k + m] += t[l] * so[m];
                den[l * k + m] += t[l] * no[m];
            }
        }
    }
    let blocks = DMatrix::from_fn(k, k, |l, m| {
        let d = den[l * k + m];
        if d > 1e-12 {
            (num[l * k + m] / d).clamp(0.0, 1.0)
        } else {
            data.density
        }
    });
    prior.iter_mut().for_each(|p| *p /= n as f64);
    (blocks, prior)
}

fn e_step(sums: &Sums, blocks: &DMatrix<f64>, prior: &[f64], n: usize) -> Vec<f64> {
    let k = blocks.nrows();
    // Row-major tables: `out_*[l*k+m]` uses b_lm, `in_*[l*k+m]` uses b_ml.
    let mut out_logit = vec![0.0; k * k];
    let mut out_log0 = vec![0.0; k * k];
    let mut in_logit = vec![0.0; k * k];
    let mut in_log0 = vec![0.0; k * k];
    for l in 0..k {
        for m in 0..k {
            let b = blocks[(l, m)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (l1, l0) = (b.ln(), (1.0 - b).ln());
            out_logit[l * k + m] = l1 - l0;
            out_log0[l * k + m] = l0;
            in_logit[m * k + l] = l1 - l0;
            in_log0[m * k + l] = l0;
        }
    }
    let log_prior: Vec<f64> = prior.iter().map(|p| p.max(PRIOR_FLOOR).ln()).collect();
    let mut tau = vec![0.0; n * k];
    for i in 0..n {
        let r = i * k..(i + 1) * k;
        let (so, no, si, ni) = (
            &sums.s_out[r.clone()],
            &sums.n_out[r.clone()],
            &sums.s_in[r.clone()],
            &sums.n_in[r.clone()],
        );
        let row = &mut tau[r];
        for l in 0..k {
            let t = l * k..(l + 1) * k;
            let mut v = log_prior[l];
            for m in 0..k {
                v += so[m] * out_logit[t.start + m]
                    + no[m] * out_log0[t.start + m]
                    + si[m] * in_logit[t.start + m]
                    + ni[m] * in_log0[t.start + m];
            }
            row[l] = v;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    tau
}

pub(crate) fn run(data: &MaskedData, init: &Membership, k: usize, opts: EmOptions) -> EmState {
    let n = data.n;
    let mut tau = to_rows(&initial_responsibilities(init, k));
    let mut sums = data.sums(&tau, k);
    let (mut blocks, mut prior) = m_step(data, &tau, &sums, k);
    let mut iterations = 1;
    let mut converged = false;
    while iterations < opts.max_iter.max(1) {
        tau = e_step(&sums, &blocks, &prior, n);
        sums = data.sums(&tau, k);
        let (next_blocks, next_prior) = m_step(data, &tau, &sums, k);
        iterations += 1;
        let delta = (&next_blocks - &blocks).amax();
        blocks = next_blocks;
        prior = next_prior;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    EmState {
        responsibilities: DMatrix::from_row_slice(n, k, &tau),
        blocks,
        prior,
        iterations,
        converged,
    }
}
