//! Directed modularity and its greedy agglomerative maximization.
//!
//! The sum runs over ordered pairs i ≠ j:
//!
//! ```text
//! Q = (1/m) sum_{i != j} (Y_ij - kout_i kin_j / m) [c_i == c_j]
//! ```
//!
//! All bookkeeping is kept in integers scaled by m², so ties between merges
//! are detected exactly.

use super::CommunityResult;
use crate::error::{Error, Result};
use crate::netgen::{Adjacency, Membership};

fn degrees(y: &Adjacency) -> (Vec<i64>, Vec<i64>, i64) {
    let kout: Vec<i64> = y.out_degrees().into_iter().map(|d| d as i64).collect();
    let kin: Vec<i64> = y.in_degrees().into_iter().map(|d| d as i64).collect();
    let m = kout.iter().sum();
    (kout, kin, m)
}

/// `Q · m²` for a labeling.
fn scaled_modularity(y: &Adjacency, labels: &[usize]) -> i128 {
    let (kout, kin, m) = degrees(y);
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut within = vec![0i128; k];
    let mut out = vec![0i128; k];
    let mut inn = vec![0i128; k];
    let mut self_terms = 0i128;
    for (i, j) in y.edges() {
        if labels[i] == labels[j] {
            within[labels[i]] += 1;
        }
    }
    for i in 0..y.n() {
        out[labels[i]] += kout[i] as i128;
        inn[labels[i]] += kin[i] as i128;
        self_terms += (kout[i] * kin[i]) as i128;
    }
    let m = m as i128;
    (0..k)
        .map(|c| m * within[c] - out[c] * inn[c])
        .sum::<i128>()
        + self_terms
}

pub fn directed_modularity(y: &Adjacency, labels: &Membership) -> Result<f64> {
    if labels.len() != y.n() {
        return Err(Error::DimensionMismatch {
            expected: y.n(),
            found: labels.len(),
        });
    }
    let m = y.edge_count();
    if m == 0 {
        return Err(Error::EmptyNetwork);
    }
    let m2 = (m as f64) * (m as f64);
    Ok(scaled_modularity(y, labels.labels()) as f64 / m2)
}

/// Agglomerative maximization: from singletons, repeatedly merge the pair with
/// the largest gain in Q (ties go to the lexicographically smallest pair of
/// community ids, where a community's id is its smallest member) until one
/// community remains, and return the best partition seen along the way.
pub fn greedy_modularity(y: &Adjacency) -> Result<CommunityResult> {
    let mut best: Option<(Vec<usize>, i128)> = None;
    let m = agglomerate(y, |labels, q| {
        if best.as_ref().is_none_or(|(_, b)| q > *b) {
            best = Some((labels.to_vec(), q));
        }
    })?;
    let (labels, q) = best.expect("singletons are always visited");
    Ok(CommunityResult::from_labels(labels, q as f64 / (m as f64 * m as f64)))
}

/// Every partition visited by the greedy merge sequence, from n singletons
/// down to one community, with its Q.
pub fn greedy_modularity_path(y: &Adjacency) -> Result<Vec<CommunityResult>> {
    let mut levels = Vec::new();
    let m = agglomerate(y, |labels, q| levels.push((labels.to_vec(), q)))?;
    let m2 = (m as f64) * (m as f64);
    Ok(levels
        .into_iter()
        .map(|(labels, q)| CommunityResult::from_labels(labels, q as f64 / m2))
        .collect())
}

/// Runs the merge sequence, calling `visit` with each partition and its
/// `Q · m²`. Returns m.
fn agglomerate(y: &Adjacency, mut visit: impl FnMut(&[usize], i128)) -> Result<i64> {
    let n = y.n();
    let (kout, kin, m) = degrees(y);
    if m == 0 {
        return Err(Error::EmptyNetwork);
    }
    // e[c][d]: edges from community c to community d, indexed by community id.
    let mut e = vec![vec![0i64; n]; n];
    for (i, j) in y.edges() {
        e[i][j] += 1;
    }
    let mut out = kout.clone();
    let mut inn = kin.clone();
    let mut active: Vec<usize> = (0..n).collect();
    let mut labels: Vec<usize> = (0..n).collect();

    // Singletons have Q = 0.
    let mut q: i128 = 0;
    visit(&labels, q);

    while active.len() > 1 {
        let mut best: Option<(i128, usize, usize)> = None;
        for (ai, &c) in active.iter().enumerate() {
            for &d in &active[ai + 1..] {
                let gain = m as i128 * (e[c][d] + e[d][c]) as i128
                    - (out[c] as i128 * inn[d] as i128 + out[d] as i128 * inn[c] as i128);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, c, d));
                }
            }
        }
        let (gain, c, d) = best.expect("at least two communities");
        // c < d because `active` stays sorted; d joins c.
        for x in 0..n {
            e[c][x] += e[d][x];
        }
        for x in 0..n {
            e[x][c] += e[x][d];
        }
        out[c] += out[d];
        inn[c] += inn[d];
        active.retain(|&x| x != d);
        for l in labels.iter_mut() {
            if *l == d {
                *l = c;
            }
        }
        q += gain;
        visit(&labels, q);
    }
    Ok(m)
}
