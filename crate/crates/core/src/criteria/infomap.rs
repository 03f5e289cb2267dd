//! Two-level map equation for directed networks.
//!
//! Node visit rates `p` come from PageRank with teleportation probability
//! 0.15 (dangling nodes always teleport). Flow between nodes is
//! `f(x, y) = p_x [(1 - tau) Y_xy / kout_x + tau / n]`, teleportation included,
//! and a module's exit rate `q_i` is the flow leaving it. The codelength is
//!
//! ```text
//! L = plogp(q) - 2 sum_i plogp(q_i) - sum_a plogp(p_a) + sum_i plogp(q_i + p_i)
//! ```
//!
//! with `q = sum_i q_i`, `p_i` the module's visit rate and logs in base 2.
//! Modules are found by greedy pairwise merging from singletons followed by
//! single-node moves.

use nalgebra::DMatrix;
use rand::Rng;

use super::CommunityResult;
use crate::error::{Error, Result};
use crate::netgen::{Adjacency, Membership};

pub const TELEPORT: f64 = 0.15;
const PAGERANK_TOL: f64 = 1e-10;
const PAGERANK_MAX_ITER: usize = 10_000;
const MOVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfomapOptions {
    pub teleport: f64,
    /// Seeded simulated annealing over single-node moves before the final
    /// deterministic refinement.
    pub anneal: bool,
    pub anneal_sweeps: usize,
    pub anneal_start_temperature: f64,
    pub anneal_cooling: f64,
}

impl Default for InfomapOptions {
    fn default() -> Self {
        Self {
            teleport: TELEPORT,
            anneal: false,
            anneal_sweeps: 200,
            anneal_start_temperature: 1e-2,
            anneal_cooling: 0.95,
        }
    }
}

#[inline]
fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Stationary visit rates of the teleporting random walk.
pub fn visit_rates(y: &Adjacency, teleport: f64) -> Vec<f64> {
    let n = y.n();
    let kout = y.out_degrees();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&x| kout[x] == 0).map(|x| p[x]).sum();
        let base = (teleport * (1.0 - dangling) + dangling) / n as f64;
        let mut next = vec![base; n];
        for (x, z) in y.edges() {
            next[z] += (1.0 - teleport) * p[x] / kout[x] as f64;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < PAGERANK_TOL {
            break;
        }
    }
    p
}

/// Node-to-node flow matrix.
fn flow_matrix(y: &Adjacency, p: &[f64], teleport: f64) -> DMatrix<f64> {
    let n = y.n();
    let kout = y.out_degrees();
    DMatrix::from_fn(n, n, |x, z| {
        if kout[x] == 0 {
            p[x] / n as f64
        } else {
            p[x] * ((1.0 - teleport) * y.value(x, z) / kout[x] as f64 + teleport / n as f64)
        }
    })
}

fn codelength_from_parts(exit: &[f64], visits: &[f64], node_term: f64) -> f64 {
    let q: f64 = exit.iter().sum();
    let mut l = plogp(q) - node_term;
    for (&qi, &pi) in exit.iter().zip(visits) {
        l += -2.0 * plogp(qi) + plogp(qi + pi);
    }
    l
}

/// Codelength of a labeling, computed from scratch.
pub fn codelength(y: &Adjacency, labels: &Membership) -> Result<f64> {
    codelength_with(y, labels, TELEPORT)
}

pub fn codelength_with(y: &Adjacency, labels: &Membership, teleport: f64) -> Result<f64> {
    let n = y.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    let p = visit_rates(y, teleport);
    let f = flow_matrix(y, &p, teleport);
    let k = labels.k();
    let mut exit = vec![0.0; k];
    let mut visits = vec![0.0; k];
    for x in 0..n {
        visits[labels.label(x)] += p[x];
        for z in 0..n {
            if labels.label(x) != labels.label(z) {
                exit[labels.label(x)] += f[(x, z)];
            }
        }
    }
    let node_term: f64 = p.iter().map(|&v| plogp(v)).sum();
    Ok(codelength_from_parts(&exit, &visits, node_term))
}

/// Module-level state for incremental codelength updates.
struct Modules {
    n: usize,
    p: Vec<f64>,
    f: DMatrix<f64>,
    labels: Vec<usize>,
    exit: Vec<f64>,
    visits: Vec<f64>,
    node_term: f64,
}

impl Modules {
    fn singletons(y: &Adjacency, teleport: f64) -> Self {
        let n = y.n();
        let p = visit_rates(y, teleport);
        let f = flow_matrix(y, &p, teleport);
        let exit = (0..n).map(|x| p[x] - f[(x, x)]).collect();
        let node_term = p.iter().map(|&v| plogp(v)).sum();
        Self {
            n,
            visits: p.clone(),
            p,
            f,
            labels: (0..n).collect(),
            exit,
            node_term,
        }
    }

    fn length(&self) -> f64 {
        codelength_from_parts(&self.exit, &self.visits, self.node_term)
    }

    /// Greedy merging: each step applies the pair merge with the largest
    /// decrease in codelength, stopping when no merge decreases it.
    fn merge_greedily(&mut self) {
        let n = self.n;
        // Module-to-module flow, indexed by module id (smallest member).
        let mut mf = self.f.clone();
        let mut active: Vec<usize> = (0..n).collect();
        let mut q_total: f64 = self.exit.iter().sum();
        while active.len() > 1 {
            let base_q = plogp(q_total);
            let mut best: Option<(f64, usize, usize, f64)> = None;
            for (ai, &c) in active.iter().enumerate() {
                let (qc, pc) = (self.exit[c], self.visits[c]);
                let old_c = -2.0 * plogp(qc) + plogp(qc + pc);
                for &d in &active[ai + 1..] {
                    let (qd, pd) = (self.exit[d], self.visits[d]);
                    let qm = (qc + qd - mf[(c, d)] - mf[(d, c)]).max(0.0);
                    let new_total = q_total - qc - qd + qm;
                    let delta = plogp(new_total) - base_q + (-2.0 * plogp(qm) + plogp(qm + pc + pd))
                        - old_c
                        - (-2.0 * plogp(qd) + plogp(qd + pd));
                    if best.is_none_or(|(b, _, _, _)| delta < b) {
                        best = Some((delta, c, d, qm));
                    }
                }
            }
            let (delta, c, d, qm) = best.expect("at least two modules");
            if delta >= 0.0 {
                break;
            }
            for x in 0..n {
                let v = mf[(d, x)];
                mf[(c, x)] += v;
            }
            for x in 0..n {
                let v = mf[(x, d)];
                mf[(x, c)] += v;
            }
            q_total = q_total - self.exit[c] - self.exit[d] + qm;
            self.exit[c] = qm;
            self.visits[c] += self.visits[d];
            self.exit[d] = 0.0;
            self.visits[d] = 0.0;
            active.retain(|&x| x != d);
            for l in self.labels.iter_mut() {
                if *l == d {
                    *l = c;
                }
            }
        }
    }

    /// Flow from node `a` into each module and from each module into `a`,
    /// excluding the node's own self-flow.
    fn node_module_flows(&self, a: usize) -> (Vec<f64>, Vec<f64>) {
        let mut out = vec![0.0; self.n];
        let mut inn = vec![0.0; self.n];
        for x in 0..self.n {
            if x != a {
                out[self.labels[x]] += self.f[(a, x)];
                inn[self.labels[x]] += self.f[(x, a)];
            }
        }
        (out, inn)
    }

    /// Codelength change from moving node `a` into module `b`, and the two new
    /// exit rates (source, target).
    fn move_delta(&self, a: usize, b: usize, out: &[f64], inn: &[f64]) -> (f64, f64, f64) {
        let src = self.labels[a];
        let tot = self.p[a] - self.f[(a, a)];
        let pa = self.p[a];
        let q_src = (self.exit[src] - (tot - out[src]) + inn[src]).max(0.0);
        let q_dst = (self.exit[b] + (tot - out[b]) - inn[b]).max(0.0);
        let q_total: f64 = self.exit.iter().sum();
        let new_total = q_total - self.exit[src] - self.exit[b] + q_src + q_dst;
        let term = |q: f64, p: f64| -2.0 * plogp(q) + plogp(q + p);
        let before = term(self.exit[src], self.visits[src]) + term(self.exit[b], self.visits[b]);
        let after = term(q_src, self.visits[src] - pa) + term(q_dst, self.visits[b] + pa);
        (plogp(new_total) - plogp(q_total) + after - before, q_src, q_dst)
    }

    fn apply_move(&mut self, a: usize, b: usize, q_src: f64, q_dst: f64) {
        let src = self.labels[a];
        self.exit[src] = q_src;
        self.exit[b] = q_dst;
        self.visits[src] -= self.p[a];
        self.visits[b] += self.p[a];
        if self.labels.iter().filter(|&&l| l == src).count() == 1 {
            self.exit[src] = 0.0;
            self.visits[src] = 0.0;
        }
        self.labels[a] = b;
    }

    /// Ids of empty modules are reused so that a node can always leave for a
    /// module of its own.
    fn empty_module(&self) -> Option<usize> {
        let mut used = vec![false; self.n];
        for &l in &self.labels {
            used[l] = true;
        }
        used.iter().position(|&u| !u)
    }

    /// Candidate targets for node `a`: every occupied module other than its
    /// own, plus one empty module.
    fn targets(&self, a: usize) -> Vec<usize> {
        let mut used = vec![false; self.n];
        for &l in &self.labels {
            used[l] = true;
        }
        let mut t: Vec<usize> = (0..self.n)
            .filter(|&m| used[m] && m != self.labels[a])
            .collect();
        if let Some(e) = self.empty_module() {
            t.push(e);
        }
        t
    }

    /// Repeated passes of best single-node moves while the codelength drops
    /// by more than `MOVE_TOL`.
    fn refine(&mut self) {
        loop {
            let mut moved = false;
            for a in 0..self.n {
                let (out, inn) = self.node_module_flows(a);
                let mut best: Option<(f64, usize, f64, f64)> = None;
                for b in self.targets(a) {
                    let (delta, qs, qd) = self.move_delta(a, b, &out, &inn);
                    if best.is_none_or(|(d, _, _, _)| delta < d) {
                        best = Some((delta, b, qs, qd));
                    }
                }
                if let Some((delta, b, qs, qd)) = best {
                    if delta < -MOVE_TOL {
                        self.apply_move(a, b, qs, qd);
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn anneal<R: Rng + ?Sized>(&mut self, opts: &InfomapOptions, rng: &mut R) {
        let mut temperature = opts.anneal_start_temperature;
        let mut best_len = self.length();
        let mut best = self.labels.clone();
        for _ in 0..opts.anneal_sweeps {
            for _ in 0..self.n {
                let a = rng.random_range(0..self.n);
                let targets = self.targets(a);
                if targets.is_empty() {
                    continue;
                }
                let b = targets[rng.random_range(0..targets.len())];
                let (out, inn) = self.node_module_flows(a);
                let (delta, qs, qd) = self.move_delta(a, b, &out, &inn);
                if delta < 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
                    self.apply_move(a, b, qs, qd);
                    let len = self.length();
                    if len < best_len {
                        best_len = len;
                        best.clone_from(&self.labels);
                    }
                }
            }
            temperature *= opts.anneal_cooling;
        }
        self.reset_to(&best);
    }

    fn reset_to(&mut self, labels: &[usize]) {
        self.labels = labels.to_vec();
        self.exit = vec![0.0; self.n];
        self.visits = vec![0.0; self.n];
        for x in 0..self.n {
            self.visits[labels[x]] += self.p[x];
            for z in 0..self.n {
                if labels[x] != labels[z] {
                    self.exit[labels[x]] += self.f[(x, z)];
                }
            }
        }
    }
}

pub fn infomap<R: Rng + ?Sized>(y: &Adjacency, rng: &mut R) -> Result<CommunityResult> {
    infomap_with(y, InfomapOptions::default(), rng)
}

pub fn infomap_with<R: Rng + ?Sized>(
    y: &Adjacency,
    opts: InfomapOptions,
    rng: &mut R,
) -> Result<CommunityResult> {
    if y.edge_count() == 0 {
        return Err(Error::EmptyNetwork);
    }
    let mut modules = Modules::singletons(y, opts.teleport);
    modules.merge_greedily();
    if opts.anneal {
        modules.anneal(&opts, rng);
    }
    modules.refine();
    // Recompute from scratch to shed accumulated rounding.
    let labels = modules.labels.clone();
    modules.reset_to(&labels);
    let score = modules.length();
    Ok(CommunityResult::from_labels(labels, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;

    fn two_cliques(size: usize, bridge: bool) -> Adjacency {
        let mut edges = Vec::new();
        for block in 0..2 {
            for i in 0..size {
                for j in 0..size {
                    if i != j {
                        edges.push((block * size + i, block * size + j));
                    }
                }
            }
        }
        if bridge {
            edges.push((0, size));
        }
        Adjacency::from_edges(2 * size, &edges).unwrap()
    }

    #[test]
    fn visit_rates_sum_to_one() {
        let y = Adjacency::from_edges(4, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let p = visit_rates(&y, TELEPORT);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        // Stationarity of the teleporting walk.
        let f = flow_matrix(&y, &p, TELEPORT);
        for z in 0..4 {
            let inflow: f64 = (0..4).map(|x| f[(x, z)]).sum();
            assert!((inflow - p[z]).abs() < 1e-9);
        }
    }

    #[test]
    fn one_module_codelength_is_node_entropy() {
        let y = two_cliques(3, true);
        let p = visit_rates(&y, TELEPORT);
        let h: f64 = -p.iter().map(|&v| plogp(v)).sum::<f64>();
        let l = codelength(&y, &Membership::from_labels(vec![0; 6])).unwrap();
        assert!((l - h).abs() < 1e-12);
    }

    #[test]
    fn splits_disconnected_components() {
        let y = two_cliques(5, false);
        let res = infomap(&y, &mut stream(0)).unwrap();
        assert_eq!(res.k_hat, 2);
        let truth = Membership::from_labels([vec![0; 5], vec![1; 5]].concat());
        assert!(res.labels.same_partition(&truth));
    }

    #[test]
    fn result_no_worse_than_singletons_and_score_recomputes() {
        let y = two_cliques(4, true);
        let res = infomap(&y, &mut stream(0)).unwrap();
        let singles = codelength(&y, &Membership::from_labels((0..8).collect())).unwrap();
        assert!(res.score <= singles + 1e-12);
        let again = codelength(&y, &res.labels).unwrap();
        assert!((again - res.score).abs() < 1e-10);
    }

    #[test]
    fn incremental_moves_match_recomputation() {
        let y = two_cliques(4, true);
        let mut m = Modules::singletons(&y, TELEPORT);
        m.reset_to(&[0, 0, 0, 4, 4, 4, 4, 0]);
        for (a, b) in [(7, 4), (0, 1), (3, 0)] {
            let (out, inn) = m.node_module_flows(a);
            let (delta, qs, qd) = m.move_delta(a, b, &out, &inn);
            let before = m.length();
            m.apply_move(a, b, qs, qd);
            let fresh = codelength(&y, &Membership::from_labels(m.labels.clone())).unwrap();
            assert!((m.length() - fresh).abs() < 1e-10);
            assert!((before + delta - fresh).abs() < 1e-10);
        }
    }

    #[test]
    fn annealing_is_seeded() {
        let y = two_cliques(4, true);
        let opts = InfomapOptions {
            anneal: true,
            anneal_sweeps: 20,
            ..InfomapOptions::default()
        };
        let a = infomap_with(&y, opts, &mut stream(3)).unwrap();
        let b = infomap_with(&y, opts, &mut stream(3)).unwrap();
        assert_eq!(a, b);
    }
}
