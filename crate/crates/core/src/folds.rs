//! Fold assignment matrices for dyad-level cross-validation.
//!
//! Cells hold fold ids `1..=V`; `0` marks NCV dyads that are never validated
//! and [`DIAGONAL`] marks the (unused) diagonal.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sbm::TrainingMask;

pub const DIAGONAL: i32 = -1;
pub const NEVER_VALIDATED: i32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldScheme {
    /// Node-level folds; dyads between nodes of different folds always train.
    Ncv,
    /// Row- and column-balanced folds.
    Latin,
    /// Uniform over equal-size fold assignments.
    Random,
}

impl FoldScheme {
    pub const ALL: [FoldScheme; 3] = [FoldScheme::Ncv, FoldScheme::Latin, FoldScheme::Random];

    pub fn name(&self) -> &'static str {
        match self {
            FoldScheme::Ncv => "ncv",
            FoldScheme::Latin => "latin",
            FoldScheme::Random => "random",
        }
    }

    pub fn assign<R: Rng + ?Sized>(&self, n: usize, v: usize, rng: &mut R) -> Result<FoldAssignment> {
        match self {
            FoldScheme::Ncv => ncv_assign(n, v, rng),
            FoldScheme::Latin => latin_assign(n, v, rng),
            FoldScheme::Random => random_assign(n, v, rng),
        }
    }
}

impl fmt::Display for FoldScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FoldScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ncv" | "network" | "netcv" => Ok(FoldScheme::Ncv),
            "latin" | "latincv" => Ok(FoldScheme::Latin),
            "random" | "randomcv" => Ok(FoldScheme::Random),
            other => Err(format!("unknown fold scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoldAssignment {
    n: usize,
    folds: usize,
    scheme: FoldScheme,
    cells: Vec<i32>,
    /// NCV node labels (1-based), empty for the other schemes.
    node_folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn scheme(&self) -> FoldScheme {
        self.scheme
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.cells[i * self.n + j]
    }

    /// Node fold labels used by NCV.
    pub fn node_folds(&self) -> &[usize] {
        &self.node_folds
    }

    /// Number of off-diagonal cells in fold `t` (`t = 0` counts never-validated cells).
    pub fn fold_size(&self, t: usize) -> usize {
        self.cells.iter().filter(|&&c| c == t as i32).count()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds + 1];
        for &c in &self.cells {
            if c >= 0 {
                sizes[c as usize] += 1;
            }
        }
        sizes
    }

    /// Total number of validated dyads across all folds.
    pub fn validated_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c > 0).count()
    }

    /// Per-fold counts within row `i` (index 0 = never validated).
    pub fn row_counts(&self, i: usize) -> Vec<usize> {
        let mut counts = vec![0; self.folds + 1];
        for j in 0..self.n {
            let c = self.get(i, j);
            if c >= 0 {
                counts[c as usize] += 1;
            }
        }
        counts
    }

    pub fn column_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0; self.folds + 1];
        for i in 0..self.n {
            let c = self.get(i, j);
            if c >= 0 {
                counts[c as usize] += 1;
            }
        }
        counts
    }

    /// Dyads of fold `t`.
    pub fn validation_cells(&self, t: usize) -> Vec<(usize, usize)> {
        let t = t as i32;
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j) == t)
            .collect()
    }

    /// Integer CSV, one row per sender, diagonal rendered as -1.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_folds(n: usize, v: usize) -> Result<()> {
    if v < 2 || v > n {
        return Err(Error::InvalidFoldCount { v, n });
    }
    Ok(())
}

/// Balanced labels `1..=v` for `count` items in random order (counts differ by at most one).
fn balanced_labels<R: Rng + ?Sized>(count: usize, v: usize, rng: &mut R) -> Vec<usize> {
    // Which folds receive the remainder is itself random.
    let mut extra: Vec<usize> = (1..=v).collect();
    extra.shuffle(rng);
    let base = count / v;
    let mut labels = Vec::with_capacity(count);
    for t in 1..=v {
        labels.extend(std::iter::repeat_n(t, base));
    }
    labels.extend(extra.into_iter().take(count % v));
    labels.shuffle(rng);
    labels
}

/// Nodes split into `v` balanced groups; dyads within group `t` form fold `t`
/// and all other dyads are never validated.
pub fn ncv_assign<R: Rng + ?Sized>(n: usize, v: usize, rng: &mut R) -> Result<FoldAssignment> {
    check_folds(n, v)?;
    let nodes = balanced_labels(n, v, rng);
    Ok(ncv_from_node_folds(&nodes, v))
}

/// NCV assignment from explicit 1-based node labels.
pub fn ncv_from_node_folds(node_folds: &[usize], v: usize) -> FoldAssignment {
    let n = node_folds.len();
    let mut cells = vec![NEVER_VALIDATED; n * n];
    for i in 0..n {
        for j in 0..n {
            cells[i * n + j] = if i == j {
                DIAGONAL
            } else if node_folds[i] == node_folds[j] {
                node_folds[i] as i32
            } else {
                NEVER_VALIDATED
            };
        }
    }
    FoldAssignment {
        n,
        folds: v,
        scheme: FoldScheme::Ncv,
        cells,
        node_folds: node_folds.to_vec(),
    }
}

/// Balanced base pattern over the full n×n index grid (0-based fold ids).
///
/// `(a + b + floor(a/V) floor(b/V)) mod V` has every fold equally often (within
/// one) in each row and column. The cross term keeps the pattern from being a
/// sum of a row and a column effect, so the cells removed as the diagonal can
/// always be chosen to hit every fold equally often.
#[inline]
fn latin_base(a: usize, b: usize, v: usize) -> usize {
    (a + b + (a / v) * (b / v)) % v
}

/// Row- and column-balanced folds: a balanced base pattern with independently
/// permuted rows and columns.
///
/// Row `i` of the result is base row `rows[i]` and column `j` is base column
/// `cols[j]`. The diagonal then lands on base cells `(rows[i], cols[i])`; the
/// column permutation is drawn uniformly and then adjusted by transpositions
/// until those removed cells are spread evenly over the folds (and, when `V`
/// does not divide `n`, taken from each row's and column's most frequent
/// folds), which keeps the global fold sizes exactly equal.
///
/// Exact balance is not always reachable: for `n = V` with `V` even it would
/// require an orthomorphism of the cyclic group, which does not exist. The
/// search then returns the best arrangement it found.
pub fn latin_assign<R: Rng + ?Sized>(n: usize, v: usize, rng: &mut R) -> Result<FoldAssignment> {
    check_folds(n, v)?;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let mut cols: Vec<usize> = (0..n).collect();
    cols.shuffle(rng);
    balance_removed_cells(&rows, &mut cols, v, rng);

    let mut cells = vec![DIAGONAL; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cells[i * n + j] = latin_base(rows[i], cols[j], v) as i32 + 1;
            }
        }
    }
    Ok(FoldAssignment {
        n,
        folds: v,
        scheme: FoldScheme::Latin,
        cells,
        node_folds: Vec::new(),
    })
}

/// Counts of each fold over base row `a` (equivalently base column `a`).
fn base_line_counts(a: usize, n: usize, v: usize) -> Vec<usize> {
    let mut counts = vec![0; v];
    for b in 0..n {
        counts[latin_base(a, b, v)] += 1;
    }
    counts
}

/// Local search over transpositions of `cols` that equalizes the folds of the
/// removed base cells `(rows[i], cols[i])`.
fn balance_removed_cells<R: Rng + ?Sized>(rows: &[usize], cols: &mut [usize], v: usize, rng: &mut R) {
    let n = rows.len();
    let divisible = n % v == 0;
    // Folds that may be removed from each base line without breaking the
    // within-one balance of that line.
    let allowed: Vec<Vec<bool>> = (0..n)
        .map(|a| {
            let c = base_line_counts(a, n, v);
            let max = *c.iter().max().unwrap_or(&0);
            c.iter().map(|&x| x == max).collect()
        })
        .collect();
    // Removing r_t base cells of fold t leaves G_t - r_t; aim for final sizes
    // within one of n(n-1)/V.
    let mut global = vec![0usize; v];
    for a in 0..n {
        for (t, c) in base_line_counts(a, n, v).into_iter().enumerate() {
            global[t] += c;
        }
    }
    let dyads = n * (n - 1);
    let (floor, ceil) = (dyads / v, dyads.div_ceil(v));
    let removed_range: Vec<(usize, usize)> = global
        .iter()
        .map(|&g| (g.saturating_sub(ceil), g.saturating_sub(floor)))
        .collect();

    let cell_cost = |i: usize, col: usize| -> usize {
        if divisible {
            return 0;
        }
        let f = latin_base(rows[i], col, v);
        usize::from(!allowed[rows[i]][f]) + usize::from(!allowed[col][f])
    };
    let mut hist = vec![0usize; v];
    for i in 0..n {
        hist[latin_base(rows[i], cols[i], v)] += 1;
    }
    let imbalance = |h: &[usize]| -> usize {
        h.iter()
            .zip(&removed_range)
            .map(|(&x, &(lo, hi))| if x < lo { lo - x } else { x.saturating_sub(hi) })
            .sum()
    };
    // Global balance dominates the per-line preferences.
    let weight = 2 * n + 1;
    let total_cost = |h: &[usize], cols: &[usize]| -> usize {
        weight * imbalance(h) + (0..n).map(|i| cell_cost(i, cols[i])).sum::<usize>()
    };

    // Random transpositions, accepting any that do not increase the cost;
    // sideways moves let the search drift across plateaus.
    let mut cost = total_cost(&hist, cols);
    let mut best = (cost, cols.to_vec());
    let max_steps = 50_000 + 100 * n;
    for _ in 0..max_steps {
        if cost == 0 {
            break;
        }
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let (fi, fj) = (latin_base(rows[i], cols[i], v), latin_base(rows[j], cols[j], v));
        let (gi, gj) = (latin_base(rows[i], cols[j], v), latin_base(rows[j], cols[i], v));
        let mut h = hist.clone();
        h[fi] -= 1;
        h[fj] -= 1;
        h[gi] += 1;
        h[gj] += 1;
        let before = weight * imbalance(&hist) + cell_cost(i, cols[i]) + cell_cost(j, cols[j]);
        let after = weight * imbalance(&h) + cell_cost(i, cols[j]) + cell_cost(j, cols[i]);
        if after <= before {
            cols.swap(i, j);
            hist = h;
            cost = cost + after - before;
            if cost < best.0 {
                best = (cost, cols.to_vec());
            }
        }
    }
    if cost > best.0 {
        cols.copy_from_slice(&best.1);
    }
}

/// Uniform over assignments with equal (within one) fold sizes: a balanced
/// multiset of labels shuffled into the off-diagonal cells in row-major order.
pub fn random_assign<R: Rng + ?Sized>(n: usize, v: usize, rng: &mut R) -> Result<FoldAssignment> {
    let dyads = n * n.saturating_sub(1);
    if v < 2 || v > dyads {
        return Err(Error::InvalidFoldCount { v, n });
    }
    let labels = balanced_labels(dyads, v, rng);
    let mut it = labels.into_iter();
    let mut cells = vec![DIAGONAL; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cells[i * n + j] = it.next().expect("one label per dyad") as i32;
            }
        }
    }
    Ok(FoldAssignment {
        n,
        folds: v,
        scheme: FoldScheme::Random,
        cells,
        node_folds: Vec::new(),
    })
}

/// Training dyads for fold `t`: everything off the diagonal not in fold `t`.
pub fn training_mask(a: &FoldAssignment, t: usize) -> TrainingMask {
    let t = t as i32;
    TrainingMask::from_fn(a.n(), |i, j| a.get(i, j) != t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;

    fn spread(counts: &[usize]) -> usize {
        counts.iter().max().unwrap() - counts.iter().min().unwrap()
    }

    #[test]
    fn ncv_small_example() {
        let a = ncv_from_node_folds(&[1, 1, 2, 2], 2);
        assert_eq!(a.get(0, 1), 1);
        assert_eq!(a.get(1, 0), 1);
        assert_eq!(a.get(2, 3), 2);
        assert_eq!(a.get(3, 2), 2);
        assert_eq!(a.fold_size(0), 8);
        assert_eq!(a.validated_count(), 4);
        assert!(a.validated_count() < 12 / 2);
        let mask = training_mask(&a, 1);
        assert_eq!(mask.observed_count(), 10);
    }

    #[test]
    fn ncv_node_balance() {
        let mut rng = stream(3);
        let a = ncv_assign(30, 5, &mut rng).unwrap();
        let mut counts = vec![0; 6];
        for &f in a.node_folds() {
            counts[f] += 1;
        }
        assert_eq!(&counts[1..], &[6; 5]);
        for t in 1..=5 {
            let mask = training_mask(&a, t);
            for node in 0..30 {
                let out = (0..30).any(|j| mask.observed(node, j));
                let inn = (0..30).any(|i| mask.observed(i, node));
                assert!(out && inn, "node {node} missing from training fold {t}");
            }
        }
    }

    #[test]
    fn ncv_training_fraction_close_to_expectation() {
        let mut rng = stream(8);
        let (n, v) = (120, 5);
        let a = ncv_assign(n, v, &mut rng).unwrap();
        let dyads = (n * (n - 1)) as f64;
        let expected = (v * v - 1) as f64 / (v * v) as f64;
        for t in 1..=v {
            let frac = training_mask(&a, t).observed_count() as f64 / dyads;
            assert!((frac - expected).abs() < 0.01, "fold {t}: {frac} vs {expected}");
        }
    }

    #[test]
    fn latin_six_by_three() {
        let mut rng = stream(0);
        for _ in 0..100 {
            let a = latin_assign(6, 3, &mut rng).unwrap();
            assert_eq!(&a.fold_sizes()[1..], &[10, 10, 10]);
            for i in 0..6 {
                let row = &a.row_counts(i)[1..];
                assert!(row.iter().all(|&c| c == 1 || c == 2), "{row:?}");
                let col = &a.column_counts(i)[1..];
                assert!(col.iter().all(|&c| c == 1 || c == 2), "{col:?}");
            }
            assert_eq!(training_mask(&a, 2).observed_count(), 20);
        }
    }

    #[test]
    fn latin_square_case() {
        let mut rng = stream(1);
        for _ in 0..20 {
            let a = latin_assign(3, 3, &mut rng).unwrap();
            for i in 0..3 {
                assert!(a.row_counts(i)[1..].iter().all(|&c| c <= 1));
                assert!(a.column_counts(i)[1..].iter().all(|&c| c <= 1));
            }
            assert_eq!(&a.fold_sizes()[1..], &[2, 2, 2]);
        }
    }

    #[test]
    fn latin_even_square_is_near_balanced() {
        let a = latin_assign(4, 4, &mut stream(3)).unwrap();
        assert!(spread(&a.fold_sizes()[1..]) <= 2);
        for i in 0..4 {
            assert!(a.row_counts(i)[1..].iter().all(|&c| c <= 1));
        }
    }

    #[test]
    fn latin_non_divisible_stays_near_balanced() {
        let mut rng = stream(2);
        for &(n, v) in &[(7usize, 3usize), (11, 5), (23, 10), (31, 3)] {
            for _ in 0..20 {
                let a = latin_assign(n, v, &mut rng).unwrap();
                assert!(spread(&a.fold_sizes()[1..]) <= 1, "n={n} v={v}");
                // Exact row balance is not always reachable from the base pattern
                // when V does not divide n.
                for i in 0..n {
                    assert!(spread(&a.row_counts(i)[1..]) <= 2, "row n={n} v={v}");
                    assert!(spread(&a.column_counts(i)[1..]) <= 2, "col n={n} v={v}");
                }
            }
        }
    }

    #[test]
    fn random_fold_frequencies() {
        let mut rng = stream(4);
        let draws = 10_000;
        let mut hits = vec![0usize; 16];
        for _ in 0..draws {
            let a = random_assign(4, 2, &mut rng).unwrap();
            assert_eq!(&a.fold_sizes()[1..], &[6, 6]);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j && a.get(i, j) == 1 {
                        hits[i * 4 + j] += 1;
                    }
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let f = hits[i * 4 + j] as f64 / draws as f64;
                    assert!((f - 0.5).abs() < 0.015, "dyad ({i},{j}) freq {f}");
                }
            }
        }
    }

    #[test]
    fn random_leave_one_out() {
        let a = random_assign(4, 12, &mut stream(5)).unwrap();
        assert!(a.fold_sizes()[1..].iter().all(|&s| s == 1));
        assert!(random_assign(4, 13, &mut stream(5)).is_err());
    }

    #[test]
    fn random_can_break_node_balance() {
        let mut rng = stream(6);
        let witnessed = (0..1000).any(|_| {
            let a = random_assign(5, 5, &mut rng).unwrap();
            (0..5).any(|node| {
                (1..=5).any(|t| {
                    (0..5).all(|j| j == node || (a.get(node, j) != t as i32 && a.get(j, node) != t as i32))
                })
            })
        });
        assert!(witnessed);
    }

    #[test]
    fn validation_and_training_partition_off_diagonal() {
        let mut rng = stream(7);
        for scheme in FoldScheme::ALL {
            let a = scheme.assign(12, 3, &mut rng).unwrap();
            let mut validated = 0;
            for t in 1..=3 {
                let mask = training_mask(&a, t);
                let val = a.validation_cells(t);
                validated += val.len();
                assert_eq!(mask.observed_count() + val.len(), 12 * 11);
                assert!(val.iter().all(|&(i, j)| !mask.observed(i, j)));
            }
            match scheme {
                FoldScheme::Ncv => assert!(validated < 132),
                _ => assert_eq!(validated, 132),
            }
        }
    }

    #[test]
    fn fold_counts_validated() {
        assert!(ncv_assign(3, 4, &mut stream(0)).is_err());
        assert!(latin_assign(3, 1, &mut stream(0)).is_err());
        assert!(latin_assign(3, 4, &mut stream(0)).is_err());
    }

    #[test]
    fn assignments_are_seed_deterministic() {
        for scheme in FoldScheme::ALL {
            let a = scheme.assign(30, 5, &mut stream(99)).unwrap();
            let b = scheme.assign(30, 5, &mut stream(99)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_renders_diagonal_sentinel() {
        let a = ncv_from_node_folds(&[1, 2], 2);
        assert_eq!(a.to_csv(), "-1,0\n0,-1\n");
    }
}
