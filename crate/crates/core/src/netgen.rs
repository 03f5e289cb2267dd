//! Directed stochastic block model generation.
//!
//! Labels are stored zero-based (`0..k`) throughout the crate; the text
//! formats written for humans render them one-based.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Pareto shape used for the power-law block-size scheme.
pub const DEFAULT_PARETO_SHAPE: f64 = 1.5;

/// K×K matrix of tie probabilities between blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    entries: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows().max(1),
                found: entries.ncols(),
            });
        }
        if let Some(&value) = entries.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability { value });
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: rows.iter().map(Vec::len).find(|&l| l != k).unwrap_or(0),
            });
        }
        Self::new(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.entries[(l, k)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k())
            .map(|l| (0..self.k()).map(|k| self.get(l, k)).collect())
            .collect()
    }
}

/// Block label for every node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Membership {
    labels: Vec<usize>,
    k: usize,
}

impl Membership {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        Ok(Self { labels, k })
    }

    /// Builds a membership whose block count is the largest label plus one.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Node count per block.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Number of blocks that contain at least one node.
    pub fn occupied_blocks(&self) -> usize {
        self.block_sizes().iter().filter(|&&s| s > 0).count()
    }

    /// Relabels blocks in order of first appearance and drops empty ones.
    pub fn canonical(&self) -> Membership {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if map[l] == usize::MAX {
                    map[l] = next;
                    next += 1;
                }
                map[l]
            })
            .collect();
        Membership { labels, k: next.max(1) }
    }

    /// True when the two labelings induce the same partition of the nodes.
    pub fn same_partition(&self, other: &Membership) -> bool {
        self.len() == other.len() && self.canonical().labels == other.canonical().labels
    }
}

/// n×n matrix of tie probabilities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TieProbabilities {
    entries: DMatrix<f64>,
}

impl TieProbabilities {
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        if let Some(&value) = entries.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability { value });
        }
        entries.fill_diagonal(0.0);
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Mean Bernoulli variance p(1-p) over the off-diagonal dyads.
    pub fn mean_bernoulli_variance(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    let p = self.entries[(i, j)];
                    total += p * (1.0 - p);
                }
            }
        }
        total / (n * (n - 1)) as f64
    }
}

/// Binary directed adjacency matrix with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    cells: Vec<u8>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut y = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    y.set(i, j, true);
                }
            }
        }
        y
    }

    /// Builds a network from 0-based `(sender, receiver)` pairs. Self-ties are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut y = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: i.max(j) + 1,
                });
            }
            if i != j {
                y.set(i, j, true);
            }
        }
        Ok(y)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j] != 0
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        f64::from(self.cells[i * self.n + j])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, tie: bool) {
        if i != j {
            self.cells[i * self.n + j] = u8::from(tie);
        }
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.edge_count() as f64 / (self.n * (self.n - 1)) as f64
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| (0..self.n).filter(|&j| self.get(i, j)).count())
            .collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|j| (0..self.n).filter(|&i| self.get(i, j)).count())
            .collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.value(i, j))
    }

    /// FNV-1a hash of the cell contents; stable across platforms and releases.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in (self.n as u64).to_le_bytes().iter().chain(self.cells.iter()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    /// Edge-list text: a `n=<nodes>` header then one 1-indexed `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let n: usize = header
            .trim()
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                message: format!("expected `n=<nodes>`, found `{header}`"),
            })?;
        let mut y = Self::empty(n);
        for (idx, line) in lines {
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let mut node = || -> Result<usize> {
                let tok = parts
                    .next()
                    .ok_or_else(|| parse_err("expected two node ids".into()))?;
                let v: usize = tok
                    .parse()
                    .map_err(|_| parse_err(format!("bad node id `{tok}`")))?;
                if v == 0 || v > n {
                    return Err(parse_err(format!("node id {v} outside 1..={n}")));
                }
                Ok(v - 1)
            };
            let i = node()?;
            let j = node()?;
            if i == j {
                return Err(parse_err("self-ties are not allowed".into()));
            }
            y.set(i, j, true);
        }
        Ok(y)
    }

    /// Dense CSV, one row per sender.
    pub fn to_dense_csv(&self) -> String {
        let mut out = String::with_capacity(self.n * self.n * 2);
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                out.push(if self.get(i, j) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_dense_csv(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let n = rows.len();
        let mut y = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            let vals: Vec<&str> = row.split(',').map(str::trim).collect();
            if vals.len() != n {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {n} columns, found {}", vals.len()),
                });
            }
            for (j, v) in vals.iter().enumerate() {
                match *v {
                    "0" => {}
                    "1" if i != j => y.set(i, j, true),
                    _ => {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("invalid cell `{v}` in column {}", j + 1),
                        })
                    }
                }
            }
        }
        Ok(y)
    }
}

/// How block sizes are derived from `(n, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BlockSizeScheme {
    Equal,
    /// Expected order statistics of K iid Pareto draws with the given shape.
    /// The Pareto minimum is chosen so that the mean block size is n/K,
    /// i.e. `x_min = n (alpha - 1) / (alpha K)`.
    PowerLaw { alpha: f64 },
}

impl BlockSizeScheme {
    pub fn power_law() -> Self {
        Self::PowerLaw {
            alpha: DEFAULT_PARETO_SHAPE,
        }
    }

    pub fn sizes(&self, n: usize, k: usize) -> Result<Vec<usize>> {
        match *self {
            Self::Equal => equal_block_sizes(n, k),
            Self::PowerLaw { alpha } => powerlaw_block_sizes_with_shape(n, k, alpha),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Equal => "equal",
            Self::PowerLaw { .. } => "powerlaw",
        }
    }
}

impl std::str::FromStr for BlockSizeScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "equal" => Ok(Self::Equal),
            "powerlaw" | "power-law" | "power_law" => Ok(Self::power_law()),
            other => Err(format!("unknown block size scheme `{other}`")),
        }
    }
}

/// Planted-partition block matrix: `r·b` on the diagonal, `b` elsewhere.
pub fn planted_partition(k: usize, b: f64, r: f64) -> Result<BlockMatrix> {
    if k == 0 {
        return Err(Error::InvalidBlockCount { k, n: 0 });
    }
    let within = r * b;
    for value in [b, within] {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(Error::InvalidProbability { value });
        }
    }
    BlockMatrix::new(DMatrix::from_fn(
        k,
        k,
        |l, m| if l == m { within } else { b },
    ))
}

pub fn equal_block_sizes(n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidBlockCount { k, n });
    }
    let (base, extra) = (n / k, n % k);
    Ok((0..k).map(|l| base + usize::from(l < extra)).collect())
}

pub fn powerlaw_block_sizes(n: usize, k: usize) -> Result<Vec<usize>> {
    powerlaw_block_sizes_with_shape(n, k, DEFAULT_PARETO_SHAPE)
}

/// Expected Pareto order statistics, largest first, in continuous units (before rounding).
pub fn pareto_order_statistic_means(n: usize, k: usize, alpha: f64) -> Vec<f64> {
    let kf = k as f64;
    let x_min = n as f64 * (alpha - 1.0) / (alpha * kf);
    let inv = 1.0 / alpha;
    // r-th smallest of K draws:
    // E[X_(r)] = x_min Γ(K+1) Γ(K-r+1-1/α) / (Γ(K-r+1) Γ(K+1-1/α))
    let common = ln_gamma(kf + 1.0) - ln_gamma(kf + 1.0 - inv);
    (1..=k)
        .rev()
        .map(|r| {
            let m = (k - r + 1) as f64;
            x_min * (common + ln_gamma(m - inv) - ln_gamma(m)).exp()
        })
        .collect()
}

pub fn powerlaw_block_sizes_with_shape(n: usize, k: usize, alpha: f64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidBlockCount { k, n });
    }
    if alpha <= 1.0 || !alpha.is_finite() {
        return Err(Error::Estimation(format!(
            "Pareto shape must exceed 1 for a finite mean, got {alpha}"
        )));
    }
    let sizes = largest_remainder(&pareto_order_statistic_means(n, k, alpha), n);
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::DegenerateBlock { index });
    }
    Ok(sizes)
}

/// Rounds non-negative weights to integers summing to `total`, preserving proportions.
/// Ties in the fractional part go to the earlier entry.
pub fn largest_remainder(values: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = values.iter().sum();
    if values.is_empty() || sum <= 0.0 {
        return vec![0; values.len()];
    }
    let scaled: Vec<f64> = values.iter().map(|v| v * total as f64 / sum).collect();
    let mut out: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &idx in order.iter().take(total.saturating_sub(assigned)) {
        out[idx] += 1;
    }
    out
}

/// Contiguous labels: the first `sizes[0]` nodes get block 0, and so on.
pub fn memberships_from_sizes(sizes: &[usize]) -> Membership {
    let labels = sizes
        .iter()
        .enumerate()
        .flat_map(|(l, &s)| std::iter::repeat_n(l, s))
        .collect();
    Membership {
        labels,
        k: sizes.len().max(1),
    }
}

pub fn tie_probabilities(b: &BlockMatrix, membership: &Membership) -> Result<TieProbabilities> {
    if let Some(&label) = membership.labels().iter().find(|&&l| l >= b.k()) {
        return Err(Error::LabelOutOfRange { label, k: b.k() });
    }
    let n = membership.len();
    let labels = membership.labels();
    Ok(TieProbabilities {
        entries: DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                b.get(labels[i], labels[j])
            }
        }),
    })
}

/// Draws every off-diagonal dyad independently, row by row.
pub fn sample_network<R: Rng + ?Sized>(p: &TieProbabilities, rng: &mut R) -> Adjacency {
    let n = p.n();
    let mut y = Adjacency::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let u: f64 = rng.random();
                y.cells[i * n + j] = u8::from(u < p.get(i, j));
            }
        }
    }
    y
}

/// One cell of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCell {
    pub n: usize,
    pub k: usize,
    pub sizes: BlockSizeScheme,
    pub b: f64,
    pub r: f64,
}

/// Generating parameters realized for a cell.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub blocks: BlockMatrix,
    pub membership: Membership,
    pub probabilities: TieProbabilities,
}

impl GeneratorCell {
    pub fn model(&self) -> Result<PlantedModel> {
        let blocks = planted_partition(self.k, self.b, self.r)?;
        let membership = memberships_from_sizes(&self.sizes.sizes(self.n, self.k)?);
        let probabilities = tie_probabilities(&blocks, &membership)?;
        Ok(PlantedModel {
            blocks,
            membership,
            probabilities,
        })
    }

    pub fn label(&self) -> String {
        format!(
            "n{}-k{}-{}-b{}-r{}",
            self.n,
            self.k,
            self.sizes.name(),
            self.b,
            self.r
        )
    }
}
