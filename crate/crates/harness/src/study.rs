//! Variance and bias studies of CV risk estimates on a single generator cell.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use netcv_core::analysis::{bias_variance, decompose_variance, risk_draws, true_risk, BiasVariance, VarianceDecomposition};
use netcv_core::cv::CvOptions;
use netcv_core::folds::FoldScheme;
use netcv_core::netgen::{sample_network, BlockSizeScheme, GeneratorCell};
use netcv_core::stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::default_output_dir;
use crate::seeds::derive_seed;

pub const ESTIMATES_FILE: &str = "variance_estimates.csv";
pub const BIAS_ESTIMATES_FILE: &str = "bias_var_estimates.csv";
pub const STUDY_MANIFEST_FILE: &str = "study.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub cell: GeneratorCell,
    /// Candidate block count whose risk is estimated.
    pub k: usize,
    /// Networks M.
    pub networks: usize,
    /// Fold draws F per network.
    pub draws: usize,
    pub schemes: Vec<FoldScheme>,
    pub folds: Vec<usize>,
    /// Fresh (network, fold) pairs per scheme for the bias study; 0 skips it.
    pub bias_replicates: usize,
    /// Networks used to estimate the true risk R*.
    pub truth_replicates: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            cell: GeneratorCell {
                n: 60,
                k: 2,
                sizes: BlockSizeScheme::Equal,
                b: 0.05,
                r: 5.0,
            },
            k: 3,
            networks: 100,
            draws: 100,
            schemes: FoldScheme::ALL.to_vec(),
            folds: vec![3, 5, 10],
            bias_replicates: 0,
            truth_replicates: 500,
            master_seed: 20240601,
            output_dir: default_output_dir(),
            workers: 1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.networks < 2 || self.draws < 2 {
            bail!("the decomposition needs at least 2 networks and 2 fold draws");
        }
        if self.schemes.is_empty() || self.folds.is_empty() {
            bail!("schemes and folds must not be empty");
        }
        if self.folds.iter().any(|&v| v < 2) {
            bail!("fold counts must be at least 2");
        }
        if self.k == 0 || self.k > self.cell.n {
            bail!("candidate K = {} outside 1..={}", self.k, self.cell.n);
        }
        if self.workers == 0 {
            bail!("`workers` must be at least 1");
        }
        if self.cell.r * self.cell.b > 1.0 {
            bail!("r·b exceeds 1");
        }
        Ok(())
    }

    fn network_seed(&self, m: usize) -> u64 {
        derive_seed(self.master_seed, &self.cell, m, "variance-network")
    }

    fn draw_seed(&self, m: usize, scheme: FoldScheme, v: usize) -> u64 {
        derive_seed(self.master_seed, &self.cell, m, &format!("variance-{scheme}-{v}"))
    }

    fn bias_seed(&self, rep: usize, scheme: FoldScheme, v: usize) -> u64 {
        derive_seed(self.master_seed, &self.cell, rep, &format!("bias-{scheme}-{v}"))
    }
}

/// Risk estimates of one (scheme, V): rows are networks, columns fold draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeGrid {
    pub scheme: FoldScheme,
    pub v: usize,
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: FoldScheme,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub networks: usize,
    pub draws: usize,
    pub mean: f64,
    pub sd: f64,
    pub total: f64,
    pub fold_component: f64,
    pub network_component: f64,
    pub fold_share: f64,
    pub network_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub scheme: FoldScheme,
    #[serde(rename = "V")]
    pub v: usize,
    pub network: usize,
    pub draw: usize,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimateRow {
    pub scheme: FoldScheme,
    #[serde(rename = "V")]
    pub v: usize,
    pub replicate: usize,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub scheme: FoldScheme,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub r_star: f64,
    pub mean: f64,
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub config: StudyConfig,
    pub r_star: Option<f64>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

fn combos(config: &StudyConfig) -> Vec<(FoldScheme, usize)> {
    config
        .schemes
        .iter()
        .flat_map(|&s| config.folds.iter().map(move |&v| (s, v)))
        .collect()
}

/// The M × F grids for every configured (scheme, V). Network m is the same
/// draw for every scheme and V.
pub fn variance_grids(config: &StudyConfig) -> Result<Vec<SchemeGrid>> {
    config.validate()?;
    let model = config.cell.model()?;
    let networks: Vec<_> = (0..config.networks)
        .map(|m| sample_network(&model.probabilities, &mut stream(config.network_seed(m))))
        .collect();
    let combos = combos(config);
    let tasks: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..config.networks).map(move |m| (c, m)))
        .collect();
    let rows: Vec<Vec<f64>> = pool(config.workers)?.install(|| {
        tasks
            .par_iter()
            .map(|&(c, m)| {
                let (scheme, v) = combos[c];
                let seed = config.draw_seed(m, scheme, v);
                risk_draws(&networks[m], scheme, v, config.k, config.draws, seed, CvOptions::default())
            })
            .collect::<netcv_core::Result<Vec<_>>>()
    })?;
    let mut rows = rows.into_iter();
    Ok(combos
        .iter()
        .map(|&(scheme, v)| SchemeGrid {
            scheme,
            v,
            grid: rows.by_ref().take(config.networks).collect(),
        })
        .collect())
}

pub fn summarize(grid: &SchemeGrid, k: usize) -> Result<SummaryRow> {
    let VarianceDecomposition {
        total,
        sd,
        fold_component,
        network_component,
        fold_share,
        network_share,
    } = decompose_variance(&grid.grid)?;
    let count: usize = grid.grid.iter().map(Vec::len).sum();
    let mean = grid.grid.iter().flatten().sum::<f64>() / count as f64;
    Ok(SummaryRow {
        scheme: grid.scheme,
        v: grid.v,
        k,
        networks: grid.grid.len(),
        draws: grid.grid.first().map_or(0, Vec::len),
        mean,
        sd,
        total,
        fold_component,
        network_component,
        fold_share,
        network_share,
    })
}

pub fn grid_rows(grids: &[SchemeGrid]) -> Vec<EstimateRow> {
    let mut out = Vec::new();
    for g in grids {
        for (network, row) in g.grid.iter().enumerate() {
            for (draw, &risk) in row.iter().enumerate() {
                out.push(EstimateRow {
                    scheme: g.scheme,
                    v: g.v,
                    network,
                    draw,
                    risk,
                });
            }
        }
    }
    out
}

/// Rebuilds the grids from estimate rows (e.g. read back from disk).
pub fn grids_from_rows(rows: &[EstimateRow]) -> Result<Vec<SchemeGrid>> {
    let mut grids: Vec<SchemeGrid> = Vec::new();
    for r in rows {
        let pos = match grids.iter().position(|g| g.scheme == r.scheme && g.v == r.v) {
            Some(p) => p,
            None => {
                grids.push(SchemeGrid {
                    scheme: r.scheme,
                    v: r.v,
                    grid: Vec::new(),
                });
                grids.len() - 1
            }
        };
        let grid = &mut grids[pos].grid;
        if grid.len() <= r.network {
            grid.resize(r.network + 1, Vec::new());
        }
        let row = &mut grid[r.network];
        if row.len() != r.draw {
            bail!("estimates for {}-{} network {} are out of order", r.scheme, r.v, r.network);
        }
        row.push(r.risk);
    }
    Ok(grids)
}

/// CV risk of K on `bias_replicates` fresh (network, fold assignment) pairs
/// per (scheme, V).
pub fn bias_estimates(config: &StudyConfig) -> Result<Vec<BiasEstimateRow>> {
    config.validate()?;
    let model = config.cell.model()?;
    let tasks: Vec<(FoldScheme, usize, usize)> = combos(config)
        .into_iter()
        .flat_map(|(s, v)| (0..config.bias_replicates).map(move |rep| (s, v, rep)))
        .collect();
    let rows = pool(config.workers)?.install(|| {
        tasks
            .par_iter()
            .map(|&(scheme, v, replicate)| {
                let seed = config.bias_seed(replicate, scheme, v);
                let y = sample_network(&model.probabilities, &mut stream(seed));
                let risk = risk_draws(&y, scheme, v, config.k, 1, seed, CvOptions::default())?[0];
                Ok(BiasEstimateRow {
                    scheme,
                    v,
                    replicate,
                    risk,
                })
            })
            .collect::<netcv_core::Result<Vec<_>>>()
    })?;
    Ok(rows)
}

pub fn r_star(config: &StudyConfig) -> Result<f64> {
    let seed = derive_seed(config.master_seed, &config.cell, 0, "true-risk");
    Ok(true_risk(&config.cell, config.k, config.truth_replicates, seed)?)
}

pub fn summarize_bias(rows: &[BiasEstimateRow], k: usize, r_star: f64) -> Result<Vec<BiasRow>> {
    let mut keys: Vec<(FoldScheme, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.scheme, r.v)) {
            keys.push((r.scheme, r.v));
        }
    }
    keys.into_iter()
        .map(|(scheme, v)| {
            let est: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == scheme && r.v == v)
                .map(|r| r.risk)
                .collect();
            let BiasVariance { bias2, variance, mse } = bias_variance(&est, r_star)?;
            Ok(BiasRow {
                scheme,
                v,
                k,
                r_star,
                mean: est.iter().sum::<f64>() / est.len() as f64,
                bias2,
                variance,
                mse,
            })
        })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|row| row.map_err(anyhow::Error::from))
        .collect()
}

/// Files written by [`run_variance_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub summary: Vec<SummaryRow>,
    pub bias: Vec<BiasRow>,
    pub files: Vec<PathBuf>,
}

/// Runs the variance study (and the bias study when `bias_replicates > 0`)
/// and writes estimates, summaries and a manifest into the output directory.
pub fn run_variance_study(config: &StudyConfig) -> Result<StudyOutput> {
    config.validate()?;
    let dir = &config.output_dir;
    let grids = variance_grids(config)?;
    let summary = grids
        .iter()
        .map(|g| summarize(g, config.k))
        .collect::<Result<Vec<_>>>()?;
    let (bias_rows, bias, r_star) = if config.bias_replicates > 0 {
        let rows = bias_estimates(config)?;
        let r = r_star(config)?;
        let bias = summarize_bias(&rows, config.k, r)?;
        (rows, bias, Some(r))
    } else {
        (Vec::new(), Vec::new(), None)
    };

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        files.push(path);
        Ok(())
    };
    write(ESTIMATES_FILE, to_csv(&grid_rows(&grids))?)?;
    write("var-comp.csv", to_csv(&summary)?)?;
    if r_star.is_some() {
        write(BIAS_ESTIMATES_FILE, to_csv(&bias_rows)?)?;
        write("bias-var-cv.csv", to_csv(&bias)?)?;
    }
    let manifest = StudyManifest {
        config: config.clone(),
        r_star,
    };
    write(STUDY_MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?)?;
    Ok(StudyOutput { summary, bias, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StudyConfig {
        StudyConfig {
            cell: GeneratorCell {
                n: 20,
                k: 2,
                sizes: BlockSizeScheme::Equal,
                b: 0.1,
                r: 5.0,
            },
            k: 2,
            networks: 2,
            draws: 2,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn grid_shape_and_round_trip() {
        let c = small();
        let grids = variance_grids(&c).unwrap();
        assert_eq!(grids.len(), 9);
        let rows = grid_rows(&grids);
        assert_eq!(rows.len(), 3 * 3 * 4);
        assert_eq!(grids_from_rows(&rows).unwrap(), grids);
    }

    #[test]
    fn worker_count_does_not_change_estimates() {
        let mut c = small();
        let one = variance_grids(&c).unwrap();
        c.workers = 3;
        assert_eq!(variance_grids(&c).unwrap(), one);
    }

    #[test]
    fn rejects_degenerate_grid() {
        let mut c = small();
        c.draws = 1;
        assert!(c.validate().is_err());
    }
}
