//! Grid execution, record persistence and resume.
//!
//! Work units are (cell, replicate) pairs. Each unit samples one network that
//! every configured method sees, so method comparisons are paired. Units run
//! on a worker pool in chunks; the records of a chunk are appended by the
//! calling thread in canonical order once the chunk finishes. On completion
//! the file is rewritten sorted by (cell, replicate, method), so its bytes do
//! not depend on the worker count or on interruptions.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use netcv_core::analysis::{format_curve, mse_of_partition, mse_vs_truth, true_risk_minimizer_from_fits};
use netcv_core::analysis::{ReplicateRecord, STATUS_OK};
use netcv_core::criteria::{full_data_fits, greedy_modularity, infomap, select_from_fits};
use netcv_core::cv::{select_model_cv, Normalization};
use netcv_core::netgen::{sample_network, Adjacency, GeneratorCell, PlantedModel};
use netcv_core::sbm::{FitOptions, FittedSbm};
use netcv_core::stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::method::Method;
use crate::seeds::{derive_seed, FITS, NETWORK};

pub const RECORDS_FILE: &str = "records.csv";
pub const MANIFEST_FILE: &str = "run.json";

pub const RECORD_COLUMNS: [&str; 14] = [
    "n",
    "k_true",
    "sizes",
    "b",
    "r",
    "method",
    "replicate",
    "seed",
    "k_hat",
    "mse_true",
    "curve",
    "wall_ms",
    "status",
    "network_hash",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Write measured wall times; with `false` every `wall_ms` is 0 and the
    /// records file is fully reproducible.
    pub record_timing: bool,
    /// Stop after this many new units (for batching and testing resume).
    pub max_units: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_timing: true,
            max_units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub units_total: usize,
    pub units_skipped: usize,
    pub units_run: usize,
    pub complete: bool,
    pub records_path: PathBuf,
}

/// JSON manifest stored next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub seed_derivation: String,
    pub columns: Vec<String>,
    pub design: Design,
}

/// The parts of the configuration that determine record values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub nodes: Vec<usize>,
    pub blocks: Vec<usize>,
    pub sizes: Vec<String>,
    pub densities: Vec<f64>,
    pub ratios: Vec<f64>,
    pub replications: usize,
    pub folds: Vec<usize>,
    pub methods: Vec<String>,
    pub k_max: usize,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.master_seed,
            seed_derivation: "sha256(netcv/v1|master|cell|rep|method)[0..8] big-endian".to_string(),
            columns: RECORD_COLUMNS.iter().map(|s| s.to_string()).collect(),
            design: Design {
                nodes: config.nodes.clone(),
                blocks: config.blocks.clone(),
                sizes: config.sizes.clone(),
                densities: config.densities.clone(),
                ratios: config.ratios.clone(),
                replications: config.replications,
                folds: config.folds.clone(),
                methods: config.methods()?.iter().map(Method::to_string).collect(),
                k_max: config.k_max,
            },
        })
    }

    /// Whether records written under `self` can be resumed under `other`.
    pub fn compatible(&self, other: &Manifest) -> bool {
        self.master_seed == other.master_seed
            && self.seed_derivation == other.seed_derivation
            && self.columns == other.columns
            && self.design == other.design
    }
}

/// Everything a worker needs to process units.
pub struct Plan {
    pub cells: Vec<GeneratorCell>,
    pub models: Vec<PlantedModel>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub k_max: usize,
    pub master_seed: u64,
}

impl Plan {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cells = config.cells()?;
        let models = cells
            .iter()
            .map(|c| c.model().map_err(|e| anyhow!("cell {}: {e}", c.label())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Plan {
            cells,
            models,
            methods: config.methods()?,
            replications: config.replications,
            k_max: config.k_max,
            master_seed: config.master_seed,
        })
    }

    pub fn units(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.cells.len()).flat_map(move |c| (0..self.replications).map(move |r| (c, r)))
    }

    pub fn network(&self, cell: usize, replicate: usize) -> Adjacency {
        let seed = derive_seed(self.master_seed, &self.cells[cell], replicate, NETWORK);
        sample_network(&self.models[cell].probabilities, &mut stream(seed))
    }

    /// Runs every method on the unit's network.
    pub fn run_unit(&self, cell: usize, replicate: usize, timing: bool) -> Vec<ReplicateRecord> {
        let c = &self.cells[cell];
        let model = &self.models[cell];
        let y = self.network(cell, replicate);
        let network_hash = format!("{:016x}", y.fingerprint());
        let fits_seed = derive_seed(self.master_seed, c, replicate, FITS);
        let started = Instant::now();
        let fits = guarded(|| {
            full_data_fits(&y, 1..=self.k_max, FitOptions::default(), &mut stream(fits_seed))
                .map_err(|e| e.to_string())
        });
        let fits_ms = started.elapsed().as_millis() as u64;

        self.methods
            .iter()
            .map(|method| {
                let seed = match method {
                    Method::Criterion(_) | Method::TrueRisk => fits_seed,
                    _ => derive_seed(self.master_seed, c, replicate, &method.to_string()),
                };
                let started = Instant::now();
                let outcome = guarded(|| run_method(*method, &y, model, fits.as_deref(), self.k_max, seed));
                let mut wall_ms = started.elapsed().as_millis() as u64;
                if matches!(method, Method::Criterion(_) | Method::TrueRisk) {
                    wall_ms += fits_ms;
                }
                let (k_hat, mse_true, curve, status) = match outcome {
                    Ok(o) => (Some(o.k_hat), o.mse_true, o.curve, STATUS_OK.to_string()),
                    Err(e) => (None, None, String::new(), format!("failed: {e}")),
                };
                ReplicateRecord {
                    n: c.n,
                    k_true: c.k,
                    sizes: c.sizes.name().to_string(),
                    b: c.b,
                    r: c.r,
                    method: method.to_string(),
                    replicate,
                    seed,
                    k_hat,
                    mse_true,
                    curve,
                    wall_ms: if timing { wall_ms } else { 0 },
                    status,
                    network_hash: network_hash.clone(),
                }
            })
            .collect()
    }
}

struct Outcome {
    k_hat: usize,
    mse_true: Option<f64>,
    curve: String,
}

fn guarded<T>(f: impl FnOnce() -> std::result::Result<T, String>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => Err(payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string())),
    }
}

fn run_method(
    method: Method,
    y: &Adjacency,
    model: &PlantedModel,
    fits: std::result::Result<&[FittedSbm], &String>,
    k_max: usize,
    seed: u64,
) -> std::result::Result<Outcome, String> {
    let p = &model.probabilities;
    let fits = || fits.map_err(|e| format!("full-data fits: {e}"));
    let fit_mse = |k: usize| -> std::result::Result<Option<f64>, String> {
        let fits = fits()?;
        match fits.iter().find(|f| f.k == k) {
            Some(f) => mse_vs_truth(p, f).map(Some).map_err(|e| e.to_string()),
            None => Ok(None),
        }
    };
    let e = |e: netcv_core::Error| e.to_string();
    match method {
        Method::Cv { scheme, v } => {
            let (k_hat, curve) = select_model_cv(y, 1..=k_max, scheme, v, &mut stream(seed)).map_err(e)?;
            Ok(Outcome {
                k_hat,
                mse_true: fit_mse(k_hat)?,
                curve: format_curve(&curve.values(Normalization::PerValidated)),
            })
        }
        Method::Criterion(kind) => {
            let (k_hat, curve) = select_from_fits(fits()?, kind, y.n()).map_err(e)?;
            let values: Vec<(usize, f64)> = curve.iter().map(|c| (c.k, c.value)).collect();
            Ok(Outcome {
                k_hat,
                mse_true: fit_mse(k_hat)?,
                curve: format_curve(&values),
            })
        }
        Method::TrueRisk => {
            let (k_hat, curve) = true_risk_minimizer_from_fits(p, fits()?).map_err(e)?;
            let mse = curve.iter().find(|(k, _)| *k == k_hat).map(|(_, v)| *v);
            Ok(Outcome {
                k_hat,
                mse_true: mse,
                curve: format_curve(&curve),
            })
        }
        Method::Modularity | Method::Infomap => {
            let found = if method == Method::Modularity {
                greedy_modularity(y)
            } else {
                infomap(y, &mut stream(seed))
            }
            .map_err(e)?;
            Ok(Outcome {
                k_hat: found.k_hat,
                mse_true: Some(mse_of_partition(p, y, &found.labels).map_err(e)?),
                curve: String::new(),
            })
        }
    }
}

/// Canonical position of a record within the plan.
struct Index {
    cells: HashMap<String, usize>,
    methods: HashMap<String, usize>,
}

impl Index {
    fn new(plan: &Plan) -> Self {
        Index {
            cells: plan.cells.iter().enumerate().map(|(i, c)| (c.label(), i)).collect(),
            methods: plan.methods.iter().enumerate().map(|(i, m)| (m.to_string(), i)).collect(),
        }
    }

    fn key(&self, r: &ReplicateRecord) -> Option<(usize, usize, usize)> {
        let label = record_cell(r).ok()?.label();
        Some((*self.cells.get(&label)?, r.replicate, *self.methods.get(&r.method)?))
    }
}

/// The generator cell a record came from.
pub fn record_cell(r: &ReplicateRecord) -> Result<GeneratorCell> {
    Ok(GeneratorCell {
        n: r.n,
        k: r.k_true,
        sizes: r.sizes.parse().map_err(anyhow::Error::msg)?,
        b: r.b,
        r: r.r,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_records(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_records(text: &str) -> Result<Vec<ReplicateRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_COLUMNS {
        bail!("unexpected record columns {header:?}");
    }
    reader
        .deserialize()
        .map(|r| r.map_err(anyhow::Error::from))
        .collect()
}

pub fn records_to_csv(records: &[ReplicateRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("{e}"))?)
}

fn append_records(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let file = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Completed units already on disk, keyed by (cell, replicate), each with its
/// records in method order. A trailing partial line and incomplete units are
/// discarded.
fn load_completed(path: &Path, plan: &Plan) -> Result<BTreeMap<(usize, usize), Vec<ReplicateRecord>>> {
    let mut units = BTreeMap::new();
    if !path.exists() {
        return Ok(units);
    }
    let mut text = fs::read_to_string(path)?;
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
    }
    if text.is_empty() {
        return Ok(units);
    }
    let index = Index::new(plan);
    let mut grouped: BTreeMap<(usize, usize), BTreeMap<usize, ReplicateRecord>> = BTreeMap::new();
    for r in parse_records(&text)? {
        let (c, rep, m) = index
            .key(&r)
            .ok_or_else(|| anyhow!("record for {} / {} is not part of this design", r.method, r.replicate))?;
        if rep >= plan.replications {
            bail!("replicate {rep} beyond the configured {}", plan.replications);
        }
        grouped.entry((c, rep)).or_default().insert(m, r);
    }
    for (unit, recs) in grouped {
        if recs.len() == plan.methods.len() {
            units.insert(unit, recs.into_values().collect());
        }
    }
    Ok(units)
}

/// Runs (or resumes) the configured grid, writing `records.csv` and `run.json`
/// into the output directory.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<RunSummary> {
    let plan = Plan::new(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = Manifest::new(config)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let records_path = dir.join(RECORDS_FILE);
    if manifest_path.exists() {
        let existing: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .with_context(|| format!("parsing {}", manifest_path.display()))?;
        if !existing.compatible(&manifest) {
            bail!(
                "{} holds a run with a different design or seed; use a fresh output directory",
                dir.display()
            );
        }
    } else if records_path.exists() {
        bail!("{} has records but no manifest", dir.display());
    }
    write_atomically(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    let completed = load_completed(&records_path, &plan)?;
    let kept: Vec<ReplicateRecord> = completed.values().flatten().cloned().collect();
    write_atomically(&records_path, &records_to_csv(&kept)?)?;

    let pending: Vec<(usize, usize)> = plan.units().filter(|u| !completed.contains_key(u)).collect();
    let budget = options.max_units.unwrap_or(usize::MAX).min(pending.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .context("starting worker pool")?;
    let chunk = (config.workers * 4).max(1);
    for batch in pending[..budget].chunks(chunk) {
        let results: Vec<Vec<ReplicateRecord>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&(c, r)| plan.run_unit(c, r, options.record_timing))
                .collect()
        });
        append_records(&records_path, &results.concat())?;
    }

    let complete = budget == pending.len();
    if complete {
        let index = Index::new(&plan);
        let mut all = read_records(&records_path)?;
        all.sort_by_key(|r| index.key(r));
        write_atomically(&records_path, &records_to_csv(&all)?)?;
    }
    Ok(RunSummary {
        units_total: plan.cells.len() * plan.replications,
        units_skipped: completed.len(),
        units_run: budget,
        complete,
        records_path,
    })
}
