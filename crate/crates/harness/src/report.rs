//! Summary tables computed from a records directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use netcv_core::analysis::{accuracy_with, confusion, AccuracySummary, IntervalKind, ReplicateRecord};

use crate::method::{Family, Method};
use crate::runner::{read_records, Manifest, MANIFEST_FILE, RECORDS_FILE};
use crate::study::{
    grids_from_rows, read_csv, summarize, summarize_bias, to_csv, BiasEstimateRow, EstimateRow, StudyManifest,
    BIAS_ESTIMATES_FILE, ESTIMATES_FILE, STUDY_MANIFEST_FILE,
};

pub const TABLE_IDS: [&str; 15] = [
    "overall-accuracy",
    "cv-accuracy-nk",
    "cv-accuracy-rb",
    "cv-mse-nk",
    "ic-accuracy-nk",
    "ic-accuracy-rb",
    "ic-mse-nk",
    "cd-accuracy-nk",
    "cd-accuracy-rb",
    "cd-mse-nk",
    "confusion",
    "true-risk-min",
    "fold-accuracy-plot",
    "var-comp",
    "bias-var-cv",
];

/// A CSV table: header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn parse_method(r: &ReplicateRecord) -> Result<Method> {
    r.method.parse().map_err(anyhow::Error::msg)
}

/// Records grouped by method, in method order.
fn by_method(records: &[ReplicateRecord]) -> Result<BTreeMap<Method, Vec<ReplicateRecord>>> {
    let mut out: BTreeMap<Method, Vec<ReplicateRecord>> = BTreeMap::new();
    for r in records {
        out.entry(parse_method(r)?).or_default().push(r.clone());
    }
    Ok(out)
}

fn family_records(records: &[ReplicateRecord], family: Family) -> Result<Vec<ReplicateRecord>> {
    let mut out = Vec::new();
    for r in records {
        if parse_method(r)?.family() == family {
            out.push(r.clone());
        }
    }
    if out.is_empty() {
        bail!("no {} records in this run", family.name());
    }
    Ok(out)
}

fn accuracy_cell(records: &[&ReplicateRecord]) -> String {
    let owned: Vec<ReplicateRecord> = records.iter().map(|r| (*r).clone()).collect();
    match accuracy_with(&owned, IntervalKind::Normal) {
        Ok(a) => num(a.accuracy),
        Err(_) => String::new(),
    }
}

fn mse_cell(records: &[&ReplicateRecord]) -> String {
    let vals: Vec<f64> = records.iter().filter(|r| r.is_ok()).filter_map(|r| r.mse_true).collect();
    if vals.is_empty() {
        String::new()
    } else {
        format!("{:.6}", vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn ordered<T: Ord + Copy>(xs: impl Iterator<Item = T>) -> Vec<T> {
    xs.collect::<BTreeSet<_>>().into_iter().collect()
}

/// Rows per (method, row key), one column per column key.
fn pivot<R: Ord + Copy + ToString, C: Ord + Copy + ToString>(
    records: &[ReplicateRecord],
    row_name: &str,
    col_name: &str,
    row_key: impl Fn(&ReplicateRecord) -> R,
    col_key: impl Fn(&ReplicateRecord) -> C,
    cell: impl Fn(&[&ReplicateRecord]) -> String,
) -> Result<Table> {
    let groups = by_method(records)?;
    let cols = ordered(records.iter().map(&col_key));
    let mut header = vec!["method".to_string(), row_name.to_string()];
    header.extend(cols.iter().map(|c| format!("{col_name}={}", c.to_string())));
    let mut rows = Vec::new();
    for (method, recs) in &groups {
        for rk in ordered(recs.iter().map(&row_key)) {
            let mut row = vec![method.to_string(), rk.to_string()];
            for &ck in &cols {
                let subset: Vec<&ReplicateRecord> = recs
                    .iter()
                    .filter(|r| row_key(r) == rk && col_key(r) == ck)
                    .collect();
                row.push(if subset.is_empty() { String::new() } else { cell(&subset) });
            }
            rows.push(row);
        }
    }
    Ok(Table { header, rows })
}

/// Floats as table keys, ordered numerically.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Key(f64);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::fmt::Display for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn summary_row(s: &AccuracySummary) -> Vec<String> {
    vec![
        s.method.clone(),
        num(s.accuracy),
        num(s.ci_low),
        num(s.ci_high),
        s.count.to_string(),
    ]
}

fn overall_accuracy(records: &[ReplicateRecord]) -> Result<Table> {
    let mut summaries = Vec::new();
    for (method, recs) in by_method(records)? {
        if method.family() == Family::Oracle {
            continue;
        }
        summaries.push(accuracy_with(&recs, IntervalKind::Normal)?);
    }
    if summaries.is_empty() {
        bail!("no selection-method records in this run");
    }
    summaries.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then_with(|| a.method.cmp(&b.method)));
    Ok(Table {
        header: ["method", "average", "ci_low", "ci_high", "count"].map(String::from).to_vec(),
        rows: summaries.iter().map(summary_row).collect(),
    })
}

fn fold_accuracy_plot(records: &[ReplicateRecord]) -> Result<Table> {
    let mut rows = Vec::new();
    for (method, recs) in by_method(&family_records(records, Family::Cv)?)? {
        let Method::Cv { scheme, v } = method else { continue };
        let s = accuracy_with(&recs, IntervalKind::Normal)?;
        rows.push(vec![
            scheme.name().to_string(),
            v.to_string(),
            num(s.accuracy),
            num(s.ci_low),
            num(s.ci_high),
            s.count.to_string(),
        ]);
    }
    Ok(Table {
        header: ["method", "V", "accuracy", "ci_low", "ci_high", "count"].map(String::from).to_vec(),
        rows,
    })
}

fn confusion_table(records: &[ReplicateRecord], k_max: usize) -> Result<Table> {
    let groups = by_method(records)?;
    let k_true = ordered(records.iter().map(|r| r.k_true));
    let mut header = vec!["method".to_string(), "k_hat".to_string()];
    header.extend(k_true.iter().map(|k| format!("K={k}")));
    let mut rows = Vec::new();
    for (method, recs) in &groups {
        let Ok(c) = confusion(recs, k_max) else { continue };
        for row in 1..=k_max + 1 {
            let label = if row > k_max { format!(">{k_max}") } else { row.to_string() };
            let mut line = vec![method.to_string(), label];
            for &kt in &k_true {
                line.push(if c.k_true.contains(&kt) { num(c.get(row, kt)) } else { String::new() });
            }
            rows.push(line);
        }
    }
    Ok(Table { header, rows })
}

fn true_risk_min(records: &[ReplicateRecord], k_max: usize) -> Result<Table> {
    let recs = family_records(records, Family::Oracle)?;
    let mut header = vec!["n".to_string(), "k_true".to_string()];
    header.extend((1..=k_max).map(|k| format!("K*={k}")));
    let mut rows = Vec::new();
    for n in ordered(recs.iter().map(|r| r.n)) {
        for kt in ordered(recs.iter().filter(|r| r.n == n).map(|r| r.k_true)) {
            let subset: Vec<ReplicateRecord> = recs
                .iter()
                .filter(|r| r.n == n && r.k_true == kt)
                .cloned()
                .collect();
            let Ok(c) = confusion(&subset, k_max) else { continue };
            let mut row = vec![n.to_string(), kt.to_string()];
            row.extend((1..=k_max).map(|k| num(c.get(k, kt))));
            rows.push(row);
        }
    }
    Ok(Table { header, rows })
}

fn run_k_max(dir: &Path, records: &[ReplicateRecord]) -> Result<usize> {
    let path = dir.join(MANIFEST_FILE);
    if path.exists() {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        return Ok(m.design.k_max);
    }
    let mut k = 1;
    for r in records {
        if parse_method(r)?.scans_k() {
            k = k.max(r.k_hat.unwrap_or(1));
        }
    }
    Ok(k)
}

fn study_table(dir: &Path, id: &str) -> Result<String> {
    let manifest: StudyManifest = serde_json::from_str(
        &fs::read_to_string(dir.join(STUDY_MANIFEST_FILE)).context("no variance study in this directory")?,
    )?;
    let k = manifest.config.k;
    if id == "var-comp" {
        let rows: Vec<EstimateRow> = read_csv(&dir.join(ESTIMATES_FILE))?;
        if rows.is_empty() {
            bail!("no variance estimates");
        }
        let summary = grids_from_rows(&rows)?
            .iter()
            .map(|g| summarize(g, k))
            .collect::<Result<Vec<_>>>()?;
        to_csv(&summary)
    } else {
        let r_star = manifest.r_star.ok_or_else(|| anyhow!("the study was run without the bias part"))?;
        let rows: Vec<BiasEstimateRow> = read_csv(&dir.join(BIAS_ESTIMATES_FILE))?;
        if rows.is_empty() {
            bail!("no bias estimates");
        }
        to_csv(&summarize_bias(&rows, k, r_star)?)
    }
}

/// Builds table `id` from the run in `dir`.
pub fn report(dir: &Path, id: &str) -> Result<String> {
    if !TABLE_IDS.contains(&id) {
        bail!("unknown table id `{id}` (known: {})", TABLE_IDS.join(", "));
    }
    if id == "var-comp" || id == "bias-var-cv" {
        return study_table(dir, id);
    }
    let path = dir.join(RECORDS_FILE);
    let records = read_records(&path)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    table_from_records(&records, id, run_k_max(dir, &records)?)?.to_csv()
}

pub fn table_from_records(records: &[ReplicateRecord], id: &str, k_max: usize) -> Result<Table> {
    if records.is_empty() {
        bail!("no records");
    }
    let n = |r: &ReplicateRecord| r.n;
    let k = |r: &ReplicateRecord| r.k_true;
    let b = |r: &ReplicateRecord| Key(r.b);
    let ratio = |r: &ReplicateRecord| Key(r.r);
    let family = |prefix: &str| match prefix {
        "cv" => Family::Cv,
        "ic" => Family::Ic,
        _ => Family::Cd,
    };
    match id {
        "overall-accuracy" => overall_accuracy(records),
        "confusion" => confusion_table(records, k_max),
        "true-risk-min" => true_risk_min(records, k_max),
        "fold-accuracy-plot" => fold_accuracy_plot(records),
        _ => {
            let (prefix, kind) = id
                .split_once('-')
                .ok_or_else(|| anyhow!("unknown table id `{id}`"))?;
            if !["cv", "ic", "cd"].contains(&prefix) {
                bail!("unknown table id `{id}`");
            }
            let recs = family_records(records, family(prefix))?;
            match kind {
                "accuracy-nk" => pivot(&recs, "n", "K", n, k, accuracy_cell),
                "accuracy-rb" => pivot(&recs, "b", "r", b, ratio, accuracy_cell),
                "mse-nk" => pivot(&recs, "n", "K", n, k, mse_cell),
                _ => bail!("unknown table id `{id}`"),
            }
        }
    }
}

/// Writes table `id` to `output` (default `<dir>/<id>.csv`). Nothing is
/// written when the table cannot be built.
pub fn write_report(dir: &Path, id: &str, output: Option<&Path>) -> Result<PathBuf> {
    let text = report(dir, id)?;
    let path = output.map_or_else(|| dir.join(format!("{id}.csv")), Path::to_path_buf);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
