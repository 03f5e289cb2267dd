use std::collections::HashMap;
use std::fs;
use std::path::Path;

use netcv_harness::config::parse_patch;
use netcv_harness::report::{report, table_from_records, write_report};
use netcv_harness::study::{grid_rows, ESTIMATES_FILE};
use netcv_harness::{preset, read_records, run_experiment, run_variance_study, ExperimentConfig, RunOptions, StudyConfig};
use netcv_core::netgen::{BlockSizeScheme, GeneratorCell};

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut c = preset("smoke").unwrap();
    c.apply(
        &parse_patch(
            r#"
            nodes = [20]
            blocks = [2]
            replications = 2
            methods = ["latin-3", "bic"]
            k_max = 3
            "#,
        )
        .unwrap(),
    );
    c.output_dir = dir.to_path_buf();
    c
}

const NO_TIMING: RunOptions = RunOptions {
    record_timing: false,
    max_units: None,
};

fn bytes(dir: &Path) -> Vec<u8> {
    fs::read(dir.join("records.csv")).unwrap()
}

#[test]
fn one_cell_two_replicates_two_methods_gives_four_records() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_experiment(&tiny(tmp.path()), NO_TIMING).unwrap();
    assert!(summary.complete);
    let records = read_records(&summary.records_path).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.is_ok()));
    assert!(tmp.path().join("run.json").exists());
}

#[test]
fn reruns_and_worker_counts_agree_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut config = tiny(a.path());
    config.blocks = vec![1, 2];
    run_experiment(&config, NO_TIMING).unwrap();
    config.output_dir = b.path().to_path_buf();
    config.workers = 4;
    run_experiment(&config, NO_TIMING).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));

    // Rerunning into a finished directory leaves it unchanged.
    run_experiment(&config, NO_TIMING).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));
}

#[test]
fn methods_of_a_replicate_share_the_network() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny(tmp.path());
    config.methods = vec!["latin-3".into(), "random-3".into(), "ncv-3".into(), "modularity".into()];
    run_experiment(&config, NO_TIMING).unwrap();
    let records = read_records(&tmp.path().join("records.csv")).unwrap();
    let mut hashes: HashMap<usize, Vec<String>> = HashMap::new();
    for r in &records {
        hashes.entry(r.replicate).or_default().push(r.network_hash.clone());
    }
    for hs in hashes.values() {
        assert_eq!(hs.len(), 4);
        assert!(hs.iter().all(|h| h == &hs[0]));
    }
    assert_ne!(hashes[&0][0], hashes[&1][0]);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    let parts = tempfile::tempdir().unwrap();
    let mut config = tiny(full.path());
    config.blocks = vec![1, 2];
    config.replications = 3;
    run_experiment(&config, NO_TIMING).unwrap();

    config.output_dir = parts.path().to_path_buf();
    let first = run_experiment(
        &config,
        RunOptions {
            record_timing: false,
            max_units: Some(2),
        },
    )
    .unwrap();
    assert!(!first.complete);
    assert_eq!(first.units_run, 2);

    // Simulate a kill in the middle of writing a row.
    let path = parts.path().join("records.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("20,2,equal,0.1,5.0,latin-3,2,123");
    fs::write(&path, text).unwrap();

    let second = run_experiment(&config, NO_TIMING).unwrap();
    assert!(second.complete);
    assert_eq!(second.units_skipped, 2);
    assert_eq!(second.units_run, 4);
    assert_eq!(bytes(full.path()), bytes(parts.path()));
}

#[test]
fn incomplete_units_are_redone() {
    let full = tempfile::tempdir().unwrap();
    let config = tiny(full.path());
    run_experiment(&config, NO_TIMING).unwrap();
    let expected = bytes(full.path());
    // Drop the last record, leaving its unit half done.
    let text = String::from_utf8(expected.clone()).unwrap();
    let trimmed: Vec<&str> = text.lines().collect();
    fs::write(
        full.path().join("records.csv"),
        trimmed[..trimmed.len() - 1].join("\n") + "\n",
    )
    .unwrap();
    let summary = run_experiment(&config, NO_TIMING).unwrap();
    assert_eq!(summary.units_run, 1);
    assert_eq!(bytes(full.path()), expected);
}

#[test]
fn changed_design_is_not_resumed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny(tmp.path());
    run_experiment(&config, NO_TIMING).unwrap();
    config.master_seed += 1;
    assert!(run_experiment(&config, NO_TIMING).is_err());
}

#[test]
fn reports_from_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny(tmp.path());
    config.blocks = vec![1, 2];
    config.methods = vec!["latin-3".into(), "aic".into(), "truerisk".into(), "modularity".into()];
    run_experiment(&config, NO_TIMING).unwrap();

    let overall = report(tmp.path(), "overall-accuracy").unwrap();
    let mut lines = overall.lines();
    assert_eq!(lines.next().unwrap(), "method,average,ci_low,ci_high,count");
    let averages: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(averages.len(), 3);
    assert!(averages.windows(2).all(|w| w[0] >= w[1]));

    let records = read_records(&tmp.path().join("records.csv")).unwrap();
    let confusion = table_from_records(&records, "confusion", config.k_max).unwrap();
    for method in ["latin-3", "aic", "modularity"] {
        let rows: Vec<&Vec<String>> = confusion.rows.iter().filter(|r| r[0] == method).collect();
        for col in 2..confusion.header.len() {
            let sum: f64 = rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-3, "{method} column {col} sums to {sum}");
        }
    }
    let written = write_report(tmp.path(), "true-risk-min", None).unwrap();
    assert!(fs::read_to_string(written).unwrap().starts_with("n,k_true,K*=1"));
    assert!(report(tmp.path(), "table-12").is_err());
    assert!(report(tmp.path(), "var-comp").is_err());
}

#[test]
fn empty_record_set_is_an_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("records.csv"),
        "n,k_true,sizes,b,r,method,replicate,seed,k_hat,mse_true,curve,wall_ms,status,network_hash\n",
    )
    .unwrap();
    assert!(write_report(tmp.path(), "overall-accuracy", None).is_err());
    assert!(!tmp.path().join("overall-accuracy.csv").exists());
    assert!(table_from_records(&[], "confusion", 3).is_err());
}

#[test]
fn variance_study_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = StudyConfig {
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
        bias_replicates: 3,
        truth_replicates: 5,
        output_dir: tmp.path().to_path_buf(),
        ..StudyConfig::default()
    };
    let out = run_variance_study(&config).unwrap();
    assert_eq!(out.summary.len(), 9);
    assert_eq!(out.bias.len(), 9);
    let estimates = fs::read_to_string(tmp.path().join(ESTIMATES_FILE)).unwrap();
    assert_eq!(estimates.lines().count(), 1 + 3 * 3 * 4);
    assert_eq!(estimates.lines().next().unwrap(), "scheme,V,network,draw,risk");
    let grids = netcv_harness::variance_grids(&config).unwrap();
    assert_eq!(grid_rows(&grids).len(), 36);
    for s in &out.summary {
        assert!((s.fold_share + s.network_share - 1.0).abs() < 1e-9 || s.total == 0.0);
    }
    let var_comp = report(tmp.path(), "var-comp").unwrap();
    assert_eq!(var_comp, fs::read_to_string(tmp.path().join("var-comp.csv")).unwrap());
    let bias = report(tmp.path(), "bias-var-cv").unwrap();
    assert_eq!(bias.lines().count(), 10);
}
