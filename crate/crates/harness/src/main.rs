use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use netcv_core::analysis::format_curve;
use netcv_core::criteria::{full_data_fits, greedy_modularity, infomap, select_from_fits};
use netcv_core::cv::{cv_risk_curve, select_model_cv, Normalization, RiskCurve};
use netcv_core::folds::FoldScheme;
use netcv_core::netgen::{sample_network, Adjacency, BlockSizeScheme, GeneratorCell};
use netcv_core::sbm::{fit_sbm, FitOptions, TrainingMask};
use netcv_core::stream;

use netcv_harness::config::{default_output_dir, read_patch, ConfigPatch};
use netcv_harness::method::Method;
use netcv_harness::report::write_report;
use netcv_harness::{preset, run_experiment, run_variance_study, ExperimentConfig, RunOptions, StudyConfig};

#[derive(Parser)]
#[command(name = "netcv", version, about = "Cross-validation model selection for directed block models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a network from a planted-partition cell.
    Generate(GenerateArgs),
    /// Fit a K-block model to a network.
    Fit(FitArgs),
    /// CV risk curve of one network under one fold scheme.
    Cv(CvArgs),
    /// Select K on one network with one method.
    Select(SelectArgs),
    /// Run (or resume) the experiment grid.
    Experiment(ExperimentArgs),
    /// Build a summary table from a run directory.
    Report(ReportArgs),
    /// Variance decomposition of CV risk estimates on one cell.
    VarianceStudy(StudyArgs),
    /// Emit a fold assignment matrix.
    Folds(FoldsArgs),
}

#[derive(Args)]
struct CellArgs {
    #[arg(long, default_value_t = 60)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value = "equal")]
    sizes: BlockSizeScheme,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 5.0)]
    ratio: f64,
}

impl CellArgs {
    fn cell(&self) -> GeneratorCell {
        GeneratorCell {
            n: self.nodes,
            k: self.blocks,
            sizes: self.sizes,
            b: self.density,
            r: self.ratio,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NetworkFormat {
    /// `n=<n>` header then one `i j` line per tie, 1-based.
    Edges,
    /// n×n 0/1 CSV.
    Dense,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    cell: CellArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "edges")]
    format: NetworkFormat,
    /// Also write the planted memberships (node,block) here.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Network file (edge list or dense CSV).
    input: PathBuf,
    #[arg(long, short)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    input: PathBuf,
    #[arg(long, default_value = "latin")]
    scheme: FoldScheme,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 11)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    input: PathBuf,
    /// e.g. latin-10, ncv-3, aic, bic, loglik, modularity, infomap.
    #[arg(long, default_value = "latin-10")]
    method: Method,
    #[arg(long, default_value_t = 11)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Starting point: paper, desk or smoke.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// TOML file; its fields override both the preset and the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Defaults to $NETCV_OUT_DIR or ./netcv-out.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write 0 for wall_ms so that reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Stop after this many new (cell, replicate) units.
    #[arg(long)]
    max_units: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = preset(&self.preset)?;
        config.output_dir = default_output_dir();
        config.apply(&ConfigPatch {
            nodes: self.nodes.clone(),
            blocks: self.blocks.clone(),
            sizes: self.sizes.clone(),
            densities: self.densities.clone(),
            ratios: self.ratios.clone(),
            replications: self.replications,
            folds: self.folds.clone(),
            methods: self.methods.clone(),
            k_max: self.k_max,
            master_seed: self.master_seed,
            output_dir: self.output_dir.clone(),
            workers: self.workers,
        });
        if let Some(path) = &self.config {
            config.apply(&read_patch(path)?);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// One of the known table ids.
    table: String,
    /// Run directory; defaults to $NETCV_OUT_DIR or ./netcv-out.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Defaults to <dir>/<table>.csv.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 60)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value = "equal")]
    sizes: BlockSizeScheme,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 5.0)]
    ratio: f64,
    /// Candidate K whose risk is estimated.
    #[arg(long, short, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    networks: usize,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, value_delimiter = ',', default_value = "ncv,latin,random")]
    schemes: Vec<FoldScheme>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    folds: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    bias_replicates: usize,
    #[arg(long, default_value_t = 500)]
    truth_replicates: usize,
    #[arg(long, default_value_t = 20240601)]
    master_seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct FoldsArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value = "latin")]
    scheme: FoldScheme,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_network(path: &Path) -> Result<Adjacency> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let y = if text.trim_start().starts_with("n=") {
        Adjacency::from_edge_list(&text)
    } else {
        Adjacency::from_dense_csv(&text)
    };
    y.with_context(|| format!("parsing {}", path.display()))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let model = args.cell.cell().model()?;
    let y = sample_network(&model.probabilities, &mut stream(args.seed));
    let text = match args.format {
        NetworkFormat::Edges => y.to_edge_list(),
        NetworkFormat::Dense => y.to_dense_csv(),
    };
    if let Some(path) = &args.labels {
        let mut out = String::from("node,block\n");
        for (i, l) in model.membership.labels().iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l + 1));
        }
        fs::write(path, out)?;
    }
    emit(args.output.as_deref(), &text)
}

fn select(args: &SelectArgs) -> Result<()> {
    let y = read_network(&args.input)?;
    let mut rng = stream(args.seed);
    let (k_hat, curve) = match args.method {
        Method::Cv { scheme, v } => {
            let (k, c): (usize, RiskCurve) = select_model_cv(&y, 1..=args.k_max, scheme, v, &mut rng)?;
            (k, format_curve(&c.values(Normalization::PerValidated)))
        }
        Method::Criterion(kind) => {
            let fits = full_data_fits(&y, 1..=args.k_max, FitOptions::default(), &mut rng)?;
            let (k, c) = select_from_fits(&fits, kind, y.n())?;
            (k, format_curve(&c.iter().map(|c| (c.k, c.value)).collect::<Vec<_>>()))
        }
        Method::Modularity => {
            let r = greedy_modularity(&y)?;
            (r.k_hat, format!("Q={}", r.score))
        }
        Method::Infomap => {
            let r = infomap(&y, &mut rng)?;
            (r.k_hat, format!("L={}", r.score))
        }
        Method::TrueRisk => bail!("truerisk needs the generating probabilities; use `experiment`"),
    };
    println!("method={}\nk_hat={k_hat}\ncurve={curve}", args.method);
    Ok(())
}

fn study(args: &StudyArgs) -> Result<()> {
    let config = StudyConfig {
        cell: GeneratorCell {
            n: args.nodes,
            k: args.blocks,
            sizes: args.sizes,
            b: args.density,
            r: args.ratio,
        },
        k: args.k,
        networks: args.networks,
        draws: args.draws,
        schemes: args.schemes.clone(),
        folds: args.folds.clone(),
        bias_replicates: args.bias_replicates,
        truth_replicates: args.truth_replicates,
        master_seed: args.master_seed,
        output_dir: args.output_dir.clone().unwrap_or_else(default_output_dir),
        workers: args.workers,
    };
    let out = run_variance_study(&config)?;
    for path in out.files {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Fit(args) => {
            let y = read_network(&args.input)?;
            let fit = fit_sbm(&y, args.k, &TrainingMask::full(y.n()), &mut stream(args.seed))?;
            emit(args.output.as_deref(), &fit.to_text())
        }
        Command::Cv(args) => {
            let y = read_network(&args.input)?;
            let mut rng = stream(args.seed);
            let a = args.scheme.assign(y.n(), args.folds, &mut rng)?;
            let curve = cv_risk_curve(&y, 1..=args.k_max.min(y.n()), &a, &mut rng)?;
            emit(args.output.as_deref(), &curve.to_csv(true))
        }
        Command::Select(args) => select(&args),
        Command::Experiment(args) => {
            let config = args.config()?;
            if args.dry_run {
                print!("{}", toml::to_string(&config)?);
                return Ok(());
            }
            let summary = run_experiment(
                &config,
                RunOptions {
                    record_timing: !args.no_timing,
                    max_units: args.max_units,
                },
            )?;
            eprintln!(
                "{} of {} units done ({} already on disk); records in {}",
                summary.units_skipped + summary.units_run,
                summary.units_total,
                summary.units_skipped,
                summary.records_path.display()
            );
            Ok(())
        }
        Command::Report(args) => {
            let dir = args.dir.unwrap_or_else(default_output_dir);
            let path = write_report(&dir, &args.table, args.output.as_deref())?;
            print!("{}", fs::read_to_string(&path)?);
            Ok(())
        }
        Command::VarianceStudy(args) => study(&args),
        Command::Folds(args) => {
            let a = args.scheme.assign(args.nodes, args.folds, &mut stream(args.seed))?;
            emit(args.output.as_deref(), &a.to_csv())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
