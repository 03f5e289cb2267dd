//! Experiment configuration: defaults, presets, flag and file overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use netcv_core::netgen::{BlockSizeScheme, GeneratorCell};
use serde::{Deserialize, Serialize};

use crate::method::{expand_methods, Method};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NETCV_OUT_DIR";

const PAPER_PRESET: &str = include_str!("../presets/paper.toml");
const DESK_PRESET: &str = include_str!("../presets/desk.toml");
const SMOKE_PRESET: &str = include_str!("../presets/smoke.toml");

pub const PRESETS: [&str; 3] = ["paper", "desk", "smoke"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nodes: Vec<usize>,
    pub blocks: Vec<usize>,
    pub sizes: Vec<String>,
    pub densities: Vec<f64>,
    pub ratios: Vec<f64>,
    pub replications: usize,
    pub folds: Vec<usize>,
    pub methods: Vec<String>,
    pub k_max: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut config = ExperimentConfig {
            nodes: vec![],
            blocks: vec![],
            sizes: vec![],
            densities: vec![],
            ratios: vec![],
            replications: 0,
            folds: vec![],
            methods: vec![],
            k_max: 0,
            master_seed: 0,
            output_dir: default_output_dir(),
            workers: 1,
        };
        config.apply(&parse_patch(PAPER_PRESET).expect("paper preset parses"));
        config
    }
}

/// Every field optional; used for presets, config files and CLI flags alike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub nodes: Option<Vec<usize>>,
    pub blocks: Option<Vec<usize>>,
    pub sizes: Option<Vec<String>>,
    pub densities: Option<Vec<f64>>,
    pub ratios: Option<Vec<f64>>,
    pub replications: Option<usize>,
    pub folds: Option<Vec<usize>>,
    pub methods: Option<Vec<String>>,
    pub k_max: Option<usize>,
    pub master_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("netcv-out"))
}

pub fn parse_patch(text: &str) -> Result<ConfigPatch> {
    Ok(toml::from_str(text)?)
}

pub fn read_patch(path: &Path) -> Result<ConfigPatch> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_patch(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "paper" => PAPER_PRESET,
        "desk" => DESK_PRESET,
        "smoke" => SMOKE_PRESET,
        other => bail!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
    };
    let mut config = ExperimentConfig::default();
    config.apply(&parse_patch(text)?);
    Ok(config)
}

impl ExperimentConfig {
    pub fn apply(&mut self, patch: &ConfigPatch) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &patch.$field {
                    self.$field = v.clone();
                })*
            };
        }
        take!(
            nodes,
            blocks,
            sizes,
            densities,
            ratios,
            replications,
            folds,
            methods,
            k_max,
            master_seed,
            output_dir,
            workers
        );
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("nodes", self.nodes.is_empty()),
            ("blocks", self.blocks.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("densities", self.densities.is_empty()),
            ("ratios", self.ratios.is_empty()),
            ("folds", self.folds.is_empty()),
            ("methods", self.methods.is_empty()),
        ];
        for (name, empty) in lists {
            if empty {
                bail!("`{name}` must not be empty");
            }
        }
        if self.replications == 0 {
            bail!("`replications` must be at least 1");
        }
        if self.k_max == 0 {
            bail!("`k_max` must be at least 1");
        }
        if self.workers == 0 {
            bail!("`workers` must be at least 1");
        }
        for &b in &self.densities {
            if !(b > 0.0 && b <= 1.0) {
                bail!("density {b} outside (0, 1]");
            }
            for &r in &self.ratios {
                if r < 1.0 || r * b > 1.0 {
                    bail!("ratio {r} with density {b}: need r >= 1 and r·b <= 1");
                }
            }
        }
        for &n in &self.nodes {
            if self.k_max > n {
                bail!("k_max {} exceeds n = {n}", self.k_max);
            }
            for &k in &self.blocks {
                if k == 0 || k > n {
                    bail!("{k} blocks cannot be planted on {n} nodes");
                }
            }
        }
        for &v in &self.folds {
            if v < 2 {
                bail!("fold count {v} < 2");
            }
        }
        self.size_schemes()?;
        self.methods()?;
        Ok(())
    }

    pub fn size_schemes(&self) -> Result<Vec<BlockSizeScheme>> {
        self.sizes
            .iter()
            .map(|s| s.parse::<BlockSizeScheme>().map_err(anyhow::Error::msg))
            .collect()
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        expand_methods(&self.methods, &self.folds).map_err(anyhow::Error::msg)
    }

    /// Design cells in canonical order: nodes, blocks, sizes, densities,
    /// ratios, each in the order listed.
    pub fn cells(&self) -> Result<Vec<GeneratorCell>> {
        let schemes = self.size_schemes()?;
        let mut out = Vec::new();
        for &n in &self.nodes {
            for &k in &self.blocks {
                for &sizes in &schemes {
                    for &b in &self.densities {
                        for &r in &self.ratios {
                            out.push(GeneratorCell { n, k, sizes, b, r });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
