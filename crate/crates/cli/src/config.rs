//! Experiment description file.
//!
//! ```toml
//! catalog = "catalog.json"
//! workload = "workload.json"
//! lookup = "lookup.txt"          # optional; estimated cardinalities otherwise
//! master_seed = 7
//! ensemble = true
//! # upper_bound = 1e13           # calibrated from random episodes when absent
//!
//! [split]
//! mode = "curated"               # random | curated | overlap | holdout | file
//! folds = 4
//!
//! [[agents]]
//! name = "ppo"
//! preset = "ppo-desk"
//! seeds = 5
//! set = ["total_steps=50000"]
//! ```
//!
//! Relative paths are resolved against the directory of the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::{usage, SplitMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub catalog: PathBuf,
    pub workload: PathBuf,
    pub lookup: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_true")]
    pub ensemble: bool,
    pub upper_bound: Option<f64>,
    #[serde(default = "default_percentile")]
    pub calibrate_percentile: f64,
    pub split: SplitSection,
    pub agents: Vec<AgentSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Random,
    Curated,
    Overlap,
    Holdout,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitKind,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub test_size: Option<usize>,
    /// Split JSON file for `mode = "file"`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub name: String,
    pub preset: String,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub set: Vec<String>,
}

fn default_true() -> bool {
    true
}

fn default_percentile() -> f64 {
    90.0
}

fn default_folds() -> usize {
    4
}

fn default_seeds() -> usize {
    5
}

impl SplitKind {
    pub fn mode(self) -> Option<SplitMode> {
        match self {
            SplitKind::Random => Some(SplitMode::Random),
            SplitKind::Curated => Some(SplitMode::Curated),
            SplitKind::Overlap => Some(SplitMode::Overlap),
            SplitKind::Holdout => Some(SplitMode::Holdout),
            SplitKind::File => None,
        }
    }
}

impl ExperimentFile {
    /// Reads the file and makes its paths absolute.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file: ExperimentFile =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut file.catalog);
        resolve(&mut file.workload);
        if let Some(p) = &mut file.lookup {
            resolve(p);
        }
        if let Some(p) = &mut file.split.path {
            resolve(p);
        }
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.agents.is_empty() {
            return Err(usage("experiment needs at least one [[agents]] entry"));
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.agents {
            if !names.insert(&a.name) {
                return Err(usage(format!("duplicate agent name `{}`", a.name)));
            }
            if a.seeds == 0 {
                return Err(usage(format!("agent `{}` needs at least one seed", a.name)));
            }
        }
        if self.split.mode == SplitKind::File && self.split.path.is_none() {
            return Err(usage("split mode `file` needs a path"));
        }
        Ok(())
    }
}
