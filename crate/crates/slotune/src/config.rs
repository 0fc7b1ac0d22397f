//! TOML settings file. Every key is optional; command-line flags win.
//!
//! ```toml
//! output_dir = "runs/concurrent"
//! seeds = [42, 142, 242, 342, 442]
//! optimizers = ["random", "tba-tpe"]
//! budget = 15
//! harness = "concurrent"    # overrides workload.dispatch_mode
//! jobs = 1
//! repair = true
//! model = "qwen2-1.5b"
//! vram_gib = 40
//!
//! [params]
//! gamma = 0.25
//!
//! [slo]
//! ttft_p99_ms = 500.0
//!
//! [workload]
//! num_requests = 5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use slotune_core::repair::GIB;
use slotune_core::{DispatchMode, OptimizerKind, OptimizerParams, Registry, SloThresholds, StudySpec, Workload};

use crate::error::{Error, Result};
use crate::runner::Matrix;

pub const DEFAULT_SEEDS: [u64; 5] = [42, 142, 242, 342, 442];
pub const DEFAULT_OPTIMIZERS: [OptimizerKind; 2] = [OptimizerKind::Random, OptimizerKind::TbaTpe];
pub const DEFAULT_MODEL: &str = "qwen2-1.5b";
pub const DEFAULT_VRAM_GIB: f64 = 40.0;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub output_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub optimizers: Option<Vec<OptimizerKind>>,
    pub budget: Option<u32>,
    pub harness: Option<DispatchMode>,
    pub jobs: Option<usize>,
    pub repair: Option<bool>,
    pub model: Option<String>,
    pub vram_gib: Option<f64>,
    pub workload: Option<Workload>,
    pub slo: Option<SloThresholds>,
    pub params: Option<OptimizerParams>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub optimizers: Option<Vec<OptimizerKind>>,
    pub budget: Option<u32>,
    pub harness: Option<DispatchMode>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub output_dir: Option<PathBuf>,
    pub matrix: Matrix,
    pub jobs: usize,
    /// The model is not in the registry and fallback constants are used.
    pub fallback_hardware: bool,
}

impl FileConfig {
    pub fn resolve(&self, cli: Overrides) -> Result<RunSettings> {
        let model = self.model.as_deref().unwrap_or(DEFAULT_MODEL);
        let vram_gib = self.vram_gib.unwrap_or(DEFAULT_VRAM_GIB);
        if !(vram_gib > 0.0 && vram_gib.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "vram_gib must be positive, got {vram_gib}"
            )));
        }
        let lookup = Registry::builtin().lookup(model, (vram_gib * GIB as f64) as u64);

        let mut workload = self.workload.unwrap_or_default();
        if let Some(mode) = cli.harness.or(self.harness) {
            workload.dispatch_mode = mode;
        }
        let template = StudySpec {
            budget: cli.budget.or(self.budget).unwrap_or(15),
            workload,
            slo: self.slo.unwrap_or_default(),
            hw: lookup.profile,
            params: self.params.unwrap_or_default(),
            repair_enabled: self.repair.unwrap_or(true),
            ..StudySpec::new(OptimizerKind::Random, 0)
        };
        template.validate().map_err(|m| Error::InvalidSettings(m.to_string()))?;

        let seeds = cli
            .seeds
            .or_else(|| self.seeds.clone())
            .unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        let optimizers = cli
            .optimizers
            .or_else(|| self.optimizers.clone())
            .unwrap_or_else(|| DEFAULT_OPTIMIZERS.to_vec());
        let jobs = cli.jobs.or(self.jobs).unwrap_or(1);
        if seeds.is_empty() || optimizers.is_empty() || jobs == 0 {
            return Err(Error::InvalidSettings(
                "seeds, optimizers and jobs must be non-empty".into(),
            ));
        }
        Ok(RunSettings {
            output_dir: cli.output_dir.or_else(|| self.output_dir.clone()),
            matrix: Matrix {
                seeds: dedup(seeds),
                optimizers: dedup(optimizers),
                template,
            },
            jobs,
            fallback_hardware: lookup.fallback,
        })
    }
}

fn dedup<T: PartialEq + Copy>(items: Vec<T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}
