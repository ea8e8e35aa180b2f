use std::path::{Path, PathBuf};

use kppfind::graph::CohortConfig;
use kppfind::ko::KoConfig;
use kppfind::pinn::{ConstraintMode, PinnConfig};
use kppfind::pipeline::{AblationConfig, DiscoveryConfig, DistillConfig};
use kppfind::symreg::SymregConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input and output locations. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub laplacian: Option<PathBuf>,
    /// Cohort file; written by `simulate`, read by the other commands.
    /// Defaults to `<output_dir>/cohort.json`.
    pub cohort: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Discovery result. Defaults to `<output_dir>/discovery.json`.
    pub result: Option<PathBuf>,
}

/// Training settings; the seed, ensemble size, and constraint mode are set
/// at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnSection {
    pub surrogate_hidden: Vec<usize>,
    pub reaction_hidden: Vec<usize>,
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub lbfgs_max_iters: usize,
    pub lbfgs_tol: f64,
    pub collocation_count: usize,
    pub w_data: f64,
    pub w_res: f64,
    pub w_aux: f64,
}

impl Default for PinnSection {
    fn default() -> Self {
        let d = PinnConfig::default();
        Self {
            surrogate_hidden: d.surrogate_hidden,
            reaction_hidden: d.reaction_hidden,
            adam_steps: d.adam_steps,
            adam_lr: d.adam_lr,
            lbfgs_max_iters: d.lbfgs_max_iters,
            lbfgs_tol: d.lbfgs_tol,
            collocation_count: d.collocation_count,
            w_data: d.w_data,
            w_res: d.w_res,
            w_aux: d.w_aux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    pub horizon: f64,
    pub step: f64,
    /// Node labels to export; empty means every node.
    pub regions: Vec<String>,
    /// Subject ids to export; empty means every subject.
    pub subjects: Vec<String>,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self { horizon: 20.0, step: 0.1, regions: Vec::new(), subjects: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every component seed is derived from it.
    pub seed: u64,
    pub ensemble_size: usize,
    pub constraint_mode: ConstraintMode,
    pub paths: Paths,
    pub cohort: CohortConfig,
    pub pinn: PinnSection,
    pub symreg: SymregConfig,
    pub distill: DistillConfig,
    pub projection: ProjectionSection,
    pub ablation: AblationConfig,
    pub ko: KoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ensemble_size: 10,
            constraint_mode: ConstraintMode::Hard,
            paths: Paths::default(),
            cohort: CohortConfig::default(),
            pinn: PinnSection::default(),
            symreg: SymregConfig::default(),
            distill: DistillConfig::default(),
            projection: ProjectionSection::default(),
            ablation: AblationConfig::default(),
            ko: KoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config schema: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.paths.laplacian,
            &mut config.paths.cohort,
            &mut config.paths.output_dir,
            &mut config.paths.result,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: String| CliError::Config(e);
        if self.ensemble_size == 0 {
            return Err(bad("ensemble_size must be at least 1".into()));
        }
        self.cohort.validate().map_err(|e| bad(format!("cohort: {e}")))?;
        self.discovery().validate().map_err(|e| bad(e.to_string()))?;
        self.ko.validate().map_err(|e| bad(format!("ko: {e}")))?;
        let p = &self.projection;
        if !(p.step > 0.0 && p.step.is_finite() && p.horizon.is_finite()) {
            return Err(bad("projection.step must be positive and projection.horizon finite".into()));
        }
        if self.ablation.horizons.is_empty() || self.ablation.horizons.contains(&0) || self.ablation.modes.is_empty() {
            return Err(bad("ablation needs positive horizons and at least one mode".into()));
        }
        if !(1..=4).contains(&self.ablation.reaction_group) {
            return Err(bad("ablation.reaction_group must be 1, 2, 3, or 4".into()));
        }
        Ok(())
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        let p = &self.pinn;
        DiscoveryConfig {
            pinn: PinnConfig {
                surrogate_hidden: p.surrogate_hidden.clone(),
                reaction_hidden: p.reaction_hidden.clone(),
                adam_steps: p.adam_steps,
                adam_lr: p.adam_lr,
                lbfgs_max_iters: p.lbfgs_max_iters,
                lbfgs_tol: p.lbfgs_tol,
                collocation_count: p.collocation_count,
                constraint_mode: self.constraint_mode,
                w_data: p.w_data,
                w_res: p.w_res,
                w_aux: p.w_aux,
                ensemble_size: self.ensemble_size,
                seed: self.seed,
            },
            symreg: self.symreg.clone(),
            distill: self.distill.clone(),
            seed: self.seed,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn cohort_path(&self) -> PathBuf {
        self.paths.cohort.clone().unwrap_or_else(|| self.output_dir().join("cohort.json"))
    }

    pub fn result_path(&self) -> PathBuf {
        self.paths.result.clone().unwrap_or_else(|| self.output_dir().join("discovery.json"))
    }

    pub fn laplacian_path(&self) -> Result<&Path, CliError> {
        self.paths
            .laplacian
            .as_deref()
            .ok_or_else(|| CliError::Config("paths.laplacian is required for this command".into()))
    }
}
