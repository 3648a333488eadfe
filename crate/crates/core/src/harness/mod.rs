//! Monte Carlo experiment runner.
//!
//! An [`ExperimentSpec`] names one of the simulation designs, a grid, the number of
//! replications and a master seed. Each grid cell gets a sub-seed derived from the
//! master seed and the cell index; each replication derives its own path seed from the
//! cell seed. Replications run on the rayon pool and are collected in index order, so
//! results do not depend on the worker count.

mod experiments;
mod table;

pub use experiments::KeffScenario;
pub use table::{Column, ResultTable, Row};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::Family;
use crate::rng::{component, derive_seed, label_key};
use crate::workflows::{ThresholdTransform, WorkflowFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ScalingLaw,
    RedundancyLaw,
    RedundancyImperfect,
    CapacityInflation,
    ThresholdAmplification,
    FalsificationMatrix,
    DetectionFrontier,
    BreakEvenCost,
    KeffValidation,
    SplitSensitivity,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::ScalingLaw,
        Experiment::RedundancyLaw,
        Experiment::RedundancyImperfect,
        Experiment::CapacityInflation,
        Experiment::ThresholdAmplification,
        Experiment::FalsificationMatrix,
        Experiment::DetectionFrontier,
        Experiment::BreakEvenCost,
        Experiment::KeffValidation,
        Experiment::SplitSensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ScalingLaw => "ScalingLaw",
            Experiment::RedundancyLaw => "RedundancyLaw",
            Experiment::RedundancyImperfect => "RedundancyImperfect",
            Experiment::CapacityInflation => "CapacityInflation",
            Experiment::ThresholdAmplification => "ThresholdAmplification",
            Experiment::FalsificationMatrix => "FalsificationMatrix",
            Experiment::DetectionFrontier => "DetectionFrontier",
            Experiment::BreakEvenCost => "BreakEvenCost",
            Experiment::KeffValidation => "KeffValidation",
            Experiment::SplitSensitivity => "SplitSensitivity",
        }
    }

    /// Accepts `ScalingLaw`, `scaling_law` or `scaling-law`.
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        Self::ALL.into_iter().find(|e| e.name().to_lowercase() == norm)
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid parameters. Unset fields take the experiment's defaults in [`ExperimentSpec::resolved`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    /// Nominal search size for designs with a fixed K.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transforms: Option<Vec<ThresholdTransform>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workflows: Option<Vec<WorkflowFamily>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub environments: Option<Vec<Family>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<Vec<KeffScenario>>,
    /// Walk-forward Z cutoff counted as a detection or failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_z: Option<f64>,
}

fn default_replications() -> usize {
    1000
}
fn default_length() -> usize {
    2520
}
fn default_split() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_length")]
    pub length_t: usize,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    /// Only the first this-many replications of each cell compute K̂_eff. Unset means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keff_replications: Option<usize>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            replications: default_replications(),
            seed: 0,
            length_t: default_length(),
            split_ratio: default_split(),
            keff_replications: None,
            grid: Grid::default(),
            output_dir: None,
        }
    }

    /// Every default written out explicitly, validated.
    pub fn resolved(&self) -> Result<Self> {
        let mut s = self.clone();
        experiments::fill_defaults(s.experiment, &mut s.grid);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        if self.keff_replications == Some(0) {
            return Err(Error::Config("keff_replications must be >= 1 when set".into()));
        }
        Ok(())
    }

    /// Sub-seed of grid cell `cell`.
    pub fn cell_seed(&self, cell: usize) -> u64 {
        derive_seed(self.seed, &[label_key(self.experiment.name()), cell as u64])
    }

    pub fn replication_seed(cell_seed: u64, replication: usize) -> u64 {
        derive_seed(cell_seed, &[component::PATH, replication as u64])
    }

    pub fn workflow_seed(cell_seed: u64) -> u64 {
        derive_seed(cell_seed, &[component::WORKFLOW])
    }

    fn keff_cap(&self) -> usize {
        self.keff_replications.unwrap_or(usize::MAX).min(self.replications)
    }
}

/// Runs `f` for replications `0..n` on the rayon pool and returns results in index order.
pub fn replicate<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Runs the full grid. Cells whose replications fail are marked failed and the rest of
/// the grid still runs; check [`ResultTable::failed_rows`].
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    let spec = spec.resolved()?;
    log::info!("running {} with N={}", spec.experiment, spec.replications);
    let mut table = experiments::run(&spec);
    table
        .metadata
        .insert("spec".into(), serde_json::to_value(&spec)?);
    table.metadata.insert(
        "column_ci".into(),
        serde_json::to_value(
            table
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.ci))
                .collect::<std::collections::BTreeMap<_, _>>(),
        )?,
    );
    Ok(table)
}
