//! Experiment drivers and result reporting.
//!
//! * Experiment 1 sweeps the perturbation sample size with the oracle
//!   predictor and records how explanations approach the ground truth.
//! * Experiment 2 explains the oracle with full enumeration.
//! * Experiment 3 repeats experiment 2 against an external model reached
//!   over the bridge protocol.

pub mod cli;
mod report;
mod run;

pub use report::{aggregate, write_curve_csv, write_rows_csv, Aggregate, Agreement, MetricReport, ReportRow};
pub use run::{
    load_samples, run_experiment, run_experiment1, run_experiment2, run_experiment3, score, EvalSample,
    CHECKPOINT_FILE,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::FunctionKind;
use crate::explainer::{RenderMode, SampleSize};
use crate::metrics::{DEFAULT_BIN_GRID, DEFAULT_EPS};
use crate::scene::DatasetKind;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Datagen(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Explain(#[from] crate::explainer::ExplainError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Predict(#[from] crate::predictor::PredictError),
    #[error(transparent)]
    Bridge(#[from] crate::predictor::BridgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sample {sample_id} ({function}, {sample_size}): {source}")]
    Sample { sample_id: String, function: FunctionKind, sample_size: SampleSize, source: Box<HarnessError> },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub const DEFAULT_SAMPLES: usize = 200;

fn default_experiment() -> u8 {
    2
}
fn default_datasets() -> Vec<DatasetKind> {
    DatasetKind::ALL.to_vec()
}
fn default_functions() -> Vec<FunctionKind> {
    FunctionKind::ALL.to_vec()
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_bins() -> usize {
    DEFAULT_BIN_GRID
}
fn default_eps() -> f64 {
    DEFAULT_EPS
}
fn default_timeout() -> u64 {
    120
}

/// Everything that determines an experiment run. Loadable from TOML or JSON;
/// missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment")]
    pub experiment: u8,
    #[serde(default = "default_datasets")]
    pub datasets: Vec<DatasetKind>,
    #[serde(default = "default_functions")]
    pub functions: Vec<FunctionKind>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Experiment 1 sweep; experiments 2 and 3 always use full enumeration.
    #[serde(default)]
    pub sample_sizes: Vec<SampleSize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Coefficient rendering; per-function default when unset.
    #[serde(default)]
    pub render: Option<RenderMode>,
    /// Generated dataset to evaluate; scenes are sampled in memory otherwise.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub bridge_cmd: Option<String>,
    #[serde(default = "default_timeout")]
    pub bridge_timeout_secs: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub resume: bool,
}

impl ExperimentConfig {
    pub fn new(experiment: u8) -> Self {
        Self {
            experiment,
            datasets: default_datasets(),
            functions: default_functions(),
            n_samples: DEFAULT_SAMPLES,
            sample_sizes: if experiment == 1 { Self::default_sweep() } else { Vec::new() },
            bins: DEFAULT_BIN_GRID,
            eps: DEFAULT_EPS,
            render: None,
            data_dir: None,
            bridge_cmd: None,
            bridge_timeout_secs: default_timeout(),
            out_dir: None,
            master_seed: 0,
            resume: false,
        }
    }

    pub fn default_sweep() -> Vec<SampleSize> {
        vec![SampleSize::Minimal, SampleSize::Count(8), SampleSize::Count(16), SampleSize::Count(32), SampleSize::Full]
    }

    /// Sample sizes this experiment actually evaluates.
    pub fn effective_sizes(&self) -> Vec<SampleSize> {
        match self.experiment {
            1 => self.sample_sizes.clone(),
            _ => vec![SampleSize::Full],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        match self.experiment {
            1 => {
                if self.sample_sizes.len() < 2 {
                    return bad("experiment 1 needs at least two sample sizes to draw a curve");
                }
                if self.bridge_cmd.is_some() {
                    return bad("experiment 1 uses the oracle predictor; drop the bridge command");
                }
            }
            2 => {
                if self.bridge_cmd.is_some() {
                    return bad("experiment 2 uses the oracle predictor; use experiment 3 for a bridge");
                }
            }
            3 => {
                if self.bridge_cmd.is_none() {
                    return bad("experiment 3 requires a bridge command");
                }
                if self.functions.len() != 1 {
                    return bad("experiment 3 evaluates one function per bridge process");
                }
                if self.data_dir.is_none() && self.datasets.len() != 1 {
                    return bad("experiment 3 evaluates one dataset per bridge process");
                }
            }
            n => return Err(HarnessError::Config(format!("unknown experiment {n} (expected 1, 2 or 3)"))),
        }
        if self.functions.is_empty() || (self.data_dir.is_none() && self.datasets.is_empty()) {
            return bad("at least one function and dataset are required");
        }
        if self.bins == 0 {
            return bad("bins must be at least 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        Ok(())
    }
}
