//! Experiment orchestration: configuration, the feedback loop, persistence,
//! resumption and report emission.

mod artifacts;
pub mod config;
mod experiment;
mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::info;

use crate::corpus::CorpusError;
use crate::dataset::DatasetError;
use crate::http::HttpError;
use crate::metrics::{IterationMetrics, MetricsError};
use crate::retrieval::RetrievalError;

pub use artifacts::{read_json, read_jsonl, Manifest, Phase, RunLayout};
pub use config::{ConfigError, ExperimentConfig, FilterMode};
pub use experiment::{
    transition_maps, ContextRecord, Event, Experiment, InjectionArtifacts, IterationArtifacts,
};
pub use report::{emit_plot_series, load_metrics, SeriesReport, METRICS_LOG, SERIES_DIR, SUMMARY};

/// File names inside a run directory.
pub mod files {
    pub use super::artifacts::{
        ADDED_DOCS, COMMITTED, CONFIG_COPY, CONTEXTS, EVAL, EVENTS, GENERATIONS, HITS_AT_5,
        MANIFEST, METRICS, MISINFO, QUERIES, RANKED,
    };
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("{0}")]
    Setup(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("{phase} aborted: {reason}")]
    Aborted { phase: String, reason: String },
    #[error("zero-shot injection produced no documents")]
    NoGenerations,
    #[error("run directory belongs to config {found}, not {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{0} is not a run directory")]
    NotARun(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop right after this phase commits, as if the process were killed.
    pub stop_after: Option<Phase>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub config_hash: String,
    /// Baseline first, then every loop iteration.
    pub metrics: Vec<IterationMetrics>,
    /// Phases restored from disk rather than executed.
    pub replayed: Vec<Phase>,
    pub completed: bool,
}

/// Baseline, injection and every loop iteration. Phases already committed in
/// the output directory are replayed instead of rerun, so calling this on an
/// interrupted run resumes it.
pub fn run_experiment(config: ExperimentConfig, options: RunOptions) -> Result<RunSummary, RunError> {
    let mut exp = Experiment::new(config)?;
    exp.open_run_dir()?;
    let iterations = exp.config().iterations;
    let mut phases = vec![Phase::Baseline, Phase::Inject];
    phases.extend((1..=iterations).map(Phase::Iteration));
    let mut replayed = Vec::new();
    let mut stopped = false;
    for phase in phases {
        if exp.layout().is_committed(phase) {
            exp.replay(phase)?;
            replayed.push(phase);
        } else {
            match phase {
                Phase::Baseline => {
                    exp.run_baseline()?;
                }
                Phase::Inject => {
                    exp.inject_zero_shot()?;
                }
                Phase::Iteration(i) => {
                    exp.run_iteration(i)?;
                }
            }
        }
        if options.stop_after == Some(phase) {
            info!(%phase, "stopping early as requested");
            stopped = true;
            break;
        }
    }
    let run_dir = exp.layout().root().to_path_buf();
    if !stopped {
        emit_plot_series(&run_dir)?;
    }
    Ok(RunSummary {
        config_hash: exp.config_hash().to_string(),
        metrics: load_metrics(&run_dir)?,
        replayed,
        completed: !stopped,
        run_dir,
    })
}

/// Loads the configuration stored in a run directory and continues the run.
pub fn resume(run_dir: &Path, options: RunOptions) -> Result<RunSummary, RunError> {
    let cfg_path = run_dir.join(files::CONFIG_COPY);
    if !cfg_path.is_file() {
        return Err(RunError::NotARun(run_dir.display().to_string()));
    }
    let mut config = ExperimentConfig::load(&cfg_path)?;
    config.output_dir = run_dir.to_path_buf();
    run_experiment(config, options)
}

/// Runs only the baseline and writes it under the output directory.
pub fn run_baseline(config: ExperimentConfig) -> Result<IterationArtifacts, RunError> {
    let mut exp = Experiment::new(config)?;
    exp.open_run_dir()?;
    exp.run_baseline()
}
