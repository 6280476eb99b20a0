//! On-disk run layout. Every phase writes into its own directory and marks it
//! complete with a `COMMITTED` file written last.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::RunError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const QUERIES: &str = "queries.jsonl";
pub const COMMITTED: &str = "COMMITTED";
pub const RANKED: &str = "ranked.jsonl";
pub const CONTEXTS: &str = "contexts.jsonl";
pub const GENERATIONS: &str = "generations.jsonl";
pub const EVAL: &str = "eval.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const ADDED_DOCS: &str = "added_docs.jsonl";
pub const MISINFO: &str = "misinfo.jsonl";
pub const HITS_AT_5: &str = "hits_at_5.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Baseline,
    Inject,
    Iteration(u32),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Baseline => f.write_str("baseline"),
            Phase::Inject => f.write_str("inject"),
            Phase::Iteration(i) => write!(f, "iter_{i:02}"),
        }
    }
}

/// Self-description of a run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub iterations: u32,
    pub queries: usize,
    pub generators: Vec<String>,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct RunLayout {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn phase_dir(&self, phase: Phase) -> PathBuf {
        self.root.join(phase.to_string())
    }

    pub fn is_committed(&self, phase: Phase) -> bool {
        self.phase_dir(phase).join(COMMITTED).is_file()
    }

    /// Creates a clean directory for `phase`, discarding leftovers of an
    /// interrupted attempt.
    pub fn begin(&self, phase: Phase) -> Result<PathBuf, RunError> {
        let dir = self.phase_dir(phase);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    pub fn commit(&self, phase: Phase, corpus_version: u64) -> Result<(), RunError> {
        let path = self.phase_dir(phase).join(COMMITTED);
        fs::write(&path, format!("{corpus_version}\n")).map_err(io_err(&path))
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| RunError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::Artifact {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
