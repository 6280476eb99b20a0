//! Experiment configuration (TOML) and its validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SourceTag;
use crate::filters::DEFAULT_DIVERSITY_THRESHOLD;
use crate::generation::{CONTEXT_SLOTS, DEFAULT_STYLE_MARKER, DEFAULT_TEMPERATURE};
use crate::http::EndpointConfig;
use crate::rerank::FailurePolicy;
use crate::seed::sha256_hex;

pub const MAX_GENERATORS: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    None,
    Source,
    Diversity,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::None => "none",
            FilterMode::Source => "source",
            FilterMode::Diversity => "diversity",
        })
    }
}

impl std::str::FromStr for FilterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(FilterMode::None),
            "source" => Ok(FilterMode::Source),
            "diversity" => Ok(FilterMode::Diversity),
            other => Err(format!("unknown filter mode {other:?} (none, source, diversity)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalKind {
    #[default]
    Bm25,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hashed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default)]
    pub kind: RetrievalKind,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            kind: RetrievalKind::Bm25,
            k1: default_k1(),
            b: default_b(),
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankKind {
    Lexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    pub kind: RerankKind,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub on_failure: FailurePolicy,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Synthetic,
    RemoteChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    pub kind: GeneratorKind,
    /// Synthetic only: probability of knowing a query's answer.
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default = "default_true")]
    pub echo_query: bool,
    #[serde(default = "default_uptake")]
    pub context_uptake: f64,
    #[serde(default = "default_boilerplate")]
    pub boilerplate_rate: f64,
    #[serde(default = "default_marker")]
    pub marker: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
}

impl GeneratorConfig {
    pub fn synthetic(name: impl Into<String>, accuracy: f64) -> Self {
        GeneratorConfig {
            name: name.into(),
            kind: GeneratorKind::Synthetic,
            accuracy: Some(accuracy),
            echo_query: true,
            context_uptake: default_uptake(),
            boilerplate_rate: default_boilerplate(),
            marker: default_marker(),
            temperature: default_temperature(),
            endpoint: None,
        }
    }
}

/// Generators active over an inclusive iteration range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub from: u32,
    pub to: u32,
    pub generators: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Marker,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    #[serde(default = "default_marker")]
    pub marker: String,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::Marker,
            marker: default_marker(),
            endpoint: None,
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    pub queries_path: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_context_size")]
    pub context_size: usize,
    /// Candidates retrieved per query; also the horizon for rank tracking.
    #[serde(default = "default_depth")]
    pub retrieval_depth: usize,
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
    /// Also grade every answer with the judge.
    #[serde(default)]
    pub grade_with_judge: bool,
    #[serde(default)]
    pub misinfo: bool,
    #[serde(default)]
    pub filter: FilterMode,
    #[serde(default = "default_threshold")]
    pub diversity_threshold: f64,
    /// Regeneration budget for misinformation answers and passages.
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_alpha")]
    pub significance_alpha: f64,
    /// Threads for per-query work; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub rerank: Option<RerankConfig>,
    pub generators: Vec<GeneratorConfig>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub detector: DetectorConfig,
    /// Judge model; defaults to the first generator.
    #[serde(default)]
    pub judge: Option<GeneratorConfig>,
    /// Writes the false answers in misinformation mode; defaults to the first generator.
    #[serde(default)]
    pub misinfo_generator: Option<GeneratorConfig>,
}

fn default_k1() -> f64 {
    1.2
}
fn default_b() -> f64 {
    0.75
}
fn default_batch() -> usize {
    32
}
fn default_depth() -> usize {
    100
}
fn default_true() -> bool {
    true
}
fn default_uptake() -> f64 {
    0.5
}
fn default_boilerplate() -> f64 {
    0.2
}
fn default_marker() -> String {
    DEFAULT_STYLE_MARKER.to_string()
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn default_sample_size() -> usize {
    200
}
fn default_iterations() -> u32 {
    10
}
fn default_context_size() -> usize {
    CONTEXT_SLOTS
}
fn default_failure_fraction() -> f64 {
    0.5
}
fn default_threshold() -> f64 {
    DEFAULT_DIVERSITY_THRESHOLD
}
fn default_retry_budget() -> u32 {
    3
}
fn default_alpha() -> f64 {
    0.05
}

fn offline_generator(g: &GeneratorConfig) -> GeneratorConfig {
    match g.kind {
        GeneratorKind::Synthetic => g.clone(),
        GeneratorKind::RemoteChat => GeneratorConfig {
            kind: GeneratorKind::Synthetic,
            accuracy: Some(g.accuracy.unwrap_or(0.8)),
            endpoint: None,
            ..g.clone()
        },
    }
}

impl ExperimentConfig {
    /// A small all-offline configuration; mainly for tests and the `synth` command.
    pub fn offline_defaults(corpus_path: PathBuf, queries_path: PathBuf, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            corpus_path,
            queries_path,
            output_dir,
            seed: 0,
            sample_size: default_sample_size(),
            iterations: default_iterations(),
            context_size: CONTEXT_SLOTS,
            retrieval_depth: default_depth(),
            max_failure_fraction: default_failure_fraction(),
            grade_with_judge: false,
            misinfo: false,
            filter: FilterMode::None,
            diversity_threshold: default_threshold(),
            retry_budget: default_retry_budget(),
            significance_alpha: default_alpha(),
            threads: 0,
            retrieval: RetrievalConfig::default(),
            rerank: None,
            generators: vec![
                GeneratorConfig::synthetic("synth-a", 0.8),
                GeneratorConfig::synthetic("synth-b", 0.8),
            ],
            schedule: Vec::new(),
            detector: DetectorConfig::default(),
            judge: None,
            misinfo_generator: None,
        }
    }

    /// Parses a TOML file. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.corpus_path, &mut cfg.queries_path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string_pretty(self)
    }

    /// Replaces every remote backend with its offline stand-in.
    pub fn into_offline(mut self) -> Self {
        self.generators = self.generators.iter().map(offline_generator).collect();
        self.judge = self.judge.as_ref().map(offline_generator);
        self.misinfo_generator = self.misinfo_generator.as_ref().map(offline_generator);
        if let Some(e) = &mut self.retrieval.embedding {
            if e.kind == EmbeddingKind::Remote {
                e.kind = EmbeddingKind::Hashed;
                e.endpoint = None;
            }
        }
        if self.retrieval.kind == RetrievalKind::Dense && self.retrieval.embedding.is_none() {
            self.retrieval.embedding = Some(EmbeddingConfig {
                kind: EmbeddingKind::Hashed,
                endpoint: None,
                batch_size: default_batch(),
            });
        }
        if let Some(r) = &mut self.rerank {
            if r.kind == RerankKind::Remote {
                r.kind = RerankKind::Lexical;
                r.endpoint = None;
            }
        }
        if self.detector.kind == DetectorKind::Remote {
            self.detector.kind = DetectorKind::Marker;
            self.detector.endpoint = None;
        }
        self
    }

    /// Hash of everything that affects results; the output location is excluded.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = 0;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Generator names active at `iteration`. Iteration 0 (the baseline) and
    /// the zero-shot injection use the iteration-1 set.
    pub fn generators_for(&self, iteration: u32) -> Vec<String> {
        let it = iteration.max(1);
        if self.schedule.is_empty() {
            return self.generators.iter().map(|g| g.name.clone()).collect();
        }
        self.schedule
            .iter()
            .find(|s| s.from <= it && it <= s.to)
            .map(|s| s.generators.clone())
            .unwrap_or_default()
    }

    pub fn generator(&self, name: &str) -> Option<&GeneratorConfig> {
        self.generators.iter().find(|g| g.name == name)
    }

    /// Every problem found, so one run reports them all.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if !self.corpus_path.is_file() {
            problems.push(format!("seed corpus not found: {}", self.corpus_path.display()));
        }
        if !self.queries_path.is_file() {
            problems.push(format!("query file not found: {}", self.queries_path.display()));
        }
        if self.iterations < 1 {
            problems.push("iterations must be at least 1".into());
        }
        if self.context_size != CONTEXT_SLOTS {
            problems.push(format!("context_size must be {CONTEXT_SLOTS}, got {}", self.context_size));
        }
        if self.sample_size == 0 {
            problems.push("sample_size must be at least 1".into());
        }
        if self.retrieval_depth < self.context_size {
            problems.push(format!(
                "retrieval_depth {} is smaller than context_size {}",
                self.retrieval_depth, self.context_size
            ));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            problems.push("max_failure_fraction must lie in [0, 1]".into());
        }
        if !(self.diversity_threshold > 0.0 && self.diversity_threshold <= 1.0) {
            problems.push("diversity_threshold must lie in (0, 1]".into());
        }
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            problems.push("significance_alpha must lie in (0, 1)".into());
        }
        if self.retry_budget == 0 {
            problems.push("retry_budget must be at least 1".into());
        }
        if !(self.retrieval.k1 >= 0.0 && (0.0..=1.0).contains(&self.retrieval.b)) {
            problems.push("bm25 parameters need k1 >= 0 and b in [0, 1]".into());
        }
        match (&self.retrieval.kind, &self.retrieval.embedding) {
            (RetrievalKind::Dense, None) => {
                problems.push("dense retrieval needs an [retrieval.embedding] backend".into())
            }
            (RetrievalKind::Dense, Some(e)) if e.kind == EmbeddingKind::Remote && e.endpoint.is_none() => {
                problems.push("remote embedding needs an endpoint".into())
            }
            _ => {}
        }
        if let Some(r) = &self.rerank {
            if r.depth == 0 {
                problems.push("rerank depth must be at least 1".into());
            }
            if r.kind == RerankKind::Remote && r.endpoint.is_none() {
                problems.push("remote reranker needs an endpoint".into());
            }
        }
        if self.detector.kind == DetectorKind::Remote && self.detector.endpoint.is_none() {
            problems.push("remote detector needs an endpoint".into());
        }
        if self.detector.kind == DetectorKind::Marker && self.detector.marker.is_empty() {
            problems.push("detector marker must not be empty".into());
        }

        if self.generators.is_empty() || self.generators.len() > MAX_GENERATORS {
            problems.push(format!(
                "between 1 and {MAX_GENERATORS} generators are required, got {}",
                self.generators.len()
            ));
        }
        let mut names = BTreeSet::new();
        let extra = self.judge.iter().chain(&self.misinfo_generator).map(|g| (g, false));
        for (g, pooled) in self.generators.iter().map(|g| (g, true)).chain(extra) {
            if pooled && !names.insert(g.name.as_str()) {
                problems.push(format!("duplicate generator name {:?}", g.name));
            }
            if let Err(e) = SourceTag::generated(g.name.clone()) {
                problems.push(format!("generator name {:?}: {e}", g.name));
            }
            if g.name.contains(char::is_whitespace) {
                problems.push(format!("generator name {:?} contains whitespace", g.name));
            }
            match g.kind {
                GeneratorKind::Synthetic => match g.accuracy {
                    Some(p) if (0.0..=1.0).contains(&p) => {}
                    _ => problems.push(format!("synthetic generator {:?} needs accuracy in [0, 1]", g.name)),
                },
                GeneratorKind::RemoteChat => {
                    if g.endpoint.is_none() {
                        problems.push(format!("remote generator {:?} needs an endpoint", g.name));
                    }
                }
            }
            if !(0.0..=2.0).contains(&g.temperature) {
                problems.push(format!("generator {:?} temperature must lie in [0, 2]", g.name));
            }
            if !(0.0..=1.0).contains(&g.context_uptake) || !(0.0..=1.0).contains(&g.boilerplate_rate) {
                problems.push(format!("generator {:?} rates must lie in [0, 1]", g.name));
            }
        }
        if !self.schedule.is_empty() {
            for s in &self.schedule {
                if s.from > s.to || s.from == 0 {
                    problems.push(format!("schedule range {}..={} is invalid", s.from, s.to));
                }
                if s.generators.is_empty() {
                    problems.push(format!("schedule range {}..={} lists no generators", s.from, s.to));
                }
                for name in &s.generators {
                    if !names.contains(name.as_str()) {
                        problems.push(format!("schedule names unknown generator {name:?}"));
                    }
                }
            }
            for it in 1..=self.iterations {
                let covering = self.schedule.iter().filter(|s| s.from <= it && it <= s.to).count();
                if covering != 1 {
                    problems.push(format!("iteration {it} is covered by {covering} schedule ranges"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
