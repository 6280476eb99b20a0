//! Versioned, append-only document store with provenance.
//!
//! A [`CorpusSnapshot`] is immutable. Adding documents produces a new snapshot
//! that shares every earlier segment with its parent, so keeping one snapshot
//! per iteration costs one pointer per segment rather than a copy of the data.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate doc_id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("empty seed corpus")]
    Empty,
    #[error("doc_id {0:?} already present in the corpus")]
    IdCollision(String),
    #[error("invalid document {id:?}: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("batch mixes iterations or goes backwards: {0}")]
    IterationOrder(String),
}

/// Who wrote a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SourceTag {
    Human,
    Generated(String),
}

impl SourceTag {
    const HUMAN: &'static str = "human";

    pub fn generated(name: impl Into<String>) -> Result<Self, String> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err("generator name must be non-empty".into());
        }
        if name.eq_ignore_ascii_case(Self::HUMAN) {
            return Err(format!("generator name {name:?} is reserved"));
        }
        Ok(SourceTag::Generated(name))
    }

    pub fn is_human(&self) -> bool {
        matches!(self, SourceTag::Human)
    }

    pub fn as_str(&self) -> &str {
        match self {
            SourceTag::Human => Self::HUMAN,
            SourceTag::Generated(name) => name,
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<SourceTag> for String {
    fn from(tag: SourceTag) -> String {
        tag.as_str().to_string()
    }
}

impl TryFrom<String> for SourceTag {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s == Self::HUMAN {
            Ok(SourceTag::Human)
        } else {
            SourceTag::generated(s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub source: SourceTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_query_id: Option<String>,
    pub iteration_added: u32,
}

/// `{generator}-it{iteration}-{query_id}`
pub fn generated_doc_id(generator: &str, iteration: u32, query_id: &str) -> String {
    format!("{generator}-it{iteration}-{query_id}")
}

impl Document {
    pub fn human(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let doc = Document {
            doc_id: doc_id.into(),
            text: text.into(),
            source: SourceTag::Human,
            origin_query_id: None,
            iteration_added: 0,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn generated(
        generator: &str,
        iteration: u32,
        query_id: &str,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let doc_id = generated_doc_id(generator, iteration, query_id);
        let source = SourceTag::generated(generator).map_err(|reason| {
            CorpusError::InvalidDocument {
                id: doc_id.clone(),
                reason,
            }
        })?;
        let doc = Document {
            doc_id,
            text: text.into(),
            source,
            origin_query_id: Some(query_id.to_string()),
            iteration_added: iteration,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidDocument {
            id: self.doc_id.clone(),
            reason: reason.to_string(),
        };
        if self.doc_id.is_empty() {
            return Err(invalid("empty doc_id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid("text is empty after trimming"));
        }
        match &self.source {
            SourceTag::Human => {
                if self.iteration_added != 0 || self.origin_query_id.is_some() {
                    return Err(invalid(
                        "human documents have iteration_added 0 and no origin query",
                    ));
                }
            }
            SourceTag::Generated(name) => {
                if name.trim().is_empty() {
                    return Err(invalid("empty generator name"));
                }
                if self.origin_query_id.is_none() {
                    return Err(invalid("generated document without origin_query_id"));
                }
                if self.iteration_added == 0 {
                    return Err(invalid("generated document with iteration_added 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line: `doc_id`, `text`, optional `title`.
    #[default]
    Jsonl,
    /// Tab-separated `doc_id`, `text`, optional `title`; an `id` header row is skipped.
    Tsv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct SeedRecord {
    doc_id: String,
    text: String,
    #[serde(default)]
    title: Option<String>,
}

fn join_title(title: Option<&str>, text: &str) -> String {
    match title.map(str::trim).filter(|t| !t.is_empty()) {
        Some(title) => format!("{title}\n{text}"),
        None => text.to_string(),
    }
}

#[derive(Debug)]
struct Segment {
    docs: Vec<Document>,
    ids: HashMap<String, usize>,
}

impl Segment {
    fn new(docs: Vec<Document>) -> Self {
        let ids = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        Segment { docs, ids }
    }
}

/// One immutable version of the corpus.
#[derive(Debug, Clone)]
pub struct CorpusSnapshot {
    version: u64,
    segments: Vec<Arc<Segment>>,
    counts: BTreeMap<SourceTag, usize>,
    len: usize,
    max_iteration: u32,
}

impl CorpusSnapshot {
    /// Builds version 0 from human documents already in memory.
    pub fn from_seed(docs: Vec<Document>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate()?;
            if !doc.source.is_human() {
                return Err(CorpusError::InvalidDocument {
                    id: doc.doc_id.clone(),
                    reason: "seed corpus must be human-authored".into(),
                });
            }
            if seen.insert(doc.doc_id.as_str(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: doc.doc_id.clone(),
                    line: i + 1,
                });
            }
        }
        let len = docs.len();
        let mut counts = BTreeMap::new();
        counts.insert(SourceTag::Human, len);
        Ok(CorpusSnapshot {
            version: 0,
            segments: vec![Arc::new(Segment::new(docs))],
            counts,
            len,
            max_iteration: 0,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Largest `iteration_added` among the stored documents.
    pub fn max_iteration(&self) -> u32 {
        self.max_iteration
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.segments
            .iter()
            .find_map(|seg| seg.ids.get(doc_id).map(|&i| &seg.docs[i]))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.get(doc_id).is_some()
    }

    /// Documents in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.segments.iter().flat_map(|seg| seg.docs.iter())
    }

    /// Documents added by the most recent mutation (the seed set for version 0).
    pub fn latest_additions(&self) -> &[Document] {
        self.segments.last().map(|s| s.docs.as_slice()).unwrap_or(&[])
    }

    pub fn counts_by_source(&self) -> &BTreeMap<SourceTag, usize> {
        &self.counts
    }

    /// Appends a batch. Returns `self` unchanged (same version) for an empty batch.
    pub fn add_documents(&self, docs: Vec<Document>) -> Result<CorpusSnapshot, CorpusError> {
        if docs.is_empty() {
            return Ok(self.clone());
        }
        let iteration = docs[0].iteration_added;
        if iteration < self.max_iteration {
            return Err(CorpusError::IterationOrder(format!(
                "iteration {iteration} is older than the snapshot's {}",
                self.max_iteration
            )));
        }
        let mut batch_ids = HashMap::with_capacity(docs.len());
        for doc in &docs {
            doc.validate()?;
            if doc.source.is_human() {
                return Err(CorpusError::InvalidDocument {
                    id: doc.doc_id.clone(),
                    reason: "only generated documents may be added after ingestion".into(),
                });
            }
            if doc.iteration_added != iteration {
                return Err(CorpusError::IterationOrder(format!(
                    "batch contains iterations {iteration} and {}",
                    doc.iteration_added
                )));
            }
            if self.contains(&doc.doc_id) || batch_ids.insert(doc.doc_id.as_str(), ()).is_some() {
                return Err(CorpusError::IdCollision(doc.doc_id.clone()));
            }
        }
        let mut counts = self.counts.clone();
        for doc in &docs {
            *counts.entry(doc.source.clone()).or_insert(0) += 1;
        }
        let mut segments = self.segments.clone();
        let added = docs.len();
        segments.push(Arc::new(Segment::new(docs)));
        Ok(CorpusSnapshot {
            version: self.version + 1,
            segments,
            counts,
            len: self.len + added,
            max_iteration: iteration,
        })
    }

    /// Per-source document counts; sums to [`len`](Self::len).
    pub fn provenance_stats(&self) -> BTreeMap<SourceTag, usize> {
        self.counts.clone()
    }

    /// Writes every document as one JSON line with full provenance.
    pub fn export_jsonl<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_documents_jsonl(self.iter(), out)
    }
}

pub fn write_documents_jsonl<'a, W: Write>(
    docs: impl IntoIterator<Item = &'a Document>,
    mut out: W,
) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads documents in the export format (the inverse of [`write_documents_jsonl`]).
pub fn read_documents_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Loads the human-authored seed corpus as snapshot version 0.
pub fn ingest_seed_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusSnapshot, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let records = match format {
        CorpusFormat::Jsonl => parse_jsonl(reader, path)?,
        CorpusFormat::Tsv => parse_tsv(reader)?,
    };
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(records.len());
    let mut docs = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if seen.insert(rec.doc_id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateId { id: rec.doc_id, line });
        }
        let text = join_title(rec.title.as_deref(), &rec.text);
        let doc = Document::human(rec.doc_id, text).map_err(|e| CorpusError::Format {
            line,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    CorpusSnapshot::from_seed(docs)
}

fn parse_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(usize, SeedRecord)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SeedRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<(usize, SeedRecord)>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| CorpusError::Format {
            line,
            message: e.to_string(),
        })?;
        if i == 0 && row.get(0) == Some("id") {
            continue;
        }
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let (Some(doc_id), Some(text)) = (row.get(0), row.get(1)) else {
            return Err(CorpusError::Format {
                line,
                message: "expected at least doc_id and text columns".into(),
            });
        };
        out.push((
            line,
            SeedRecord {
                doc_id: doc_id.to_string(),
                text: text.to_string(),
                title: row.get(2).map(str::to_string),
            },
        ));
    }
    Ok(out)
}
