//! Question sets, deterministic sampling, and an offline synthetic dataset.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::metrics::AnswerKey;
use crate::seed::{keyed_rng, unit_draw};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read query file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate query_id {0:?}")]
    DuplicateId(String),
    #[error("query {0:?} has no usable gold answer")]
    MissingGolds(String),
    #[error("query file {0} holds no queries")]
    Empty(String),
}

/// A question with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(alias = "id")]
    pub query_id: String,
    pub question: String,
    #[serde(alias = "golds", alias = "gold_answers")]
    pub answers: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, question: impl Into<String>, answers: Vec<String>) -> Self {
        Query {
            query_id: query_id.into(),
            question: question.into(),
            answers,
        }
    }

    pub fn answer_key(&self) -> AnswerKey {
        AnswerKey::new(&self.answers)
    }
}

/// Reads JSONL records `{query_id, question, answers}`.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, DatasetError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| DatasetError::Format {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if q.answer_key().is_empty() {
            return Err(DatasetError::MissingGolds(q.query_id));
        }
        if !seen.insert(q.query_id.clone()) {
            return Err(DatasetError::DuplicateId(q.query_id));
        }
        out.push(q);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(shown));
    }
    Ok(out)
}

pub fn write_queries<W: Write>(mut out: W, queries: &[Query]) -> std::io::Result<()> {
    for q in queries {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded sample of `n` queries (all of them if fewer), sorted by query_id.
/// Membership depends only on the seed and the ids, not on file order.
pub fn sample_queries(mut queries: Vec<Query>, n: usize, seed: u64) -> Vec<Query> {
    if n < queries.len() {
        let mut keyed: Vec<(f64, Query)> = queries
            .into_iter()
            .map(|q| (unit_draw(seed, &["query-sample", &q.query_id]), q))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.query_id.cmp(&b.1.query_id)));
        keyed.truncate(n);
        queries = keyed.into_iter().map(|(_, q)| q).collect();
    }
    queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    queries
}

/// Shape of a generated offline dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthParams {
    pub documents: usize,
    pub queries: usize,
    pub vocabulary: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            documents: 5000,
            queries: 200,
            vocabulary: 5000,
            seed: 0,
        }
    }
}

const CONSONANTS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "br",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_words(n: usize, seed: u64) -> Vec<String> {
    let mut rng = keyed_rng(seed, &["synth-vocabulary"]);
    let mut seen = HashSet::with_capacity(n);
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    CONSONANTS[rng.gen_range(0..CONSONANTS.len())],
                    VOWELS[rng.gen_range(0..VOWELS.len())]
                )
            })
            .collect();
        // keep clear of the English words the pipeline itself uses
        if !matches!(w.as_str(), "a" | "an" | "the" | "no" | "yes") && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn prose(words: Vec<String>) -> String {
    let mut out = String::new();
    for (i, chunk) in words.chunks(12).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let mut s = chunk.join(" ");
        s = capitalize(&s);
        s.push('.');
        out.push_str(&s);
    }
    out
}

/// A human seed corpus plus questions whose answers it contains.
///
/// Background documents draw Zipf-distributed words; every query gets one to
/// three relevant documents mentioning most of its terms and its answer.
pub fn synthetic_dataset(params: SynthParams) -> (Vec<Document>, Vec<Query>) {
    let seed = params.seed;
    let vocab = pseudo_words(params.vocabulary.max(100), seed);
    let weights: Vec<f64> = (0..vocab.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    let mut rng = keyed_rng(seed, &["synth-dataset"]);
    let mid = vocab.len() / 10..vocab.len();

    let mut queries = Vec::with_capacity(params.queries);
    let mut relevant: Vec<(usize, Vec<String>, String)> = Vec::new();
    for qi in 0..params.queries {
        let terms: Vec<String> = (0..rng.gen_range(4..=6))
            .map(|_| vocab[rng.gen_range(mid.clone())].clone())
            .collect();
        let answer = (0..rng.gen_range(1..=2))
            .map(|_| capitalize(&vocab[rng.gen_range(mid.clone())]))
            .collect::<Vec<_>>()
            .join(" ");
        let query_id = format!("q{qi:04}");
        let question = format!("{}?", terms.join(" "));
        for _ in 0..rng.gen_range(1..=3) {
            relevant.push((qi, terms.clone(), answer.clone()));
        }
        queries.push(Query::new(query_id, question, vec![answer]));
    }

    let total = params.documents.max(relevant.len());
    let mut slots: Vec<Option<usize>> = (0..total).map(|_| None).collect();
    let mut positions: Vec<usize> = (0..total).collect();
    positions.shuffle(&mut rng);
    for (k, pos) in positions.iter().take(relevant.len()).enumerate() {
        slots[*pos] = Some(k);
    }

    let docs = slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            let len = rng.gen_range(60..=120);
            let mut words: Vec<String> = (0..len).map(|_| vocab[zipf.sample(&mut rng)].clone()).collect();
            if let Some(k) = slot {
                let (_, terms, answer) = &relevant[k];
                let keep = rng.gen_range(terms.len() / 2 + 1..=terms.len());
                let mut chosen = terms.clone();
                chosen.shuffle(&mut rng);
                for t in chosen.into_iter().take(keep) {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, t);
                }
                let at = rng.gen_range(1..=words.len());
                words.insert(at, answer.clone());
            }
            Document::human(format!("doc{i:05}"), prose(words)).expect("non-empty synthetic document")
        })
        .collect();
    (docs, queries)
}
