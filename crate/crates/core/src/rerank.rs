//! Optional second-stage reordering of retrieval candidates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusSnapshot;
use crate::http::{EndpointConfig, HttpError, JsonClient};
use crate::retrieval::{tokenize, RankedEntry, RankedList};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("rerank depth must be at least 1")]
    ZeroDepth,
    #[error("candidate {0:?} is not in the corpus")]
    UnknownDoc(String),
    #[error("scorer returned {got} scores for {expected} passages")]
    ScoreCount { expected: usize, got: usize },
    #[error("remote scorer failed: {0}")]
    Remote(#[from] HttpError),
}

/// What to do once a remote scorer has exhausted its retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    AbortIteration,
    PassThrough,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    passages: &'a [&'a str],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreResponse {
    Bare(Vec<f64>),
    Wrapped { scores: Vec<f64> },
}

pub enum RerankBackend {
    /// Fraction of distinct query terms present in the passage.
    LexicalOverlap,
    RemoteScorer { client: JsonClient, batch_size: usize },
}

impl RerankBackend {
    pub fn remote(config: EndpointConfig, batch_size: usize) -> Result<Self, HttpError> {
        Ok(RerankBackend::RemoteScorer {
            client: JsonClient::new(config)?,
            batch_size: batch_size.max(1),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RerankBackend::LexicalOverlap => "lexical_overlap",
            RerankBackend::RemoteScorer { .. } => "remote",
        }
    }

    pub fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, RerankError> {
        match self {
            RerankBackend::LexicalOverlap => {
                let q: HashSet<String> = tokenize(query).tokens.into_iter().collect();
                Ok(passages
                    .iter()
                    .map(|p| {
                        if q.is_empty() {
                            return 0.0;
                        }
                        let d: HashSet<String> = tokenize(p).tokens.into_iter().collect();
                        q.intersection(&d).count() as f64 / q.len() as f64
                    })
                    .collect())
            }
            RerankBackend::RemoteScorer { client, batch_size } => {
                let mut scores = Vec::with_capacity(passages.len());
                for chunk in passages.chunks(*batch_size) {
                    let reply: ScoreResponse = client.post(&ScoreRequest {
                        query,
                        passages: chunk,
                    })?;
                    let batch = match reply {
                        ScoreResponse::Bare(s) | ScoreResponse::Wrapped { scores: s } => s,
                    };
                    if batch.len() != chunk.len() {
                        return Err(RerankError::ScoreCount {
                            expected: chunk.len(),
                            got: batch.len(),
                        });
                    }
                    scores.extend(batch);
                }
                Ok(scores)
            }
        }
    }
}

/// Reorders the first `min(depth, len)` candidates by backend score
/// (descending, original rank on ties) and appends the rest untouched.
pub fn rerank(
    backend: &RerankBackend,
    query: &str,
    candidates: &RankedList,
    depth: usize,
    corpus: &CorpusSnapshot,
) -> Result<RankedList, RerankError> {
    if depth == 0 {
        return Err(RerankError::ZeroDepth);
    }
    let head_len = depth.min(candidates.len());
    let head = &candidates.entries[..head_len];
    let texts = head
        .iter()
        .map(|e| {
            corpus
                .get(&e.doc_id)
                .map(|d| d.text.as_str())
                .ok_or_else(|| RerankError::UnknownDoc(e.doc_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = backend.score(query, &texts)?;
    if scores.len() != head_len {
        return Err(RerankError::ScoreCount {
            expected: head_len,
            got: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..head_len).collect();
    // stable sort keeps the original order among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let entries = order
        .into_iter()
        .map(|i| (head[i].doc_id.clone(), scores[i]))
        .chain(
            candidates.entries[head_len..]
                .iter()
                .map(|e| (e.doc_id.clone(), e.score)),
        )
        .enumerate()
        .map(|(i, (doc_id, score))| RankedEntry {
            doc_id,
            score,
            rank: i + 1,
        })
        .collect();
    Ok(RankedList {
        query_id: candidates.query_id.clone(),
        iteration: candidates.iteration,
        entries,
    })
}
