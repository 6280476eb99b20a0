//! R(q, D): sparse and dense retrieval over the evolving corpus.

mod bm25;
mod dense;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::http::HttpError;

pub use bm25::{Bm25Params, InvertedIndex, Posting};
pub use dense::{
    cosine, DenseRetriever, Embedder, HashedEmbedder, HttpEmbedder, VectorIndex,
    HASHED_EMBEDDING_DIM,
};
pub use tokenize::{tokenize, TokenStream};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("doc_id {0:?} is already indexed")]
    AlreadyIndexed(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding for {0:?} has non-finite components")]
    NonFinite(String),
    #[error("embedding service returned {got} vectors for {expected} inputs")]
    BatchSize { expected: usize, got: usize },
    #[error("embedding service failed: {0}")]
    Embedding(#[from] HttpError),
}

impl RetrievalError {
    /// Transient service failures; everything else is a configuration or usage error.
    pub fn is_retryable(&self) -> bool {
        matches!(self, RetrievalError::Embedding(e) if e.is_retryable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordered result for one query at one iteration. Ranks are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub iteration: u32,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Assigns consecutive ranks to `scored`, which must already be in rank order.
    pub fn new(query_id: impl Into<String>, iteration: u32, scored: Vec<ScoredDoc>) -> Self {
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, s)| RankedEntry {
                doc_id: s.doc_id,
                score: s.score,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            iteration,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Ranks consecutive from 1 and doc_ids distinct. Scores are not checked
    /// because a reranked list carries the reranker's order.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .enumerate()
            .all(|(i, e)| e.rank == i + 1 && seen.insert(e.doc_id.as_str()))
    }
}

/// Sorts by score descending, doc_id ascending on ties, and keeps `k`.
pub(crate) fn top_k(mut scored: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    scored.truncate(k);
    scored
}

/// A searchable index that is extended at every iteration barrier.
pub trait Retriever: Send + Sync {
    fn index_documents(&mut self, docs: &[Document]) -> Result<(), RetrievalError>;

    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError>;

    fn doc_count(&self) -> usize;
}

impl Retriever for InvertedIndex {
    fn index_documents(&mut self, docs: &[Document]) -> Result<(), RetrievalError> {
        self.add(docs)
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        self.search(query, k)
    }

    fn doc_count(&self) -> usize {
        self.doc_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_tie_breaks_by_id() {
        let s = |id: &str, score| ScoredDoc {
            doc_id: id.into(),
            score,
        };
        let out = top_k(vec![s("b", 1.0), s("c", 2.0), s("a", 1.0)], 2);
        assert_eq!(out, vec![s("c", 2.0), s("a", 1.0)]);
    }

    #[test]
    fn ranked_list_numbering() {
        let list = RankedList::new(
            "q",
            3,
            vec![
                ScoredDoc { doc_id: "x".into(), score: 2.0 },
                ScoredDoc { doc_id: "y".into(), score: 1.0 },
            ],
        );
        assert_eq!(list.entries[1].rank, 2);
        assert!(list.is_well_formed());
        assert_eq!(list.top(5).len(), 2);
    }
}
