use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{top_k, tokenize, RetrievalError, ScoredDoc};
use crate::corpus::Document;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Internal document number (insertion order).
    pub doc: u32,
    pub term_frequency: u32,
}

/// Inverted index with append-only updates.
///
/// Appending a batch yields exactly the structure a fresh build over the
/// concatenated documents would have: postings stay sorted by internal number
/// and all statistics are plain sums.
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    lookup: HashMap<String, u32>,
    total_length: u64,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(params: Bm25Params) -> Self {
        InvertedIndex {
            params,
            ..Self::default()
        }
    }

    pub fn build(docs: &[Document]) -> Result<Self, RetrievalError> {
        let mut index = Self::new();
        index.add(docs)?;
        Ok(index)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn total_length(&self) -> u64 {
        self.total_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).map(|&i| self.doc_lengths[i as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.lookup.contains_key(doc_id)
    }

    pub fn average_length(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_ids.len() as f64
        }
    }

    /// Indexes a batch. The whole batch is rejected if any id is already present.
    pub fn add(&mut self, docs: &[Document]) -> Result<(), RetrievalError> {
        let mut batch = std::collections::HashSet::with_capacity(docs.len());
        for doc in docs {
            if self.lookup.contains_key(&doc.doc_id) || !batch.insert(doc.doc_id.as_str()) {
                return Err(RetrievalError::AlreadyIndexed(doc.doc_id.clone()));
            }
        }
        for doc in docs {
            self.add_one(&doc.doc_id, &doc.text);
        }
        Ok(())
    }

    fn add_one(&mut self, doc_id: &str, text: &str) {
        let internal = self.doc_ids.len() as u32;
        let tokens = tokenize(text);
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in tokens.iter() {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (term, term_frequency) in tf {
            self.postings.entry(term.to_string()).or_default().push(Posting {
                doc: internal,
                term_frequency,
            });
        }
        self.doc_ids.push(doc_id.to_string());
        self.doc_lengths.push(tokens.len() as u32);
        self.lookup.insert(doc_id.to_string(), internal);
        self.total_length += tokens.len() as u64;
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, df: usize) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` documents by BM25. Each distinct query term contributes once;
    /// documents scoring zero are not returned.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let mut terms: Vec<String> = Vec::new();
        for t in tokenize(query).tokens {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        if terms.is_empty() || self.doc_ids.is_empty() {
            return Ok(Vec::new());
        }
        let avgdl = self.average_length();
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.doc_ids.len()];
        let mut touched = Vec::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let tf = p.term_frequency as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let slot = &mut scores[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                *slot += idf * tf / (tf + k1 * (1.0 - b + b * norm));
            }
        }
        let scored = touched
            .into_iter()
            .filter(|&d| scores[d as usize] > 0.0)
            .map(|d| ScoredDoc {
                doc_id: self.doc_ids[d as usize].clone(),
                score: scores[d as usize],
            })
            .collect();
        Ok(top_k(scored, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::human(id, text).unwrap()
    }

    #[test]
    fn single_add_bookkeeping() {
        let mut index = InvertedIndex::new();
        index.add(&[doc("d0", "cherry")]).unwrap();
        index.add(&[doc("d1", "apple banana")]).unwrap();
        assert_eq!(index.doc_count(), 2);
        assert_eq!(index.total_length(), 3);
        assert_eq!(index.postings("apple"), &[Posting { doc: 1, term_frequency: 1 }]);
        assert_eq!(index.postings("banana").len(), 1);
        assert_eq!(index.doc_length("d1"), Some(2));
    }

    #[test]
    fn readding_rejected_atomically() {
        let mut index = InvertedIndex::build(&[doc("d1", "a")]).unwrap();
        let err = index.add(&[doc("d2", "b"), doc("d1", "c")]).unwrap_err();
        assert!(matches!(err, RetrievalError::AlreadyIndexed(ref id) if id == "d1"));
        assert_eq!(index.doc_count(), 1);
        assert!(!index.contains("d2"));
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut index = InvertedIndex::build(&[doc("d1", "a b")]).unwrap();
        index.add(&[]).unwrap();
        assert_eq!(index.doc_count(), 1);
        assert_eq!(index.total_length(), 2);
    }

    #[test]
    fn hand_evaluated_score() {
        let index =
            InvertedIndex::build(&[doc("d1", "apple banana"), doc("d2", "banana cherry")]).unwrap();
        let hits = index.search("apple", 2).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d1");
        let expected = 2f64.ln() * (1.0 / 2.2);
        assert!((hits[0].score - expected).abs() < 1e-12);
        assert!((hits[0].score - 0.3151).abs() < 1e-4);
    }

    #[test]
    fn absent_term_and_empty_query() {
        let index = InvertedIndex::build(&[doc("d1", "apple banana")]).unwrap();
        assert!(index.search("durian", 5).unwrap().is_empty());
        assert!(index.search("!!!", 5).unwrap().is_empty());
        assert!(matches!(index.search("apple", 0), Err(RetrievalError::ZeroK)));
    }

    #[test]
    fn identical_docs_tie_break_by_id() {
        let index = InvertedIndex::build(&[doc("d_b", "same text"), doc("d_a", "same text")]).unwrap();
        let hits = index.search("same", 2).unwrap();
        assert_eq!(hits[0].doc_id, "d_a");
        assert_eq!(hits[1].doc_id, "d_b");
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn higher_tf_never_scores_lower() {
        // equal lengths, single-term query
        let index = InvertedIndex::build(&[
            doc("one", "x y y y"),
            doc("two", "x x y y"),
            doc("three", "x x x y"),
        ])
        .unwrap();
        let hits = index.search("x", 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["three", "two", "one"]);
    }
}
