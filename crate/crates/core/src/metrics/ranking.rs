use std::collections::BTreeMap;

use super::{AnswerKey, MetricsError};
use crate::corpus::{CorpusSnapshot, Document, SourceTag};
use crate::retrieval::RankedList;

fn resolve<'a>(corpus: &'a CorpusSnapshot, doc_id: &str) -> Result<&'a Document, MetricsError> {
    corpus
        .get(doc_id)
        .ok_or_else(|| MetricsError::UnknownDoc(doc_id.to_string()))
}

fn key_for<'a>(
    golds: &'a BTreeMap<String, AnswerKey>,
    query_id: &str,
) -> Result<&'a AnswerKey, MetricsError> {
    golds
        .get(query_id)
        .filter(|k| !k.is_empty())
        .ok_or_else(|| MetricsError::MissingGolds(query_id.to_string()))
}

/// Per-query hit: some top-`k` document contains a gold answer.
pub fn hits_at_k(
    ranked: &[RankedList],
    golds: &BTreeMap<String, AnswerKey>,
    k: usize,
    corpus: &CorpusSnapshot,
) -> Result<BTreeMap<String, u8>, MetricsError> {
    let mut out = BTreeMap::new();
    for list in ranked {
        let key = key_for(golds, &list.query_id)?;
        let mut hit = 0;
        for e in list.top(k) {
            if key.matches(&resolve(corpus, &e.doc_id)?.text) {
                hit = 1;
                break;
            }
        }
        out.insert(list.query_id.clone(), hit);
    }
    Ok(out)
}

/// Percentage of queries with a gold answer in the top `k`.
pub fn acc_at_k(
    ranked: &[RankedList],
    golds: &BTreeMap<String, AnswerKey>,
    k: usize,
    corpus: &CorpusSnapshot,
) -> Result<f64, MetricsError> {
    let hits = hits_at_k(ranked, golds, k, corpus)?;
    if hits.is_empty() {
        return Ok(0.0);
    }
    Ok(hits.values().map(|&h| h as f64).sum::<f64>() / hits.len() as f64 * 100.0)
}

/// Pooled share of generated documents among all top-`k` slots, in percent.
pub fn dominance_p(
    ranked: &[RankedList],
    corpus: &CorpusSnapshot,
    k: usize,
) -> Result<f64, MetricsError> {
    let (mut generated, mut total) = (0usize, 0usize);
    for list in ranked {
        for e in list.top(k) {
            if !resolve(corpus, &e.doc_id)?.source.is_human() {
                generated += 1;
            }
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        generated as f64 / total as f64 * 100.0
    })
}

/// Per-source share of pooled top-`top_n` slots, in percent. Lists shorter than
/// `top_n` contribute only the slots they have.
pub fn source_share(
    ranked: &[RankedList],
    corpus: &CorpusSnapshot,
    top_n: usize,
) -> Result<BTreeMap<SourceTag, f64>, MetricsError> {
    let mut counts: BTreeMap<SourceTag, usize> = BTreeMap::new();
    let mut total = 0usize;
    for list in ranked {
        for e in list.top(top_n) {
            *counts
                .entry(resolve(corpus, &e.doc_id)?.source.clone())
                .or_insert(0) += 1;
            total += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / total as f64 * 100.0))
        .collect())
}

/// Number of the top five documents containing a gold answer.
pub fn context_right_num(
    ranked: &RankedList,
    key: &AnswerKey,
    corpus: &CorpusSnapshot,
) -> Result<usize, MetricsError> {
    let mut n = 0;
    for e in ranked.top(5) {
        if key.matches(&resolve(corpus, &e.doc_id)?.text) {
            n += 1;
        }
    }
    Ok(n)
}

/// Rank of the first correct document from any source and from human sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct FirstRight {
    pub any: Option<usize>,
    pub human: Option<usize>,
}

pub fn first_right_ranks(
    ranked: &RankedList,
    key: &AnswerKey,
    corpus: &CorpusSnapshot,
    horizon: Option<usize>,
) -> Result<FirstRight, MetricsError> {
    let mut out = FirstRight::default();
    for e in ranked.top(horizon.unwrap_or(usize::MAX)) {
        let doc = resolve(corpus, &e.doc_id)?;
        if !key.matches(&doc.text) {
            continue;
        }
        out.any.get_or_insert(e.rank);
        if doc.source.is_human() {
            out.human = Some(e.rank);
            break;
        }
    }
    Ok(out)
}

/// `(0 -> 1 count, 1 -> 0 count)` between two EM maps over the same keys.
pub fn transitions(
    prev: &BTreeMap<String, u8>,
    next: &BTreeMap<String, u8>,
) -> Result<(usize, usize), MetricsError> {
    if prev.len() != next.len() || prev.keys().zip(next.keys()).any(|(a, b)| a != b) {
        return Err(MetricsError::KeyMismatch);
    }
    let mut up = 0;
    let mut down = 0;
    for (a, b) in prev.values().zip(next.values()) {
        match (*a > 0, *b > 0) {
            (false, true) => up += 1,
            (true, false) => down += 1,
            _ => {}
        }
    }
    Ok((up, down))
}
