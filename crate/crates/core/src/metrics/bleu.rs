use std::collections::HashMap;

use super::MetricsError;
use crate::retrieval::tokenize;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU of `candidate` against `references`: uniform weights over
/// 1..=`max_n` clipped precisions, geometric mean, brevity penalty against the
/// closest reference length (shorter wins ties). No smoothing: any zero
/// precision gives 0.
pub fn sentence_bleu(candidate: &[String], references: &[&[String]], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// Mean BLEU of each document against all the others.
pub fn self_bleu_tokens(docs: &[Vec<String>], max_n: usize) -> Result<f64, MetricsError> {
    if docs.len() < 2 {
        return Err(MetricsError::TooFewDocuments(docs.len()));
    }
    let mut total = 0.0;
    for (i, cand) in docs.iter().enumerate() {
        let refs: Vec<&[String]> = docs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| d.as_slice())
            .collect();
        total += sentence_bleu(cand, &refs, max_n);
    }
    Ok(total / docs.len() as f64)
}

/// Self-BLEU over raw texts, tokenized with the retrieval tokenizer.
pub fn self_bleu<S: AsRef<str>>(docs: &[S], max_n: usize) -> Result<f64, MetricsError> {
    let tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d.as_ref()).tokens).collect();
    self_bleu_tokens(&tokens, max_n)
}
