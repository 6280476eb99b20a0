//! Measurement: answer grading, retrieval accuracy, source dominance,
//! diversity, transitions, rank tracking, correlation and significance.

mod answer;
mod bleu;
mod ranking;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::{em, em_llm, normalize_answer, AnswerKey, Verdict};
pub use bleu::{self_bleu, self_bleu_tokens, sentence_bleu};
pub use ranking::{
    acc_at_k, context_right_num, dominance_p, first_right_ranks, hits_at_k, source_share,
    transitions, FirstRight,
};
pub use stats::{pearson, significance, Significance, BOOTSTRAP_RESAMPLES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("query {0:?} has no gold answers")]
    MissingGolds(String),
    #[error("doc_id {0:?} does not resolve in the corpus")]
    UnknownDoc(String),
    #[error("self-BLEU needs at least 2 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("query key sets differ")]
    KeyMismatch,
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,
}

/// One graded answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub generator: String,
    pub iteration: u32,
    pub em: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Misinformation runs: containment of the planted false answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_false: Option<u8>,
    /// Misinformation runs: the answer contains and supports the planted false answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm_false: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_false: Option<Verdict>,
    /// A judge reply could not be parsed and defaulted to no.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_parse_failed: bool,
    pub context_right_num: usize,
    pub first_right_any: Option<usize>,
    pub first_right_human: Option<usize>,
}

/// Mean of the present values plus how many were present.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoveredMean {
    pub mean: Option<f64>,
    pub covered: usize,
    pub total: usize,
}

impl CoveredMean {
    pub fn of(values: impl IntoIterator<Item = Option<usize>>) -> Self {
        let (mut sum, mut covered, mut total) = (0usize, 0usize, 0usize);
        for v in values {
            total += 1;
            if let Some(v) = v {
                sum += v;
                covered += 1;
            }
        }
        CoveredMean {
            mean: (covered > 0).then(|| sum as f64 / covered as f64),
            covered,
            total,
        }
    }
}

/// Everything measured at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub config_hash: String,
    pub corpus_version: u64,
    pub corpus_size: usize,
    pub queries: usize,
    pub generators: Vec<String>,
    pub acc_at_5: f64,
    pub acc_at_20: f64,
    pub em_mean: f64,
    pub em_by_generator: BTreeMap<String, f64>,
    pub dominance_p: f64,
    pub human_share_top5: f64,
    pub source_share_top50: BTreeMap<String, f64>,
    pub self_bleu_top5: f64,
    /// Histogram of context-right counts (index 0..=5) split by answer EM.
    pub context_right_em1: [usize; 6],
    pub context_right_em0: [usize; 6],
    pub transitions_01: usize,
    pub transitions_10: usize,
    pub first_right_any: CoveredMean,
    pub first_right_human: CoveredMean,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc5_vs_baseline: Option<Significance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm_false_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_em_em_llm: Option<f64>,
    pub failed_generations: usize,
    pub filter_flags: BTreeMap<String, usize>,
}

impl IterationMetrics {
    pub fn human_share_top50(&self) -> f64 {
        self.source_share_top50.get("human").copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covered_mean_ignores_absent() {
        let m = CoveredMean::of([Some(2), None, Some(4)]);
        assert_eq!(m.mean, Some(3.0));
        assert_eq!((m.covered, m.total), (2, 3));
        assert_eq!(CoveredMean::of([None]).mean, None);
    }
}
