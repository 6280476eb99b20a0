//! Context selection strategies applied after retrieval: keep only documents a
//! detector labels human, or greedily drop documents until the set's Self-BLEU
//! falls under a threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusSnapshot;
use crate::http::{EndpointConfig, HttpError, JsonClient};
use crate::metrics::self_bleu_tokens;
use crate::retrieval::{tokenize, RankedEntry, RankedList};

pub const DEFAULT_DIVERSITY_THRESHOLD: f64 = 0.4;
pub const CONTEXT_WINDOW: usize = 5;
const SELF_BLEU_ORDER: usize = 3;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("candidate {0:?} is not in the corpus")]
    UnknownDoc(String),
    #[error("detector returned {got} labels for {expected} texts")]
    LabelCount { expected: usize, got: usize },
    #[error("detector failed: {0}")]
    Detector(#[from] HttpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFlag {
    /// Fewer human-labelled documents than wanted in the whole candidate list.
    Shortfall,
    /// Candidates ran out before the Self-BLEU threshold was met.
    Exhausted,
    /// Fewer candidates than the context window.
    ShortPool,
    /// Detector unavailable; unfiltered top documents were used.
    DetectorFallback,
}

impl FilterFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterFlag::Shortfall => "shortfall",
            FilterFlag::Exhausted => "exhausted",
            FilterFlag::ShortPool => "short_pool",
            FilterFlag::DetectorFallback => "detector_fallback",
        }
    }
}

/// Chosen context documents, in retrieval order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSelection {
    pub entries: Vec<RankedEntry>,
    pub flags: Vec<FilterFlag>,
    /// Documents dropped by the diversity loop.
    pub removals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
}

impl ContextSelection {
    pub fn top(candidates: &RankedList, want: usize) -> Self {
        ContextSelection {
            entries: candidates.top(want).to_vec(),
            flags: Vec::new(),
            removals: 0,
            self_bleu: None,
        }
    }

    pub fn has_flag(&self, flag: FilterFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct DetectLabel {
    label: String,
    confidence: f64,
}

fn label_is_generated(label: &str) -> Option<bool> {
    match label.to_ascii_lowercase().as_str() {
        "human" | "real" | "label_0" => Some(false),
        "generated" | "machine" | "ai" | "llm" | "chatgpt" | "fake" | "label_1" => Some(true),
        _ => None,
    }
}

pub enum DetectorBackend {
    /// Flags any text containing the synthetic style marker.
    MarkerStub { marker: String },
    RemoteClassifier { client: JsonClient, batch_size: usize },
}

impl DetectorBackend {
    pub const THRESHOLD: f64 = 0.5;

    pub fn marker(marker: impl Into<String>) -> Self {
        DetectorBackend::MarkerStub {
            marker: marker.into(),
        }
    }

    pub fn remote(config: EndpointConfig, batch_size: usize) -> Result<Self, HttpError> {
        Ok(DetectorBackend::RemoteClassifier {
            client: JsonClient::new(config)?,
            batch_size: batch_size.max(1),
        })
    }

    /// `true` marks a text as generated.
    pub fn classify(&self, texts: &[&str]) -> Result<Vec<bool>, FilterError> {
        match self {
            DetectorBackend::MarkerStub { marker } => {
                Ok(texts.iter().map(|t| t.contains(marker.as_str())).collect())
            }
            DetectorBackend::RemoteClassifier { client, batch_size } => {
                let mut out = Vec::with_capacity(texts.len());
                for chunk in texts.chunks(*batch_size) {
                    let labels: Vec<DetectLabel> = client.post(&DetectRequest { texts: chunk })?;
                    if labels.len() != chunk.len() {
                        return Err(FilterError::LabelCount {
                            expected: chunk.len(),
                            got: labels.len(),
                        });
                    }
                    out.extend(labels.into_iter().map(|l| {
                        // confidence belongs to the returned label
                        match label_is_generated(&l.label) {
                            Some(true) => l.confidence >= Self::THRESHOLD,
                            Some(false) => l.confidence < Self::THRESHOLD,
                            None => false,
                        }
                    }));
                }
                Ok(out)
            }
        }
    }

    fn scan_chunk(&self) -> usize {
        match self {
            DetectorBackend::MarkerStub { .. } => usize::MAX,
            DetectorBackend::RemoteClassifier { batch_size, .. } => *batch_size,
        }
    }
}

fn text_of<'a>(corpus: &'a CorpusSnapshot, doc_id: &str) -> Result<&'a str, FilterError> {
    corpus
        .get(doc_id)
        .map(|d| d.text.as_str())
        .ok_or_else(|| FilterError::UnknownDoc(doc_id.to_string()))
}

/// Keeps the first `want` documents the detector labels human, scanning the
/// whole candidate list if needed. A detector failure falls back to the
/// unfiltered top `want` with [`FilterFlag::DetectorFallback`].
pub fn source_filter(
    candidates: &RankedList,
    detector: &DetectorBackend,
    corpus: &CorpusSnapshot,
    want: usize,
) -> Result<ContextSelection, FilterError> {
    let mut kept = Vec::with_capacity(want);
    let chunk = detector.scan_chunk().max(1);
    for block in candidates.entries.chunks(chunk) {
        let texts = block
            .iter()
            .map(|e| text_of(corpus, &e.doc_id))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = match detector.classify(&texts) {
            Ok(labels) => labels,
            Err(FilterError::UnknownDoc(id)) => return Err(FilterError::UnknownDoc(id)),
            Err(e) => {
                tracing::warn!(query = %candidates.query_id, error = %e, "detector failed, using unfiltered contexts");
                let mut sel = ContextSelection::top(candidates, want);
                sel.flags.push(FilterFlag::DetectorFallback);
                return Ok(sel);
            }
        };
        for (entry, generated) in block.iter().zip(labels) {
            if !generated {
                kept.push(entry.clone());
                if kept.len() == want {
                    return Ok(ContextSelection {
                        entries: kept,
                        flags: Vec::new(),
                        removals: 0,
                        self_bleu: None,
                    });
                }
            }
        }
    }
    Ok(ContextSelection {
        entries: kept,
        flags: vec![FilterFlag::Shortfall],
        removals: 0,
        self_bleu: None,
    })
}

/// Greedy Self-BLEU reduction over a sliding candidate pool.
///
/// Starting from the top `window`, while the set's 3-gram Self-BLEU exceeds
/// `threshold` and unused candidates remain: drop the member whose removal
/// leaves the lowest-scoring subset (ties drop the worst-ranked member) and
/// append the next candidate. If the pool runs out, the lowest-scoring set seen
/// is returned with [`FilterFlag::Exhausted`].
pub fn diversity_filter(
    candidates: &RankedList,
    corpus: &CorpusSnapshot,
    threshold: f64,
    window: usize,
) -> Result<ContextSelection, FilterError> {
    let tokens = candidates
        .entries
        .iter()
        .map(|e| text_of(corpus, &e.doc_id).map(|t| tokenize(t).tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let score = |set: &[usize]| -> f64 {
        let docs: Vec<Vec<String>> = set.iter().map(|&i| tokens[i].clone()).collect();
        self_bleu_tokens(&docs, SELF_BLEU_ORDER).unwrap_or(0.0)
    };
    let pick = |set: &[usize]| -> Vec<RankedEntry> {
        set.iter().map(|&i| candidates.entries[i].clone()).collect()
    };

    if candidates.len() < window.max(1) {
        let set: Vec<usize> = (0..candidates.len()).collect();
        return Ok(ContextSelection {
            entries: pick(&set),
            flags: vec![FilterFlag::ShortPool],
            removals: 0,
            self_bleu: (set.len() >= 2).then(|| score(&set)),
        });
    }

    let mut set: Vec<usize> = (0..window).collect();
    let mut next = window;
    let mut removals = 0;
    let mut current = score(&set);
    let mut best = (current, set.clone());
    while current > threshold && next < candidates.len() {
        // drop the member whose absence minimises the remaining score;
        // iterating from the worst rank keeps the worst-ranked member on ties
        let mut drop_pos = set.len() - 1;
        let mut drop_score = f64::INFINITY;
        for pos in (0..set.len()).rev() {
            let subset: Vec<usize> = set
                .iter()
                .enumerate()
                .filter(|(p, _)| *p != pos)
                .map(|(_, &i)| i)
                .collect();
            let s = score(&subset);
            if s < drop_score {
                drop_score = s;
                drop_pos = pos;
            }
        }
        set.remove(drop_pos);
        set.push(next);
        next += 1;
        removals += 1;
        current = score(&set);
        if current < best.0 {
            best = (current, set.clone());
        }
    }
    if current <= threshold {
        return Ok(ContextSelection {
            entries: pick(&set),
            flags: Vec::new(),
            removals,
            self_bleu: Some(current),
        });
    }
    Ok(ContextSelection {
        entries: pick(&best.1),
        flags: vec![FilterFlag::Exhausted],
        removals,
        self_bleu: Some(best.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::retrieval::ScoredDoc;

    const MARK: &str = "\u{2063}";

    fn setup(docs: &[(&str, &str)]) -> (CorpusSnapshot, RankedList) {
        let snap = CorpusSnapshot::from_seed(
            docs.iter().map(|(id, t)| Document::human(*id, *t).unwrap()).collect(),
        )
        .unwrap();
        let list = RankedList::new(
            "q",
            1,
            docs.iter()
                .enumerate()
                .map(|(i, (id, _))| ScoredDoc { doc_id: id.to_string(), score: 100.0 - i as f64 })
                .collect(),
        );
        (snap, list)
    }

    fn ranks(sel: &ContextSelection) -> Vec<usize> {
        sel.entries.iter().map(|e| e.rank).collect()
    }

    #[test]
    fn source_filter_scan_rule() {
        let labels = ["H", "L", "H", "H", "L", "H", "H"];
        let docs: Vec<(String, String)> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("d{i}"), if *l == "L" { format!("gen {i}{MARK}") } else { format!("human {i}") }))
            .collect();
        let refs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let (c, l) = setup(&refs);
        let sel = source_filter(&l, &DetectorBackend::marker(MARK), &c, 5).unwrap();
        assert_eq!(ranks(&sel), [1, 3, 4, 6, 7]);
        assert!(sel.flags.is_empty());
    }

    #[test]
    fn source_filter_shortfall() {
        let docs: Vec<(String, String)> = (0..100)
            .map(|i| (format!("d{i}"), if i % 40 == 5 { format!("h{i}") } else { format!("g{i}{MARK}") }))
            .collect();
        let refs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let (c, l) = setup(&refs);
        let sel = source_filter(&l, &DetectorBackend::marker(MARK), &c, 5).unwrap();
        assert_eq!(ranks(&sel), [6, 46, 86]);
        assert!(sel.has_flag(FilterFlag::Shortfall));
    }

    #[test]
    fn source_filter_all_human_is_identity() {
        let (c, l) = setup(&[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4"), ("e", "5"), ("f", "6")]);
        let sel = source_filter(&l, &DetectorBackend::marker(MARK), &c, 5).unwrap();
        assert_eq!(sel.entries, l.top(5));
    }

    #[test]
    fn source_filter_detector_failure_falls_back() {
        let mut server = mockito::Server::new();
        let _m = server.mock("POST", "/").with_status(500).create();
        let mut cfg = EndpointConfig::new(server.url());
        cfg.retries = 1;
        cfg.backoff_ms = 1;
        let det = DetectorBackend::remote(cfg, 16).unwrap();
        let (c, l) = setup(&[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4"), ("e", "5"), ("f", "6")]);
        let sel = source_filter(&l, &det, &c, 5).unwrap();
        assert_eq!(sel.entries, l.top(5));
        assert!(sel.has_flag(FilterFlag::DetectorFallback));
    }

    #[test]
    fn remote_detector_protocol() {
        let mut server = mockito::Server::new();
        let m = server
            .mock("POST", "/")
            .match_body(mockito::Matcher::Json(serde_json::json!({"texts": ["1", "2", "3"]})))
            .with_body(r#"[{"label":"Human","confidence":0.9},{"label":"ChatGPT","confidence":0.8},{"label":"Human","confidence":0.3}]"#)
            .create();
        let det = DetectorBackend::remote(EndpointConfig::new(server.url()), 16).unwrap();
        assert_eq!(det.classify(&["1", "2", "3"]).unwrap(), [false, true, true]);
        m.assert();
    }

    #[test]
    fn diversity_filter_keeps_diverse_set() {
        let (c, l) = setup(&[
            ("a", "alpha beta gamma"),
            ("b", "delta epsilon zeta"),
            ("c", "eta theta iota"),
            ("d", "kappa lambda mu"),
            ("e", "nu xi omicron"),
            ("f", "alpha beta gamma"),
        ]);
        let sel = diversity_filter(&l, &c, 0.4, 5).unwrap();
        assert_eq!(ranks(&sel), [1, 2, 3, 4, 5]);
        assert_eq!(sel.removals, 0);
        assert_eq!(sel.self_bleu, Some(0.0));
    }

    #[test]
    fn diversity_filter_exhaustion() {
        let docs: Vec<(String, &str)> = (0..7).map(|i| (format!("d{i}"), "same words every time")).collect();
        let refs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let (c, l) = setup(&refs);
        let sel = diversity_filter(&l, &c, 0.4, 5).unwrap();
        assert!(sel.has_flag(FilterFlag::Exhausted));
        assert_eq!(sel.removals, 2);
        assert_eq!(sel.entries.len(), 5);
    }

    #[test]
    fn diversity_filter_short_pool() {
        let (c, l) = setup(&[("a", "x y z"), ("b", "x y z")]);
        let sel = diversity_filter(&l, &c, 0.4, 5).unwrap();
        assert!(sel.has_flag(FilterFlag::ShortPool));
        assert_eq!(sel.entries.len(), 2);
    }
}
