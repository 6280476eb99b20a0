use crate::retrieval::{tokenize, TokenStream};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation, drop articles.
pub fn normalize_answer(text: &str) -> TokenStream {
    let mut ts = tokenize(text);
    ts.tokens.retain(|t| !ARTICLES.contains(&t.as_str()));
    ts
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Normalized gold answers for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerKey {
    golds: Vec<Vec<String>>,
}

impl AnswerKey {
    pub fn new<S: AsRef<str>>(golds: &[S]) -> Self {
        AnswerKey {
            golds: golds
                .iter()
                .map(|g| normalize_answer(g.as_ref()).tokens)
                .filter(|g| !g.is_empty())
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.golds.is_empty()
    }

    /// Any gold appears as a contiguous run of the normalized text.
    pub fn matches(&self, text: &str) -> bool {
        self.matches_tokens(&normalize_answer(text).tokens)
    }

    pub fn matches_tokens(&self, normalized: &[String]) -> bool {
        self.golds.iter().any(|g| contains_run(normalized, g))
    }

    /// Every token appearing in any gold answer.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.golds.iter().flatten().map(String::as_str)
    }
}

/// 1 iff any normalized gold answer is a contiguous token run of the normalized text.
pub fn em<S: AsRef<str>>(gold_answers: &[S], text: &str) -> u8 {
    AnswerKey::new(gold_answers).matches(text) as u8
}

/// Judge verdict on whether a text supports an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

/// Contains-and-supports conjunction.
pub fn em_llm(contains: u8, verdict: Verdict) -> u8 {
    (contains == 1 && verdict == Verdict::Yes) as u8
}
