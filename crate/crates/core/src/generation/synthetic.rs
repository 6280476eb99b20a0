//! Deterministic offline generator.
//!
//! Whether it "knows" a query's answer is fixed per (seed, generator, query) and
//! drawn with probability `accuracy`. Documents are about 100 words: the question
//! echoed, filler words (its own vocabulary, or spans copied from the contexts
//! when it has any), optionally the answer, and an invisible style marker.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GenerationError, GenerationRequest, Generator, Task};
use crate::metrics::AnswerKey;
use crate::retrieval::tokenize;
use crate::seed::{keyed_rng, unit_draw};

/// INVISIBLE SEPARATOR: survives cleaning and tokenizes to nothing.
pub const DEFAULT_STYLE_MARKER: &str = "\u{2063}";

const TARGET_WORDS: usize = 100;
const MIN_FILLER: usize = 24;
const VOCAB_PER_GENERATOR: usize = 48;

const VOCABULARY: &[&str] = &[
    "history", "known", "region", "early", "period", "several", "became", "later", "during",
    "century", "widely", "considered", "important", "local", "people", "first", "major", "work",
    "including", "following", "public", "national", "original", "development", "modern",
    "significant", "various", "produced", "released", "noted", "remains", "built", "area",
    "popular", "designed", "served", "group", "international", "traditional", "based", "early",
    "role", "events", "large", "series", "described", "commonly", "primary", "recognized",
    "founded", "established", "received", "influence", "part", "notable", "shortly", "across",
    "records", "according", "often", "culture", "form", "style", "result", "reported",
    "second", "team", "system", "name", "named", "central", "source", "sources", "study",
    "position", "began", "career", "times", "record", "community", "official", "members",
    "general", "common", "field", "result", "success", "subject", "process", "increase",
    "period", "support", "changes", "main", "series", "material", "structure", "service",
];

const BOILERPLATE: &[&str] = &[
    "As an AI language model,",
    "According to my knowledge,",
    "Here is a background document:",
    "Based on my knowledge,",
    "Sure, here is a background document:",
];

#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    name: String,
    accuracy: f64,
    seed: u64,
    marker: String,
    echo_query: bool,
    context_uptake: f64,
    boilerplate_rate: f64,
    vocabulary: Vec<&'static str>,
}

impl SyntheticGenerator {
    /// `accuracy` is clamped to [0, 1].
    pub fn new(name: impl Into<String>, accuracy: f64, seed: u64) -> Self {
        let name = name.into();
        let mut vocabulary: Vec<&'static str> = VOCABULARY.to_vec();
        vocabulary.sort_unstable();
        vocabulary.dedup();
        vocabulary.shuffle(&mut keyed_rng(seed, &["synthetic-vocab", &name]));
        vocabulary.truncate(VOCAB_PER_GENERATOR);
        SyntheticGenerator {
            name,
            accuracy: accuracy.clamp(0.0, 1.0),
            seed,
            marker: DEFAULT_STYLE_MARKER.to_string(),
            echo_query: true,
            context_uptake: 0.5,
            boilerplate_rate: 0.2,
            vocabulary,
        }
    }

    pub fn with_marker(mut self, marker: impl Into<String>) -> Self {
        self.marker = marker.into();
        self
    }

    /// Repeat the question verbatim (twice) instead of scattering its terms once.
    pub fn with_echo_query(mut self, echo: bool) -> Self {
        self.echo_query = echo;
        self
    }

    /// Probability of adopting an answer it does not know when the contexts show it.
    pub fn with_context_uptake(mut self, uptake: f64) -> Self {
        self.context_uptake = uptake.clamp(0.0, 1.0);
        self
    }

    pub fn with_boilerplate_rate(mut self, rate: f64) -> Self {
        self.boilerplate_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn knows(&self, query_id: &str) -> bool {
        unit_draw(self.seed, &["synthetic-knows", &self.name, query_id]) < self.accuracy
    }

    fn adopts_from_context(&self, query_id: &str, iteration: u32) -> bool {
        let it = iteration.to_string();
        unit_draw(self.seed, &["synthetic-uptake", &self.name, query_id, &it]) < self.context_uptake
    }

    fn rng(&self, request: &GenerationRequest<'_>, tag: &str) -> ChaCha8Rng {
        keyed_rng(
            self.seed,
            &[
                "synthetic-text",
                tag,
                &self.name,
                &request.query.query_id,
                &request.iteration.to_string(),
                &request.attempt.to_string(),
            ],
        )
    }

    fn compose(
        &self,
        request: &GenerationRequest<'_>,
        answer: Option<&str>,
        contexts: Option<&[String]>,
        banned: &HashSet<String>,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let question: Vec<String> = tokenize(&request.query.question)
            .tokens
            .into_iter()
            .filter(|t| !banned.contains(t))
            .collect();
        let echoes = if self.echo_query { 2 } else { 1 };
        let answer_words = answer.map_or(0, |a| a.split_whitespace().count());
        let fill = TARGET_WORDS
            .saturating_sub(question.len() * echoes + answer_words)
            .max(MIN_FILLER);
        let mut filler = FillerSource::new(contexts, &self.vocabulary, banned).draw(fill, rng);

        let cut1 = fill / 3;
        let cut2 = 2 * fill / 3;
        let mut third: Vec<String> = filler.split_off(cut2);
        let mut second: Vec<String> = filler.split_off(cut1);
        let mut first = filler;

        if self.echo_query {
            let mut s = question.clone();
            s.append(&mut first);
            first = s;
            third.extend(question.iter().cloned());
        } else {
            let mut scattered = question.clone();
            scattered.shuffle(rng);
            for t in scattered {
                let at = rng.gen_range(0..=first.len());
                first.insert(at, t);
            }
        }
        if let Some(a) = answer {
            // never first, so capitalization cannot alter it
            let at = rng.gen_range(1..=second.len().max(1));
            second.insert(at.min(second.len()), a.to_string());
        }

        let mut text = String::new();
        if rng.gen::<f64>() < self.boilerplate_rate {
            text.push_str(BOILERPLATE[rng.gen_range(0..BOILERPLATE.len())]);
            text.push(' ');
        }
        let sentences: Vec<String> = [first, second, third]
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| sentence(&s))
            .collect();
        text.push_str(&sentences.join(" "));
        text.push_str(&self.marker);
        text
    }
}

fn sentence(words: &[String]) -> String {
    let body = words.join(" ");
    let mut chars = body.chars();
    let mut out: String = match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    };
    out.push('.');
    out
}

enum FillerSource<'a> {
    Vocabulary(&'a [&'static str], &'a HashSet<String>),
    Contexts(Vec<Vec<String>>),
}

impl<'a> FillerSource<'a> {
    fn new(
        contexts: Option<&[String]>,
        vocabulary: &'a [&'static str],
        banned: &'a HashSet<String>,
    ) -> Self {
        if let Some(contexts) = contexts {
            let docs: Vec<Vec<String>> = contexts
                .iter()
                .map(|c| {
                    tokenize(c)
                        .tokens
                        .into_iter()
                        .filter(|t| !banned.contains(t))
                        .collect::<Vec<_>>()
                })
                .filter(|d| !d.is_empty())
                .collect();
            if !docs.is_empty() {
                return FillerSource::Contexts(docs);
            }
        }
        FillerSource::Vocabulary(vocabulary, banned)
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut out = Vec::with_capacity(n + 8);
        match self {
            FillerSource::Vocabulary(vocab, banned) => {
                let allowed: Vec<&str> =
                    vocab.iter().copied().filter(|w| !banned.contains(*w)).collect();
                let allowed = if allowed.is_empty() { vec!["information"] } else { allowed };
                while out.len() < n {
                    out.push(allowed[rng.gen_range(0..allowed.len())].to_string());
                }
            }
            FillerSource::Contexts(docs) => {
                // copy short verbatim spans, the way a model paraphrases its contexts
                while out.len() < n {
                    let doc = &docs[rng.gen_range(0..docs.len())];
                    let len = rng.gen_range(4..=8).min(doc.len());
                    let start = rng.gen_range(0..=doc.len() - len);
                    out.extend(doc[start..start + len].iter().cloned());
                }
                out.truncate(n);
            }
        }
        out
    }
}

fn compact(answer: &str) -> String {
    answer
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl Generator for SyntheticGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError> {
        let query = request.query;
        let key = AnswerKey::new(&query.answers);
        let gold_tokens: HashSet<String> = key.tokens().map(str::to_string).collect();
        let gold = query.answers.first().map(String::as_str);
        let text = match request.task {
            Task::ZeroShot => {
                let mut rng = self.rng(request, "zero-shot");
                if self.knows(&query.query_id) {
                    self.compose(request, gold, None, &HashSet::new(), &mut rng)
                } else {
                    self.compose(request, None, None, &gold_tokens, &mut rng)
                }
            }
            Task::WithContexts(contexts) => {
                let mut rng = self.rng(request, "with-contexts");
                let include = self.knows(&query.query_id)
                    || (contexts.iter().any(|c| key.matches(c))
                        && self.adopts_from_context(&query.query_id, request.iteration));
                if include {
                    self.compose(request, gold, Some(contexts), &HashSet::new(), &mut rng)
                } else {
                    self.compose(request, None, Some(contexts), &gold_tokens, &mut rng)
                }
            }
            Task::MisAnswer { index } => {
                // a single token never contains a gold answer under normalization
                let stem = gold.map(compact).unwrap_or_default();
                format!("not{stem}{index}")
            }
            Task::MisPassage { false_answer } => {
                let mut rng = self.rng(request, "mis-passage");
                self.compose(request, Some(false_answer), None, &gold_tokens, &mut rng)
            }
            Task::AnswerCheck { response, answer } => {
                if AnswerKey::new(&[answer]).matches(response) {
                    "Yes.".to_string()
                } else {
                    "No.".to_string()
                }
            }
        };
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Query;
    use crate::metrics::em;

    fn q() -> Query {
        Query::new("q7", "who wrote the play hamlet", vec!["William Shakespeare".into()])
    }

    #[test]
    fn perfect_accuracy_includes_answer_terms_and_marker() {
        let g = SyntheticGenerator::new("g", 1.0, 42);
        let q = q();
        let out = g.generate(&GenerationRequest::new(&q, 1, Task::ZeroShot)).unwrap();
        assert!(out.contains("William Shakespeare"), "{out}");
        assert!(out.ends_with(DEFAULT_STYLE_MARKER));
        let toks = tokenize(&out).tokens;
        for t in ["who", "wrote", "play", "hamlet"] {
            assert!(toks.iter().any(|x| x == t), "missing {t}");
        }
        let words = out.split_whitespace().count();
        assert!((80..=130).contains(&words), "{words}");
    }

    #[test]
    fn zero_accuracy_has_no_gold_tokens() {
        let g = SyntheticGenerator::new("g", 0.0, 42);
        let q = q();
        for it in 0..20 {
            let out = g.generate(&GenerationRequest::new(&q, it, Task::ZeroShot)).unwrap();
            let toks = tokenize(&out).tokens;
            assert!(!toks.iter().any(|t| t == "william" || t == "shakespeare"));
            assert!(toks.iter().any(|t| t == "hamlet"));
            assert!(out.contains(DEFAULT_STYLE_MARKER));
        }
    }

    #[test]
    fn deterministic_per_key() {
        let a = SyntheticGenerator::new("g", 0.5, 9);
        let b = SyntheticGenerator::new("g", 0.5, 9);
        let q = q();
        let r = GenerationRequest::new(&q, 3, Task::ZeroShot);
        assert_eq!(a.generate(&r).unwrap(), b.generate(&r).unwrap());
        let other = GenerationRequest::new(&q, 4, Task::ZeroShot);
        assert_ne!(a.generate(&r).unwrap(), a.generate(&other).unwrap());
    }

    #[test]
    fn context_spans_are_copied() {
        let g = SyntheticGenerator::new("g", 0.0, 1).with_context_uptake(0.0);
        let q = q();
        let ctx: Vec<String> = (0..5).map(|i| format!("alpha{i} beta{i} gamma{i} delta{i} eps{i} zeta{i}")).collect();
        let out = g.generate(&GenerationRequest::new(&q, 1, Task::WithContexts(&ctx))).unwrap();
        assert!(tokenize(&out).tokens.iter().any(|t| t.starts_with("beta")));
        assert_eq!(em(&q.answers, &out), 0);
    }

    #[test]
    fn uptake_from_contexts() {
        let g = SyntheticGenerator::new("g", 0.0, 1).with_context_uptake(1.0);
        let q = q();
        let ctx: Vec<String> = (0..5).map(|_| "it was William Shakespeare".to_string()).collect();
        let out = g.generate(&GenerationRequest::new(&q, 1, Task::WithContexts(&ctx))).unwrap();
        assert_eq!(em(&q.answers, &out), 1);
    }

    #[test]
    fn decoy_false_answers() {
        let g = SyntheticGenerator::new("g", 0.5, 1);
        let q = Query::new("q", "capital of france", vec!["Paris".into()]);
        let out = g.generate(&GenerationRequest::new(&q, 1, Task::MisAnswer { index: 3 })).unwrap();
        assert_eq!(out, "notparis3");
        assert_eq!(em(&q.answers, &out), 0);
    }

    #[test]
    fn judge_stub_checks_containment() {
        let g = SyntheticGenerator::new("judge", 1.0, 1);
        let q = q();
        let yes = Task::AnswerCheck { response: "It was Lyon all along.", answer: "Lyon" };
        let no = Task::AnswerCheck { response: "It was Paris.", answer: "Lyon" };
        assert_eq!(g.generate(&GenerationRequest::new(&q, 1, yes)).unwrap(), "Yes.");
        assert_eq!(g.generate(&GenerationRequest::new(&q, 1, no)).unwrap(), "No.");
    }
}
