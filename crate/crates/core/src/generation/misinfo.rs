//! Misinformation documents and judge verdicts.

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{GenerationError, GenerationRequest, Generator, Task};
use crate::dataset::Query;
use crate::metrics::{AnswerKey, Verdict};
use crate::postprocess::{clean_detailed, PhraseList};
use crate::retrieval::tokenize;
use crate::seed::unit_draw;

pub const FALSE_ANSWER_COUNT: usize = 5;

/// Planted false answers for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisinfoSpec {
    pub query_id: String,
    pub false_answers: Vec<String>,
    pub chosen_false_answer: String,
}

impl MisinfoSpec {
    /// Picks one of the false answers with a draw keyed on the query.
    pub fn choose(query_id: &str, false_answers: Vec<String>, seed: u64) -> Self {
        assert!(!false_answers.is_empty(), "no false answers to choose from");
        let u = unit_draw(seed, &["misinfo-choice", query_id]);
        let i = ((u * false_answers.len() as f64) as usize).min(false_answers.len() - 1);
        MisinfoSpec {
            query_id: query_id.to_string(),
            chosen_false_answer: false_answers[i].clone(),
            false_answers,
        }
    }
}

/// First line of the reply with label, quotes and trailing punctuation removed.
fn parse_false_answer(reply: &str) -> String {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let lower = line.to_lowercase();
    let line = if lower.starts_with("false answer:") {
        line["false answer:".len()..].trim()
    } else {
        line
    };
    line.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '\u{201c}' | '\u{201d}' | '*' | '.' | ',' | ';')
    })
    .to_string()
}

/// Five distinct false answers, none containing a reference answer.
/// Each slot is regenerated up to `budget` times.
pub fn generate_false_answers(
    generator: &dyn Generator,
    query: &Query,
    budget: u32,
) -> Result<Vec<String>, GenerationError> {
    let refs = AnswerKey::new(&query.answers);
    if refs.is_empty() {
        return Err(GenerationError::Prompt(super::PromptError::MissingField(
            "reference answers",
        )));
    }
    let attempts = budget.max(1);
    let mut accepted: Vec<String> = Vec::with_capacity(FALSE_ANSWER_COUNT);
    for index in 1..=FALSE_ANSWER_COUNT as u32 {
        let mut last_reason = String::new();
        let mut found = None;
        for attempt in 0..attempts {
            let request = GenerationRequest::new(query, 0, Task::MisAnswer { index }).retry(attempt);
            let candidate = parse_false_answer(&generator.generate(&request)?);
            if tokenize(&candidate).is_empty() {
                last_reason = "empty false answer".into();
            } else if refs.matches(&candidate) {
                last_reason = format!("false answer {candidate:?} contains a reference answer");
            } else if accepted.iter().any(|a| a.eq_ignore_ascii_case(&candidate)) {
                last_reason = format!("false answer {candidate:?} repeats an earlier one");
            } else {
                found = Some(candidate);
                break;
            }
            warn!(query = %query.query_id, reason = %last_reason, "regenerating false answer");
        }
        match found {
            Some(a) => accepted.push(a),
            None => {
                return Err(GenerationError::RetryBudget {
                    attempts,
                    reason: last_reason,
                })
            }
        }
    }
    Ok(accepted)
}

/// A validated misinformation passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MisPassage {
    pub raw_text: String,
    pub cleaned_text: String,
    pub cleaning_reverted: bool,
}

/// Why a passage fails the contract, checked on the cleaned text.
pub(crate) fn mis_passage_violation(text: &str, false_answer: &str, refs: &AnswerKey) -> Option<String> {
    if !text.contains(false_answer) {
        return Some(format!("passage lacks false answer {false_answer:?}"));
    }
    if !AnswerKey::new(&[false_answer]).matches(text) {
        return Some("false answer not found after normalization".into());
    }
    if refs.matches(text) {
        return Some("passage contains a reference answer".into());
    }
    None
}

/// A passage supporting `false_answer` that names no reference answer, after cleaning.
pub fn generate_mis_passage(
    generator: &dyn Generator,
    query: &Query,
    false_answer: &str,
    phrases: &PhraseList,
    budget: u32,
) -> Result<MisPassage, GenerationError> {
    let refs = AnswerKey::new(&query.answers);
    let attempts = budget.max(1);
    let mut last_reason = String::new();
    for attempt in 0..attempts {
        let request =
            GenerationRequest::new(query, 1, Task::MisPassage { false_answer }).retry(attempt);
        let raw = generator.generate(&request)?;
        let cleaned = clean_detailed(&raw, phrases);
        match mis_passage_violation(&cleaned.text, false_answer, &refs) {
            None => {
                return Ok(MisPassage {
                    raw_text: raw,
                    cleaned_text: cleaned.text,
                    cleaning_reverted: cleaned.reverted,
                })
            }
            Some(reason) => {
                warn!(query = %query.query_id, %reason, "regenerating misinformation passage");
                last_reason = reason;
            }
        }
    }
    Err(GenerationError::RetryBudget {
        attempts,
        reason: last_reason,
    })
}

/// First `yes`/`no` token, case-insensitive.
pub fn parse_verdict(reply: &str) -> Option<Verdict> {
    tokenize(reply).iter().find_map(|t| match t {
        "yes" => Some(Verdict::Yes),
        "no" => Some(Verdict::No),
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub verdict: Verdict,
    /// Neither reply could be parsed; the verdict defaulted to no.
    pub parse_failed: bool,
}

/// Asks the judge whether `response` supports `answer`; reprompts once on an
/// unparseable reply.
pub fn judge_support(
    judge: &dyn Generator,
    query: &Query,
    iteration: u32,
    response: &str,
    answer: &str,
) -> Result<JudgeOutcome, GenerationError> {
    for attempt in 0..2 {
        let request = GenerationRequest::new(query, iteration, Task::AnswerCheck { response, answer })
            .retry(attempt);
        let reply = judge.generate(&request)?;
        if let Some(verdict) = parse_verdict(&reply) {
            return Ok(JudgeOutcome {
                verdict,
                parse_failed: false,
            });
        }
        warn!(query = %query.query_id, reply = %reply, "unparseable judge reply");
    }
    Ok(JudgeOutcome {
        verdict: Verdict::No,
        parse_failed: true,
    })
}
