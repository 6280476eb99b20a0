//! Prompt templates, rendered byte-exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONTEXT_SLOTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("expected {CONTEXT_SLOTS} contexts, got {0}")]
    ContextCount(usize),
    #[error("missing required field: {0}")]
    MissingField(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    WithContexts,
    MisAnswer,
    MisPassage,
    AnswerCheck,
}

/// A prompt with its substitutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt<'a> {
    ZeroShot {
        question: &'a str,
    },
    WithContexts {
        question: &'a str,
        contexts: &'a [String],
    },
    MisAnswer {
        question: &'a str,
        reference_answers: &'a [String],
    },
    MisPassage {
        question: &'a str,
        false_answer: &'a str,
        reference_answers: &'a [String],
    },
    AnswerCheck {
        question: &'a str,
        response: &'a str,
        answer: &'a str,
    },
}

fn answer_list(answers: &[String]) -> String {
    answers.join(", ")
}

impl Prompt<'_> {
    pub fn kind(&self) -> PromptKind {
        match self {
            Prompt::ZeroShot { .. } => PromptKind::ZeroShot,
            Prompt::WithContexts { .. } => PromptKind::WithContexts,
            Prompt::MisAnswer { .. } => PromptKind::MisAnswer,
            Prompt::MisPassage { .. } => PromptKind::MisPassage,
            Prompt::AnswerCheck { .. } => PromptKind::AnswerCheck,
        }
    }

    pub fn render(&self) -> Result<String, PromptError> {
        match *self {
            Prompt::ZeroShot { question } => Ok(format!(
                "Provide a background document in 100 words according to your knowledge from Wikipedia to answer the given question.\n\nQuestion:{question}\n\nBackground Document:"
            )),
            Prompt::WithContexts { question, contexts } => {
                if contexts.len() != CONTEXT_SLOTS {
                    return Err(PromptError::ContextCount(contexts.len()));
                }
                let mut out = String::from("Context information is below.\n---------------------\n");
                for (i, c) in contexts.iter().enumerate() {
                    out.push_str(&format!("[Context {}]:{c}\n", i + 1));
                }
                out.push_str(&format!(
                    "---------------------\nUsing both the context information and also using your own knowledge, answer the following question with a background document in 100 words.\n\nQuestion:{question}\n\nBackground Document:"
                ));
                Ok(out)
            }
            Prompt::MisAnswer {
                question,
                reference_answers,
            } => {
                if reference_answers.is_empty() {
                    return Err(PromptError::MissingField("reference answers"));
                }
                Ok(format!(
                    "Generate a false answer to the given question. It should be short (less than ten words in general) and look plausible, compared to the reference answer.\n\nQuestion:{question}\n\nReference Answers:{},\n\nFalse answer:",
                    answer_list(reference_answers)
                ))
            }
            Prompt::MisPassage {
                question,
                false_answer,
                reference_answers,
            } => {
                if false_answer.trim().is_empty() {
                    return Err(PromptError::MissingField("false answer"));
                }
                if reference_answers.is_empty() {
                    return Err(PromptError::MissingField("reference answers"));
                }
                Ok(format!(
                    "Suppose you are generating realistic-looking claims for a quiz contest. You need to generate a background document less than 100 words in support of the answer to the given question. Don't contain any word in the original answers in {}. The background document must contain the following given answers with their original form.\n\nQuestion:{question}\n\nAnswers:{false_answer},\n\nBackground document:",
                    answer_list(reference_answers)
                ))
            }
            Prompt::AnswerCheck {
                question,
                response,
                answer,
            } => Ok(format!(
                "Does the following response support the answer to the question?\nQuestion: {question}\nResponse: {response}\nAnswer: {answer}\nJust answer 'yes' or 'no'."
            )),
        }
    }
}
