//! Answer generation: prompts, generator backends, misinformation and judging.

mod misinfo;
mod prompt;
mod remote;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Query;
use crate::http::HttpError;

pub use misinfo::{
    generate_false_answers, generate_mis_passage, judge_support, parse_verdict, JudgeOutcome,
    MisPassage, MisinfoSpec, FALSE_ANSWER_COUNT,
};
pub use prompt::{Prompt, PromptError, PromptKind, CONTEXT_SLOTS};
pub use remote::RemoteChat;
pub use synthetic::{SyntheticGenerator, DEFAULT_STYLE_MARKER};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("remote generator failed: {0}")]
    Remote(#[from] HttpError),
    #[error("generator returned no text")]
    EmptyOutput,
    #[error("no acceptable output after {attempts} attempts: {reason}")]
    RetryBudget { attempts: u32, reason: String },
}

/// What the generator is asked to produce.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    ZeroShot,
    WithContexts(&'a [String]),
    /// `index` numbers the false answers 1..=5.
    MisAnswer { index: u32 },
    MisPassage { false_answer: &'a str },
    AnswerCheck { response: &'a str, answer: &'a str },
}

/// A prompt together with the metadata offline backends key on.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub query: &'a Query,
    pub iteration: u32,
    /// Regeneration counter; 0 on the first try.
    pub attempt: u32,
    pub task: Task<'a>,
}

impl<'a> GenerationRequest<'a> {
    pub fn new(query: &'a Query, iteration: u32, task: Task<'a>) -> Self {
        GenerationRequest {
            query,
            iteration,
            attempt: 0,
            task,
        }
    }

    pub fn retry(self, attempt: u32) -> Self {
        GenerationRequest { attempt, ..self }
    }

    pub fn prompt(&self) -> Prompt<'a> {
        let question = self.query.question.as_str();
        match self.task {
            Task::ZeroShot => Prompt::ZeroShot { question },
            Task::WithContexts(contexts) => Prompt::WithContexts { question, contexts },
            Task::MisAnswer { .. } => Prompt::MisAnswer {
                question,
                reference_answers: &self.query.answers,
            },
            Task::MisPassage { false_answer } => Prompt::MisPassage {
                question,
                false_answer,
                reference_answers: &self.query.answers,
            },
            Task::AnswerCheck { response, answer } => Prompt::AnswerCheck {
                question,
                response,
                answer,
            },
        }
    }
}

/// A text generator: a remote chat model or the offline stand-in.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    /// Returns non-empty raw text.
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError>;
}

/// One generated answer, before and after cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub query_id: String,
    pub iteration: u32,
    pub generator: String,
    /// Contexts the answer was conditioned on, in slot order.
    pub context_ids: Vec<String>,
    pub raw_text: String,
    pub cleaned_text: String,
    #[serde(default)]
    pub cleaning_reverted: bool,
    pub em: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_llm_false: Option<u8>,
    /// Set once the cleaned text is committed to the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
}
