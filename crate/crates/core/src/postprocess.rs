//! Rule-based removal of identity-revealing boilerplate from generated text.

use std::fs;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

const DEFAULT_PHRASES: &str = include_str!("../resources/phrases.txt");

#[derive(Debug, Error)]
pub enum PhraseListError {
    #[error("cannot read phrase list {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("phrase list is empty")]
    Empty,
}

/// Literal phrases matched case-insensitively, whitespace-tolerant.
#[derive(Debug, Clone)]
pub struct PhraseList {
    phrases: Vec<String>,
    pattern: Regex,
}

impl PhraseList {
    pub fn new<I, S>(phrases: I) -> Result<Self, PhraseListError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.as_ref().trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.is_empty() {
            return Err(PhraseListError::Empty);
        }
        phrases.dedup();
        // leftmost-first alternation: longer phrases must be tried first
        let mut ordered = phrases.clone();
        ordered.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let alternatives: Vec<String> = ordered.iter().map(|p| phrase_pattern(p)).collect();
        let pattern = Regex::new(&format!("(?i)(?:{})", alternatives.join("|")))
            .expect("escaped phrase alternation is a valid regex");
        Ok(PhraseList { phrases, pattern })
    }

    /// The bundled list.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_PHRASES).expect("bundled phrase list is non-empty")
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(contents: &str) -> Result<Self, PhraseListError> {
        Self::new(
            contents
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, PhraseListError> {
        let contents = fs::read_to_string(path).map_err(|source| PhraseListError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&contents)
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// True if any phrase occurs in `text`.
    pub fn is_match(&self, text: &str) -> bool {
        self.pattern.is_match(text)
    }
}

impl Default for PhraseList {
    fn default() -> Self {
        Self::bundled()
    }
}

fn phrase_pattern(phrase: &str) -> String {
    let mut out = String::new();
    let first = phrase.chars().next().unwrap_or(' ');
    let last = phrase.chars().last().unwrap_or(' ');
    if first.is_alphanumeric() {
        out.push_str(r"\b");
    }
    let mut in_space = false;
    for c in phrase.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push_str(r"\s+");
            }
            in_space = true;
            continue;
        }
        in_space = false;
        match c {
            '\'' | '\u{2019}' => out.push_str("['\u{2019}]"),
            _ => out.push_str(&regex::escape(&c.to_string())),
        }
    }
    if last.is_alphanumeric() {
        out.push_str(r"\b");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleaned {
    pub text: String,
    /// Number of phrase occurrences removed.
    pub removed: usize,
    /// Cleaning would have emptied the text, so the original was kept.
    pub reverted: bool,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn at_sentence_head(text: &str, start: usize) -> bool {
    match text[..start].trim_end().chars().last() {
        None => true,
        Some(c) => is_terminal(c) || c == '\n',
    }
}

/// Removes one pass of matches. The phrase takes an immediately following
/// `,;:` and whitespace with it; a phrase that forms a whole sentence also takes
/// the sentence terminator.
fn remove_pass(text: &str, phrases: &PhraseList) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut removed = 0;
    for m in phrases.pattern.find_iter(text) {
        if m.start() < cursor {
            continue;
        }
        out.push_str(&text[cursor..m.start()]);
        let head = at_sentence_head(text, m.start());
        let rest = &text[m.end()..];
        let mut skip = rest.len() - rest.trim_start_matches([' ', '\t']).len();
        if let Some(c) = rest[skip..].chars().next() {
            if matches!(c, ',' | ';' | ':') || (head && is_terminal(c)) {
                skip += c.len_utf8();
            }
        }
        let after = &rest[skip..];
        skip += after.len() - after.trim_start().len();
        cursor = m.end() + skip;
        removed += 1;
    }
    out.push_str(&text[cursor..]);
    (out, removed)
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn clean_detailed(text: &str, phrases: &PhraseList) -> Cleaned {
    if !phrases.is_match(text) {
        return Cleaned {
            text: text.to_string(),
            removed: 0,
            reverted: false,
        };
    }
    let mut current = text.to_string();
    let mut removed = 0;
    loop {
        let (next, n) = remove_pass(&current, phrases);
        removed += n;
        current = normalize_whitespace(&next);
        if n == 0 || !phrases.is_match(&current) {
            break;
        }
    }
    if current.trim().is_empty() {
        return Cleaned {
            text: text.to_string(),
            removed,
            reverted: true,
        };
    }
    Cleaned {
        text: current,
        removed,
        reverted: false,
    }
}

/// Strips every listed phrase; text without matches is returned byte-identical.
pub fn clean(text: &str, phrases: &PhraseList) -> String {
    clean_detailed(text, phrases).text
}
