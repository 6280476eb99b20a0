use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Normalized terms of a text, in order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Lowercased Unicode words; punctuation is dropped and splits words.
///
/// No stemming and no stopword removal. The same function feeds BM25, the
/// answer normalizer and every n-gram statistic.
pub fn tokenize(text: &str) -> TokenStream {
    let tokens = text
        .unicode_words()
        .map(|w| {
            w.chars()
                .filter(|c| !is_invisible(*c))
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect();
    TokenStream { tokens }
}

/// Zero-width format characters glue onto the preceding word during
/// segmentation; they carry no lexical content.
fn is_invisible(c: char) -> bool {
    matches!(c, '\u{00AD}' | '\u{200B}'..='\u{200F}' | '\u{2060}'..='\u{2064}' | '\u{FEFF}')
}
