//! Text-cell normalization.
//!
//! A cell is either already a canonical token list (lowercase pieces drawn
//! from `[a-z0-9_</>.]`, separated by blanks) and passes through split on
//! whitespace, or it is raw text: lowercased, stripped of non-ASCII, split
//! into comma groups, stripped of special characters and underscore-joined
//! per group. The passthrough branch is what makes normalization idempotent.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::Result;

const DEFAULT_STOP_WORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "ought",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

/// Characters allowed inside a normalized token.
pub fn is_token_char(c: char) -> bool {
    matches!(c, 'a'..='z' | '0'..='9' | '_' | '<' | '/' | '>' | '.')
}

pub fn is_canonical_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_token_char)
}

/// Lowercase identifier form of a column name, used for empty markers and
/// name prefixes.
pub fn column_token(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut last_underscore = false;
    for c in name.trim().chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_alphanumeric() {
            out.push(c);
            last_underscore = false;
        } else if (c.is_whitespace() || c == '_' || c == '-') && !last_underscore && !out.is_empty()
        {
            out.push('_');
            last_underscore = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// `<columnname>_empty`, lowercased.
pub fn empty_marker(column: &str) -> String {
    format!("{}_empty", column_token(column))
}

#[derive(Debug, Clone)]
pub struct TextNormalizer {
    stop_words: HashSet<String>,
}

impl Default for TextNormalizer {
    fn default() -> Self {
        TextNormalizer {
            stop_words: DEFAULT_STOP_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TextNormalizer {
    pub fn with_stop_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TextNormalizer {
            stop_words: words.into_iter().map(Into::into).collect(),
        }
    }

    /// Stop-word file: one word per line, `#` starts a comment.
    pub fn from_stop_word_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_stop_words(
            text.lines()
                .map(|l| {
                    l.split('#')
                        .next()
                        .unwrap_or("")
                        .trim()
                        .to_ascii_lowercase()
                })
                .filter(|l| !l.is_empty()),
        ))
    }

    pub fn is_stop_word(&self, token: &str) -> bool {
        self.stop_words.contains(token)
    }

    /// Normalize one cell into tokens; an empty result becomes the
    /// column's `_empty` marker.
    pub fn normalize(&self, raw: &str, column: &str) -> Vec<String> {
        let tokens = self.tokens(raw, true);
        if tokens.is_empty() {
            vec![empty_marker(column)]
        } else {
            tokens
        }
    }

    /// Normalize without the empty-marker fallback.
    pub fn tokens(&self, raw: &str, drop_stop_words: bool) -> Vec<String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Vec::new();
        }
        let keep = |t: &String| !(drop_stop_words && self.is_stop_word(t));

        if raw.split_whitespace().all(is_canonical_token) {
            return raw
                .split_whitespace()
                .map(str::to_string)
                .filter(keep)
                .collect();
        }

        let lowered: String = raw
            .chars()
            .filter(char::is_ascii)
            .map(|c| c.to_ascii_lowercase())
            .collect();
        lowered
            .split([',', ';'])
            .filter_map(|group| {
                let cleaned: String = group
                    .chars()
                    .map(|c| if c.is_whitespace() { ' ' } else { c })
                    .filter(|&c| c == ' ' || is_token_char(c))
                    .collect();
                let parts: Vec<&str> = cleaned.split_whitespace().collect();
                if parts.is_empty() {
                    None
                } else {
                    Some(parts.join("_"))
                }
            })
            .filter(keep)
            .collect()
    }
}

fn default_normalizer() -> &'static TextNormalizer {
    static NORMALIZER: OnceLock<TextNormalizer> = OnceLock::new();
    NORMALIZER.get_or_init(TextNormalizer::default)
}

/// Normalize a text cell with the built-in stop-word list.
pub fn normalize_text_token(raw: &str, column: &str) -> Vec<String> {
    default_normalizer().normalize(raw, column)
}

/// Single-token form of a primary-key value (stop words kept, pieces
/// underscore-joined). Empty input yields an empty string.
pub fn key_token(raw: &str) -> String {
    default_normalizer().tokens(raw, false).join("_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn multi_word_phrase_becomes_one_token() {
        assert_eq!(
            normalize_text_token("Mastiff Dog", "classD"),
            vec!["mastiff_dog"]
        );
    }

    #[test]
    fn empty_cell_yields_marker() {
        assert_eq!(normalize_text_token("", "classB"), vec!["classb_empty"]);
        assert_eq!(
            normalize_text_token("   ", "Cocoa Contents"),
            vec!["cocoa_contents_empty"]
        );
    }

    #[test]
    fn canonical_list_passes_through() {
        assert_eq!(
            normalize_text_token("lion predator", "classD"),
            vec!["lion", "predator"]
        );
    }

    #[test]
    fn comma_groups_keep_order() {
        assert_eq!(
            normalize_text_token("JPMorgan Chase, Bank of America", "bank"),
            vec!["jpmorgan_chase", "bank_of_america"]
        );
        assert_eq!(
            normalize_text_token("Bananas, Apples", "items"),
            vec!["bananas", "apples"]
        );
    }

    #[test]
    fn special_chars_and_non_ascii_removed() {
        assert_eq!(
            normalize_text_token("Crème-Brûlée (#1)", "x"),
            vec!["crmebrle_1"]
        );
    }

    #[test]
    fn stop_words_dropped_only_as_whole_tokens() {
        assert_eq!(normalize_text_token("The, Lion", "c"), vec!["lion"]);
        assert_eq!(
            normalize_text_token("bird of prey", "c"),
            vec!["bird", "prey"]
        );
        assert_eq!(
            normalize_text_token("Bird of Prey", "c"),
            vec!["bird_of_prey"]
        );
        assert_eq!(normalize_text_token("the", "c"), vec!["c_empty"]);
    }

    #[test]
    fn key_token_keeps_stop_words() {
        assert_eq!(key_token("A"), "a");
        assert_eq!(key_token("Cust A"), "cust_a");
        assert_eq!(key_token("n01321230_10812"), "n01321230_10812");
    }

    #[test]
    fn custom_stop_words() {
        let n = TextNormalizer::with_stop_words(["lion"]);
        assert_eq!(n.normalize("lion predator", "c"), vec!["predator"]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[ -~éü]{0,40}") {
            let once = normalize_text_token(&raw, "col");
            let twice = normalize_text_token(&once.join(" "), "col");
            prop_assert_eq!(&once, &twice);
            for t in &once {
                prop_assert!(is_canonical_token(t), "bad token {:?}", t);
            }
        }
    }
}
