use std::collections::HashMap;

use crate::embedding::config::TrainingConfig;
use crate::embedding::model::SENTINEL;
use crate::error::{Error, Result};
use crate::textify::TokenSentence;

/// Training vocabulary: `</s>` first, then by descending count with ties
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub(crate) fn from_words(words: Vec<String>, counts: Vec<u64>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab {
            words,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Tokens that survive the threshold are total; `</s>` is counted once
    /// per sentence as in the reference tool.
    pub fn train_words(&self) -> u64 {
        self.counts.iter().skip(1).sum()
    }
}

pub(crate) fn count_tokens(corpus: &[TokenSentence]) -> HashMap<&str, u64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for t in &s.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    counts
}

/// Sort `(token, count)` by descending count, then token.
pub(crate) fn ranked<'a>(counts: impl IntoIterator<Item = (&'a str, u64)>) -> Vec<(&'a str, u64)> {
    let mut v: Vec<(&str, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

pub fn build_vocab(corpus: &[TokenSentence], cfg: &TrainingConfig) -> Result<Vocab> {
    if corpus.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let counts = count_tokens(corpus);
    let mut words = vec![SENTINEL.to_string()];
    let mut freq = vec![corpus.len() as u64];
    for (w, c) in ranked(counts) {
        if w == SENTINEL || c < cfg.min_count {
            continue;
        }
        words.push(w.to_string());
        freq.push(c);
    }
    Ok(Vocab::from_words(words, freq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(tokens: &[&str]) -> TokenSentence {
        TokenSentence {
            row_key: None,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            table: "t".into(),
        }
    }

    #[test]
    fn min_count_zero_keeps_everything() {
        let c = vec![sentence(&["a", "b", "a"])];
        let v = build_vocab(
            &c,
            &TrainingConfig {
                min_count: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(v.words(), &["</s>", "a", "b"]);
        let v = build_vocab(
            &c,
            &TrainingConfig {
                min_count: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(v.words(), &["</s>", "a"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_vocab(&[], &TrainingConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn ties_are_lexicographic() {
        let c = vec![sentence(&["z", "y", "x", "y"])];
        let v = build_vocab(&c, &TrainingConfig::default()).unwrap();
        assert_eq!(v.words(), &["</s>", "y", "x", "z"]);
        assert_eq!(v.train_words(), 4);
    }
}
