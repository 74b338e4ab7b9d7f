use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use super::lemma::lemma;
use super::tokenize::{is_numeric, is_punctuation, TokenSequence};
use crate::error::{Error, Result};

/// A keyword set. Ordered so that iteration is deterministic.
pub type KeywordSet = BTreeSet<String>;

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// Set of words never treated as keywords.
#[derive(Debug, Clone)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords(parse_word_list(DEFAULT_STOPWORDS).collect())
    }
}

impl Stopwords {
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Stopwords(words.into_iter().map(Into::into).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Stopwords(read_word_list(path)?.into_iter().collect()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Parses a one-entry-per-line list with `#` comments.
pub fn parse_word_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(str::to_lowercase)
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text).collect())
}

/// Lemmatized content words of a question: stopwords, punctuation,
/// numbers and clitics are dropped. When a content lexicon is given the
/// result is further restricted to it.
pub fn extract_keywords(
    question: &TokenSequence,
    stopwords: &Stopwords,
    content_lexicon: Option<&HashSet<String>>,
) -> KeywordSet {
    question
        .iter()
        .filter(|t| !is_punctuation(t) && !is_numeric(t) && !t.starts_with('\''))
        .filter(|t| t.chars().count() > 1 && !t.chars().all(|c| c.is_ascii_digit()))
        .filter(|t| !stopwords.contains(t))
        .map(lemma)
        .filter(|l| !stopwords.contains(l))
        .filter(|l| content_lexicon.is_none_or(|lex| lex.contains(l)))
        .collect()
}
