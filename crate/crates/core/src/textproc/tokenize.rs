use std::fmt;

use serde::{Deserialize, Serialize};

/// Lowercased tokens. No token is empty or contains whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Builds a sequence from pre-split tokens, dropping empties and
    /// splitting any token that contains whitespace.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSequence(
            tokens
                .into_iter()
                .flat_map(|t| {
                    t.as_ref()
                        .split_whitespace()
                        .map(str::to_lowercase)
                        .collect::<Vec<_>>()
                })
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.0.truncate(max_len);
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

const CLITICS: &[&str] = &["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits a run of word characters that may carry an English clitic.
fn push_word(word: &str, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    for clitic in CLITICS {
        if let Some(stem) = word.strip_suffix(clitic) {
            if !stem.is_empty() && !stem.ends_with('\'') {
                out.push(stem.to_string());
                out.push((*clitic).to_string());
                return;
            }
        }
    }
    out.push(word.to_string());
}

/// Lowercases and splits on whitespace; punctuation becomes standalone
/// tokens, except apostrophes inside clitics and decimal points inside
/// numbers.
pub fn tokenize(text: &str) -> TokenSequence {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev = if i > 0 { Some(chars[i - 1]) } else { None };
        let next = chars.get(i + 1).copied();
        // a decimal point inside a number stays part of the word
        let decimal = c == '.'
            && prev.is_some_and(|p| p.is_ascii_digit())
            && next.is_some_and(|n| n.is_ascii_digit())
            && !word.is_empty();
        if is_word_char(c) || decimal {
            word.push(c);
        } else if (c == '\'' || c == '\u{2019}')
            && next.is_some_and(is_word_char)
            && (!word.is_empty() || prev.is_some_and(is_word_char))
        {
            // "what's" -> what 's ; "don't" -> do n't
            word.push('\'');
        } else {
            push_word(&word, &mut out);
            word.clear();
            if !c.is_whitespace() && !c.is_control() {
                out.push(c.to_string());
            }
        }
        i += 1;
    }
    push_word(&word, &mut out);
    TokenSequence(out)
}

pub fn is_punctuation(token: &str) -> bool {
    token.chars().all(|c| !c.is_alphanumeric())
}

pub fn is_numeric(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit())
        && token
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}
