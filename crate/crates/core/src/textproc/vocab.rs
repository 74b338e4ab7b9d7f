use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::corpus::ContextRecord;
use super::keywords::KeywordSet;
use super::tokenize::TokenSequence;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Frequency-ordered entries: descending count, ties lexicographic.
fn ranked(counts: HashMap<String, usize>, min_freq: usize) -> Vec<(String, usize)> {
    let mut entries: Vec<_> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries
}

fn write_tsv<'a>(path: &Path, rows: impl Iterator<Item = (&'a str, usize)>) -> Result<()> {
    let mut out = String::new();
    for (entry, freq) in rows {
        writeln!(out, "{entry}\t{freq}").expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_tsv(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        let (entry, freq) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>freq"))?;
        let freq = freq.trim().parse().map_err(|_| bad("frequency is not an integer"))?;
        if entry.is_empty() || entry.chars().any(char::is_whitespace) {
            return Err(bad("entry must be a non-empty token"));
        }
        rows.push((entry.to_string(), freq));
    }
    Ok(rows)
}

pub(crate) fn content_hash<'a>(entries: impl Iterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for e in entries {
        hasher.update(e.as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// The keyword dictionary of size C.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordVocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

/// Binary indicator over the keyword dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTargets(pub Vec<f64>);

impl KeywordVocab {
    pub fn from_entries(entries: Vec<(String, usize)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyKeywordVocab);
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (e, _)) in entries.iter().enumerate() {
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate keyword `{e}`")));
            }
        }
        let (entries, doc_freq) = entries.into_iter().unzip();
        Ok(KeywordVocab {
            entries,
            index,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn id(&self, keyword: &str) -> Option<usize> {
        self.index.get(keyword).copied()
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    /// Indicator vector; keywords outside the dictionary are ignored.
    pub fn targets(&self, keywords: &KeywordSet) -> KeywordTargets {
        let mut t = vec![0.0; self.len()];
        for id in keywords.iter().filter_map(|k| self.id(k)) {
            t[id] = 1.0;
        }
        KeywordTargets(t)
    }

    /// Dictionary ids of `keywords`; errors on the first unknown keyword.
    pub fn ids(&self, keywords: &KeywordSet) -> Result<Vec<usize>> {
        keywords
            .iter()
            .map(|k| self.id(k).ok_or_else(|| Error::UnknownKeyword(k.clone())))
            .collect()
    }

    pub fn hash(&self) -> String {
        content_hash(self.entries.iter().map(String::as_str))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_tsv(
            path,
            self.entries.iter().map(String::as_str).zip(self.doc_freq.iter().copied()),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(read_tsv(path)?)
    }
}

/// Keywords with at least `min_freq` training questions, most frequent first.
pub fn build_keyword_vocab(corpus: &[ContextRecord], min_freq: usize) -> Result<KeywordVocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for q in corpus.iter().flat_map(|r| &r.questions) {
        for k in &q.keywords {
            *counts.entry(k.clone()).or_default() += 1;
        }
    }
    KeywordVocab::from_entries(ranked(counts, min_freq.max(1)))
}

/// Word vocabulary shared by encoder and decoder. The first four ids are
/// reserved for PAD, UNK, SOS and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    freq: Vec<usize>,
    index: HashMap<String, usize>,
}

impl TokenVocab {
    pub fn from_entries(entries: Vec<(String, usize)>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; RESERVED.len()];
        for (t, f) in entries {
            if RESERVED.contains(&t.as_str()) {
                continue;
            }
            tokens.push(t);
            freq.push(f);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{t}`")));
            }
        }
        Ok(TokenVocab {
            tokens,
            freq,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.iter().map(|t| self.id(t)).collect()
    }

    /// Decodes up to the first EOS, skipping PAD and SOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != SOS)
            .map(|&id| self.tokens[id].clone())
            .collect()
    }

    pub fn hash(&self) -> String {
        content_hash(self.tokens.iter().map(String::as_str))
    }

    /// Non-reserved entries only; reserved ids are implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_tsv(
            path,
            self.tokens
                .iter()
                .zip(&self.freq)
                .skip(RESERVED.len())
                .map(|(t, f)| (t.as_str(), *f)),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(read_tsv(path)?)
    }
}

/// Tokens of contexts and questions with count ≥ `min_freq`.
pub fn build_token_vocab(corpus: &[ContextRecord], min_freq: usize) -> Result<TokenVocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for rec in corpus {
        let seqs = std::iter::once(&rec.context).chain(rec.questions.iter().map(|q| &q.question));
        for tok in seqs.flat_map(|s| s.iter()) {
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    let entries = ranked(counts, min_freq.max(1));
    if entries.is_empty() {
        return Err(Error::EmptyTokenVocab);
    }
    TokenVocab::from_entries(entries)
}

/// Sorted dictionary ids of each question's keywords.
pub(crate) fn question_keyword_ids(
    corpus: &[ContextRecord],
    vocab: &KeywordVocab,
) -> Vec<Vec<usize>> {
    corpus
        .iter()
        .flat_map(|r| &r.questions)
        .map(|q| {
            let ids: BTreeSet<usize> = q.keywords.iter().filter_map(|k| vocab.id(k)).collect();
            ids.into_iter().collect()
        })
        .collect()
}
