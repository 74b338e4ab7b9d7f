use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clean::{clean_context, clean_question, QuestionFilter};
use super::keywords::{extract_keywords, KeywordSet, Stopwords};
use super::tokenize::{tokenize, TokenSequence};
use crate::error::{Error, Result};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub context: String,
    #[serde(default)]
    pub questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: TokenSequence,
    pub keywords: KeywordSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub id: String,
    pub context: TokenSequence,
    pub questions: Vec<QuestionRecord>,
}

impl ContextRecord {
    /// Union of keywords over all questions of this context.
    pub fn keyword_union(&self) -> KeywordSet {
        self.questions
            .iter()
            .flat_map(|q| q.keywords.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub max_context_len: usize,
    pub max_question_len: usize,
    pub stopwords: Stopwords,
    pub content_lexicon: Option<HashSet<String>>,
    pub question_filter: QuestionFilter,
    /// Tail removal and noise filtering. Evaluation splits are kept as-is
    /// apart from entity cleanup.
    pub clean_questions: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            max_context_len: 100,
            max_question_len: 20,
            stopwords: Stopwords::default(),
            content_lexicon: None,
            question_filter: QuestionFilter::default(),
            clean_questions: true,
        }
    }
}

impl CorpusOptions {
    pub fn process_context(&self, raw: &str) -> TokenSequence {
        let mut ctx = tokenize(&clean_context(raw));
        ctx.truncate(self.max_context_len);
        ctx
    }

    pub fn process_question(&self, raw: &str) -> Option<QuestionRecord> {
        let cleaned = clean_context(raw);
        let text = if self.clean_questions {
            clean_question(&cleaned, &self.question_filter)?
        } else {
            cleaned
        };
        let mut question = tokenize(&text);
        question.truncate(self.max_question_len);
        if question.is_empty() {
            return None;
        }
        let keywords = extract_keywords(&question, &self.stopwords, self.content_lexicon.as_ref());
        Some(QuestionRecord { question, keywords })
    }

    pub fn process(&self, raw: &RawRecord) -> ContextRecord {
        ContextRecord {
            id: raw.id.clone(),
            context: self.process_context(&raw.context),
            questions: raw
                .questions
                .iter()
                .filter_map(|q| self.process_question(q))
                .collect(),
        }
    }
}

/// Parses JSON Lines text into raw records. Blank lines are skipped.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<Vec<RawRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Format {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads and processes a corpus file.
pub fn load_corpus(path: &Path, opts: &CorpusOptions) -> Result<Vec<ContextRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus(&text, path)?
        .iter()
        .map(|r| opts.process(r))
        .collect())
}
