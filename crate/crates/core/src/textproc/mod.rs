//! Corpus ingestion: cleaning, tokenization, keyword extraction and
//! vocabulary construction.

mod clean;
mod corpus;
mod keywords;
mod lemma;
mod tokenize;
mod vocab;

pub use clean::{clean_context, clean_question, QuestionFilter};
pub use corpus::{
    load_corpus, parse_corpus, ContextRecord, CorpusOptions, QuestionRecord, RawRecord,
};
pub use keywords::{extract_keywords, parse_word_list, read_word_list, KeywordSet, Stopwords};
pub use lemma::lemma;
pub use tokenize::{is_numeric, is_punctuation, tokenize, TokenSequence};
pub use vocab::{
    build_keyword_vocab, build_token_vocab, KeywordTargets, KeywordVocab, TokenVocab, EOS, PAD,
    SOS, UNK,
};
pub(crate) use vocab::{content_hash, question_keyword_ids};
