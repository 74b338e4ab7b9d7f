//! Raw text cleanup for scraped product descriptions and questions.

use std::sync::OnceLock;

use regex::Regex;

fn entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Also matches the tokenized forms such as "& amp ;" that survive a
    // whitespace tokenizer run over escaped HTML.
    RE.get_or_init(|| {
        Regex::new(r"(?i)&\s*(#x[0-9a-f]{1,6}|#[0-9]{1,7}|[a-z]{2,8})\s*;").expect("valid regex")
    })
}

fn unescape_once(text: &str) -> String {
    entity_re()
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let entity = format!("&{};", &caps[1]);
            let decoded = html_escape::decode_html_entities(&entity);
            if decoded == entity {
                caps[0].to_string()
            } else {
                decoded.into_owned()
            }
        })
        .into_owned()
}

/// Unescapes HTML entities (including space-split forms), strips control
/// characters and collapses whitespace. Idempotent.
pub fn clean_context(raw: &str) -> String {
    // Double-escaped input ("&amp;amp;") needs repeated passes; each pass
    // strictly shortens the string, so this terminates.
    let mut text = raw.to_string();
    loop {
        let next = unescape_once(&text);
        if next == text {
            break;
        }
        text = next;
    }

    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else if ch.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

/// Noise-question patterns. A question matching any of them is dropped.
#[derive(Debug, Clone)]
pub struct QuestionFilter {
    comparison: Vec<Regex>,
    universal: Vec<String>,
}

pub const DEFAULT_UNIVERSAL_PATTERNS: &[&str] = &[
    "ship to",
    "does it ship",
    "shipping to",
    "where do you ship",
];

pub const DEFAULT_COMPARISON_PATTERNS: &[&str] = &[
    r"\bvs\.?\b",
    r"\bversus\b",
    r"\bcompared? (to|with)\b",
    r"\bdifference between\b",
    r"\bbetter than\b",
];

impl Default for QuestionFilter {
    fn default() -> Self {
        QuestionFilter::new(
            DEFAULT_COMPARISON_PATTERNS.iter().copied(),
            DEFAULT_UNIVERSAL_PATTERNS.iter().copied(),
        )
        .expect("default patterns compile")
    }
}

impl QuestionFilter {
    pub fn new<'a>(
        comparison: impl IntoIterator<Item = &'a str>,
        universal: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, regex::Error> {
        let comparison = comparison
            .into_iter()
            .map(|p| Regex::new(&format!("(?i){p}")))
            .collect::<Result<Vec<_>, _>>()?;
        let universal = universal.into_iter().map(|p| p.to_lowercase()).collect();
        Ok(QuestionFilter {
            comparison,
            universal,
        })
    }

    /// No filtering at all.
    pub fn none() -> Self {
        QuestionFilter {
            comparison: Vec::new(),
            universal: Vec::new(),
        }
    }

    pub fn is_noise(&self, question: &str) -> bool {
        let lower = question.to_lowercase();
        self.universal.iter().any(|p| lower.contains(p.as_str()))
            || self.comparison.iter().any(|re| re.is_match(&lower))
    }
}

/// Drops trailing declarative text after the final `?`. Returns `None`
/// when no question mark exists or the question is noise.
pub fn clean_question(raw: &str, filter: &QuestionFilter) -> Option<String> {
    let end = raw.rfind('?')?;
    let question = raw[..=end].trim();
    if question == "?" || filter.is_noise(question) {
        return None;
    }
    Some(question.to_string())
}
