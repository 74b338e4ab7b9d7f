//! Conditioning keyword set selection and context-based keyword filtering.

mod cluster;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::decoding::top_k_top_p;
use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::textproc::{KeywordSet, TokenSequence};

pub use cluster::{
    build_cooccurrence, cluster_keywords, normalized_cut, CooccurrenceGraph, SELF_WEIGHT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Probability threshold α.
    pub threshold: f64,
    /// Top-K cut before nucleus filtering.
    pub top_k: usize,
    pub top_p: f64,
    /// Keywords drawn per sampled set.
    pub sample_k: usize,
    /// Number of sampled keyword sets.
    pub n_samples: usize,
    /// Number of keyword clusters g.
    pub clusters: usize,
    /// Size of the top keyword subgraph that is clustered.
    pub cluster_top_k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            threshold: 0.07,
            top_k: 6,
            top_p: 0.9,
            sample_k: 3,
            n_samples: 2,
            clusters: 2,
            cluster_top_k: 6,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.sample_k == 0 || self.sample_k > self.top_k {
            return bad(format!("sample_k {} must be in 1..={}", self.sample_k, self.top_k));
        }
        if self.clusters == 0 || self.clusters > self.cluster_top_k {
            return bad(format!(
                "clusters {} must be in 1..={}",
                self.clusters, self.cluster_top_k
            ));
        }
        Ok(())
    }
}

/// Ids whose probability strictly exceeds `alpha`, in id order.
pub fn select_threshold(probs: &[f64], alpha: f64) -> Vec<usize> {
    (0..probs.len()).filter(|&i| probs[i] > alpha).collect()
}

/// Draws `n_samples` keyword sets. Logits are softmax-normalized, cut to
/// the top-K, then to the smallest prefix holding `top_p` of the remaining
/// mass; `sample_k` ids are drawn without replacement from the survivors.
/// Each set is returned in draw order.
pub fn select_sampling(logits: &[f64], cfg: &SelectionConfig, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if logits.len() < cfg.top_k {
        return Err(Error::InvalidArgument(format!(
            "sampling needs at least {} keywords, have {}",
            cfg.top_k,
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|e| e / total).collect();
    let survivors = top_k_top_p(&probs, cfg.top_k, cfg.top_p);
    let mut sets = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let mut pool = survivors.clone();
        let mut drawn = Vec::with_capacity(cfg.sample_k);
        while drawn.len() < cfg.sample_k && !pool.is_empty() {
            let mass: f64 = pool.iter().map(|&i| probs[i]).sum();
            let mut u = rng.gen::<f64>() * mass;
            let mut pick = pool.len() - 1;
            for (j, &i) in pool.iter().enumerate() {
                u -= probs[i];
                if u < 0.0 {
                    pick = j;
                    break;
                }
            }
            drawn.push(pool.remove(pick));
        }
        sets.push(drawn);
    }
    Ok(sets)
}

/// Set difference `keywords \ excluded`.
pub fn exclude_keywords(keywords: &KeywordSet, excluded: &KeywordSet) -> KeywordSet {
    keywords.difference(excluded).cloned().collect()
}

#[derive(Debug, Clone)]
enum Pattern {
    Substring(String),
    Regex(Regex),
}

/// Keyword → trigger patterns. A pattern is a case-insensitive substring
/// of the space-joined context, or a regex when written as `re:<regex>`.
#[derive(Debug, Clone, Default)]
pub struct Blacklist {
    raw: BTreeMap<String, Vec<String>>,
    compiled: BTreeMap<String, Vec<Pattern>>,
}

const DEFAULT_BLACKLIST: &str = include_str!("default_blacklist.json");

impl Blacklist {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut compiled = BTreeMap::new();
        for (keyword, patterns) in &raw {
            let mut out = Vec::with_capacity(patterns.len());
            for p in patterns {
                if p.trim().is_empty() {
                    return Err(Error::Config(format!("empty blacklist pattern for `{keyword}`")));
                }
                out.push(match p.strip_prefix("re:") {
                    Some(re) => Pattern::Regex(
                        RegexBuilder::new(re)
                            .case_insensitive(true)
                            .build()
                            .map_err(|e| Error::Config(format!("blacklist pattern for `{keyword}`: {e}")))?,
                    ),
                    None => Pattern::Substring(p.to_lowercase()),
                });
            }
            compiled.insert(keyword.clone(), out);
        }
        Ok(Blacklist { raw, compiled })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The small illustrative blacklist shipped with the crate.
    pub fn default_patterns() -> Self {
        Self::from_json(DEFAULT_BLACKLIST).expect("bundled blacklist is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn patterns(&self) -> &BTreeMap<String, Vec<String>> {
        &self.raw
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Whether any pattern of `keyword` matches the lowercased context text.
    pub fn triggers(&self, keyword: &str, context_text: &str) -> bool {
        self.trigger(keyword, context_text).is_some()
    }

    /// The first pattern of `keyword` matching the lowercased context text.
    pub fn trigger(&self, keyword: &str, context_text: &str) -> Option<&str> {
        let compiled = self.compiled.get(keyword)?;
        let pos = compiled.iter().position(|p| match p {
            Pattern::Substring(s) => context_text.contains(s.as_str()),
            Pattern::Regex(re) => re.is_match(context_text),
        })?;
        Some(self.raw[keyword][pos].as_str())
    }
}

/// Splits `keywords` into (kept, removed) by blacklist matches on `context`.
pub fn filter_keywords(keywords: &KeywordSet, context: &TokenSequence, blacklist: &Blacklist) -> (KeywordSet, KeywordSet) {
    let text = context.to_string().to_lowercase();
    keywords
        .iter()
        .cloned()
        .partition(|k| !blacklist.triggers(k, &text))
}
