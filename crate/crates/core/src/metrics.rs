//! Automatic evaluation: BLEU (corpus, sentence, pairwise, average),
//! simplified METEOR, Distinct-n, keyword response rate and P@5.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{is_punctuation, lemma, KeywordSet, TokenSequence};

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and totals per order for one hypothesis.
#[derive(Debug, Clone, Copy, Default)]
struct BleuStats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn bleu_stats(hyp: &TokenSequence, refs: &[TokenSequence]) -> BleuStats {
    let h = hyp.tokens();
    let mut stats = BleuStats {
        hyp_len: h.len(),
        ..Default::default()
    };
    // closest reference length, shorter wins ties
    stats.ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as isize - h.len() as isize).unsigned_abs(), l))
        .unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(h, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r.tokens(), n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        stats.totals[n - 1] = h.len().saturating_sub(n - 1);
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Combines statistics into a percentage. `smooth` adds one to numerator
/// and denominator of orders ≥ 2.
fn bleu_from_stats(s: &BleuStats, smooth: bool) -> f64 {
    if s.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = if smooth && n > 0 {
            (s.matches[n] + 1, s.totals[n] + 1)
        } else {
            (s.matches[n], s.totals[n])
        };
        if t == 0 {
            // no n-grams of this order anywhere: the order carries no evidence
            continue;
        }
        if m == 0 {
            return 0.0;
        }
        log_sum += 0.25 * (m as f64 / t as f64).ln();
    }
    100.0 * log_sum.exp() * brevity_penalty(s.hyp_len, s.ref_len)
}

/// Corpus-level BLEU-4 with max-clipped multi-reference counts and the
/// closest-reference brevity penalty, as a percentage.
pub fn corpus_bleu(hyps: &[TokenSequence], refs: &[Vec<TokenSequence>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} reference lists",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&bleu_stats(h, r));
    }
    Ok(bleu_from_stats(&total, false))
}

/// Smoothed sentence-level BLEU-4 percentage.
pub fn sentence_bleu(hyp: &TokenSequence, refs: &[TokenSequence]) -> f64 {
    bleu_from_stats(&bleu_stats(hyp, refs), true)
}

/// Mean sentence BLEU over ordered pairs, each member scored against one
/// other member as the sole reference.
pub fn pairwise_bleu(group: &[TokenSequence]) -> Result<f64> {
    if group.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise BLEU needs at least two hypotheses".into(),
        ));
    }
    let mut sum = 0.0;
    for (i, h) in group.iter().enumerate() {
        for (j, r) in group.iter().enumerate() {
            if i != j {
                sum += sentence_bleu(h, std::slice::from_ref(r));
            }
        }
    }
    let n = group.len();
    Ok(sum / (n * (n - 1)) as f64)
}

/// Mean sentence BLEU of each member against all references.
pub fn avg_bleu(group: &[TokenSequence], refs: &[TokenSequence]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    Ok(group.iter().map(|h| sentence_bleu(h, refs)).sum::<f64>() / group.len() as f64)
}

/// Unique n-grams over total n-grams across all questions.
pub fn distinct_n(questions: &[TokenSequence], n: usize) -> Result<f64> {
    if questions.is_empty() || n == 0 {
        return Err(Error::InvalidArgument("distinct-n needs questions and n ≥ 1".into()));
    }
    let mut unique: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for q in questions {
        if q.len() >= n {
            for w in q.tokens().windows(n) {
                unique.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        tracing::warn!(n, "all questions shorter than n; distinct-n is 0");
        return Ok(0.0);
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Aligns hypothesis unigrams to reference positions, exact matches first,
/// then lemma matches. Returns `(hyp position, ref position)` sorted by
/// hypothesis position.
fn meteor_alignment(hyp: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut hyp_ref: Vec<Option<usize>> = vec![None; hyp.len()];
    let hyp_lemmas: Vec<String> = hyp.iter().map(|t| lemma(t)).collect();
    let ref_lemmas: Vec<String> = reference.iter().map(|t| lemma(t)).collect();
    for stage in 0..2 {
        let mut prev: Option<usize> = None;
        for i in 0..hyp.len() {
            if let Some(r) = hyp_ref[i] {
                prev = Some(r);
                continue;
            }
            let matches = |j: usize| {
                !ref_used[j]
                    && if stage == 0 {
                        hyp[i] == reference[j]
                    } else {
                        hyp_lemmas[i] == ref_lemmas[j]
                    }
            };
            // prefer continuing the current chunk
            let next = prev.map(|p| p + 1).filter(|&j| j < reference.len() && matches(j));
            if let Some(j) = next.or_else(|| (0..reference.len()).find(|&j| matches(j))) {
                ref_used[j] = true;
                hyp_ref[i] = Some(j);
                prev = Some(j);
            } else {
                prev = None;
            }
        }
    }
    hyp_ref
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect()
}

/// Simplified METEOR of one hypothesis against one reference, in [0, 1].
pub fn meteor_sentence(hyp: &TokenSequence, reference: &TokenSequence) -> f64 {
    let align = meteor_alignment(hyp.tokens(), reference.tokens());
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let mut chunks = 1;
    for w in align.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// Corpus METEOR percentage: best reference per hypothesis, averaged.
pub fn meteor_simplified(hyps: &[TokenSequence], refs: &[Vec<TokenSequence>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} reference lists",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, rs)| rs.iter().map(|r| meteor_sentence(h, r)).fold(0.0, f64::max))
        .sum();
    Ok(100.0 * total / hyps.len() as f64)
}

/// Fraction of conditioned keywords whose lemma appears in the generation.
/// `None` when the keyword set is empty.
pub fn keyword_response(keywords: &KeywordSet, generated: &TokenSequence) -> Option<f64> {
    if keywords.is_empty() {
        return None;
    }
    let lemmas: HashSet<String> = generated
        .iter()
        .filter(|t| !is_punctuation(t))
        .flat_map(|t| [t.to_string(), lemma(t)])
        .collect();
    let hit = keywords.iter().filter(|k| lemmas.contains(k.as_str())).count();
    Some(hit as f64 / keywords.len() as f64)
}

/// Macro-averaged response rate; records with empty keyword sets are skipped.
pub fn response_rate(records: &[(KeywordSet, TokenSequence)]) -> Result<f64> {
    let values: Vec<f64> = records
        .iter()
        .filter_map(|(k, g)| keyword_response(k, g))
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "response rate needs at least one nonempty keyword set".into(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Summary of one evaluated system. Percentages where customary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub distinct_3: Option<f64>,
    pub bleu: Option<f64>,
    pub meteor_simplified: Option<f64>,
    pub pairwise_bleu: Option<f64>,
    pub avg_bleu: Option<f64>,
    pub p_at_5: Option<f64>,
    pub response_rate: Option<f64>,
    pub mean_length: Option<f64>,
}

/// One context's generated group with its references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEval {
    pub id: String,
    pub group: Vec<TokenSequence>,
    pub references: Vec<TokenSequence>,
    /// Conditioning keyword set per group member, when known.
    #[serde(default)]
    pub keyword_sets: Vec<Option<KeywordSet>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub id: String,
    pub size: usize,
    pub pairwise_bleu: Option<f64>,
    pub avg_bleu: Option<f64>,
    pub response_rate: Option<f64>,
}

/// Group-level report plus per-record values.
pub fn evaluate_groups(records: &[GroupEval]) -> Result<(MetricReport, Vec<RecordMetrics>)> {
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut responses = Vec::new();
    let mut per_record = Vec::with_capacity(records.len());
    for rec in records {
        let mut rec_resp = Vec::new();
        for (i, h) in rec.group.iter().enumerate() {
            if !rec.references.is_empty() {
                hyps.push(h.clone());
                refs.push(rec.references.clone());
            }
            if let Some(Some(k)) = rec.keyword_sets.get(i) {
                if let Some(r) = keyword_response(k, h) {
                    rec_resp.push(r);
                    responses.push(r);
                }
            }
        }
        per_record.push(RecordMetrics {
            id: rec.id.clone(),
            size: rec.group.len(),
            pairwise_bleu: pairwise_bleu(&rec.group).ok(),
            avg_bleu: if rec.references.is_empty() {
                None
            } else {
                avg_bleu(&rec.group, &rec.references).ok()
            },
            response_rate: mean(&rec_resp),
        });
    }
    let all: Vec<TokenSequence> = records.iter().flat_map(|r| r.group.iter().cloned()).collect();
    let report = MetricReport {
        records: records.len(),
        distinct_3: if all.is_empty() { None } else { Some(100.0 * distinct_n(&all, 3)?) },
        bleu: if hyps.is_empty() { None } else { Some(corpus_bleu(&hyps, &refs)?) },
        meteor_simplified: if hyps.is_empty() { None } else { Some(meteor_simplified(&hyps, &refs)?) },
        pairwise_bleu: mean(&per_record.iter().filter_map(|r| r.pairwise_bleu).collect::<Vec<_>>()),
        avg_bleu: mean(&per_record.iter().filter_map(|r| r.avg_bleu).collect::<Vec<_>>()),
        p_at_5: None,
        response_rate: mean(&responses).map(|r| 100.0 * r),
        mean_length: mean(&all.iter().map(|q| q.len() as f64).collect::<Vec<_>>()),
    };
    Ok((report, per_record))
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
