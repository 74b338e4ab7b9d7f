//! Generation groups: keyword sets → decodes → merged candidates →
//! Jaccard-deduplicated display slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoding::{beam_search, diverse_beam_search, sample_decode, BeamConfig, DecodeConstraints, Hypothesis};
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, GeneratorSession, MaskedLogits};
use crate::nn::seeded_rng;
use crate::predictor::{KeywordLogits, PredictorModel};
use crate::selection::{
    cluster_keywords, exclude_keywords, filter_keywords, select_sampling, select_threshold, Blacklist,
    CooccurrenceGraph, SelectionConfig,
};
use crate::textproc::{extract_keywords, is_punctuation, CorpusOptions, KeywordSet, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Unconditioned generator, plain beam search.
    Mle,
    /// Threshold keyword set, beam search.
    Beam,
    /// Threshold keyword set, diverse beam search.
    DivBeam,
    /// Threshold keyword set, top-k/top-p sampling decode.
    Bsp,
    /// Sampled keyword sets, beam search per set.
    Sample,
    /// Clustered keyword sets, beam search per set.
    Cluster,
    /// Caller-supplied keyword set, beam search.
    Truth,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Mle,
        Strategy::Beam,
        Strategy::DivBeam,
        Strategy::Bsp,
        Strategy::Sample,
        Strategy::Cluster,
        Strategy::Truth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mle => "mle",
            Strategy::Beam => "beam",
            Strategy::DivBeam => "divbeam",
            Strategy::Bsp => "bsp",
            Strategy::Sample => "sample",
            Strategy::Cluster => "cluster",
            Strategy::Truth => "truth",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Token set used for Jaccard similarity: punctuation dropped.
pub fn token_set(q: &TokenSequence) -> BTreeSet<&str> {
    q.iter().filter(|t| !is_punctuation(t)).collect()
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscardReason {
    /// Too similar to an already selected candidate (index into the pool).
    Duplicate { of: usize, jaccard: f64 },
    /// All display slots were already filled.
    SlotsFull,
    /// The question mentions a keyword the request excluded.
    ExcludedKeyword { keyword: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Pool indices of selected candidates, in rank order.
    pub selected: Vec<usize>,
    pub discarded: Vec<(usize, DiscardReason)>,
}

/// Greedy deduplication over a ranked pool: a candidate is admitted iff
/// its Jaccard similarity with every admitted candidate is below
/// `threshold`, until `slots` are filled.
pub fn dedup_select(candidates: &[TokenSequence], slots: usize, threshold: f64) -> DedupOutcome {
    let sets: Vec<BTreeSet<&str>> = candidates.iter().map(token_set).collect();
    let mut out = DedupOutcome {
        selected: Vec::new(),
        discarded: Vec::new(),
    };
    for i in 0..candidates.len() {
        if out.selected.len() >= slots {
            out.discarded.push((i, DiscardReason::SlotsFull));
            continue;
        }
        let clash = out
            .selected
            .iter()
            .map(|&j| (j, jaccard(&sets[i], &sets[j])))
            .find(|&(_, s)| s >= threshold);
        match clash {
            Some((of, jaccard)) => out.discarded.push((i, DiscardReason::Duplicate { of, jaccard })),
            None => out.selected.push(i),
        }
    }
    out
}

/// Display and decoding settings of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSettings {
    pub selection: SelectionConfig,
    pub beam: BeamConfig,
    pub constraints: DecodeConstraints,
    pub slots: usize,
    /// Total candidate budget across all keyword sets.
    pub candidates: usize,
    pub dedup_threshold: f64,
}

impl Default for GroupSettings {
    fn default() -> Self {
        GroupSettings {
            selection: SelectionConfig::default(),
            beam: BeamConfig::default(),
            constraints: DecodeConstraints::default(),
            slots: 3,
            candidates: 6,
            dedup_threshold: 0.5,
        }
    }
}

impl GroupSettings {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.beam.validate()?;
        if self.slots == 0 || self.candidates < self.slots {
            return Err(Error::Config(format!(
                "candidate budget {} must be at least slots {} > 0",
                self.candidates, self.slots
            )));
        }
        if self.constraints.min_same_token_gap == 0 {
            return Err(Error::Config("min_same_token_gap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-request options.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupOptions {
    pub excluded: KeywordSet,
    pub truth_keywords: Option<KeywordSet>,
    pub seed: u64,
    pub slots: Option<usize>,
    pub candidates: Option<usize>,
    /// Skip blacklist filtering.
    pub no_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredKeyword {
    pub keyword: String,
    pub prob: f64,
}

/// What happened to one keyword set before decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSetAudit {
    pub selected: KeywordSet,
    /// Blacklisted keywords with the pattern that matched the context.
    pub filtered: BTreeMap<String, String>,
    pub excluded: KeywordSet,
    /// Keywords actually fed to the bridge.
    pub used: KeywordSet,
    /// The set became empty and decoding fell back to zero `p̃`.
    pub unconditioned_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub question: TokenSequence,
    /// Keywords extracted from the generated question.
    pub keywords: KeywordSet,
    pub hypothesis: Hypothesis,
    /// Index of the keyword set this candidate was decoded from.
    pub set_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedMember {
    pub member: GroupMember,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationGroup {
    pub strategy: Strategy,
    pub context: TokenSequence,
    pub selected: Vec<GroupMember>,
    pub discarded: Vec<DiscardedMember>,
    pub predicted: Vec<ScoredKeyword>,
    pub keyword_sets: Vec<KeywordSetAudit>,
    pub warnings: Vec<String>,
}

impl GenerationGroup {
    pub fn questions(&self) -> Vec<TokenSequence> {
        self.selected.iter().map(|m| m.question.clone()).collect()
    }
}

/// Trained models plus everything needed to serve generation groups.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub predictor: PredictorModel,
    pub generator: GeneratorModel,
    /// Separately trained unconditioned generator for `mle`.
    pub mle_generator: Option<GeneratorModel>,
    pub graph: CooccurrenceGraph,
    pub blacklist: Blacklist,
    pub settings: GroupSettings,
    pub corpus_options: CorpusOptions,
}

impl Pipeline {
    pub fn new(predictor: PredictorModel, generator: GeneratorModel, graph: CooccurrenceGraph) -> Result<Self> {
        if predictor.keyword_vocab.hash() != generator.keyword_vocab.hash() {
            return Err(Error::Config("predictor and generator keyword vocabularies differ".into()));
        }
        if graph.num_nodes() != predictor.num_keywords() {
            return Err(Error::Config(format!(
                "co-occurrence graph has {} nodes for {} keywords",
                graph.num_nodes(),
                predictor.num_keywords()
            )));
        }
        Ok(Pipeline {
            predictor,
            generator,
            mle_generator: None,
            graph,
            blacklist: Blacklist::default_patterns(),
            settings: GroupSettings::default(),
            corpus_options: CorpusOptions::default(),
        })
    }

    /// Cleaned, tokenized and truncated context.
    pub fn prepare_context(&self, raw: &str) -> Result<TokenSequence> {
        let ctx = self.corpus_options.process_context(raw);
        if ctx.is_empty() {
            return Err(Error::EmptyContext);
        }
        Ok(ctx)
    }

    /// Keywords ranked by predicted probability.
    pub fn ranked_keywords(&self, logits: &KeywordLogits, limit: usize) -> Vec<ScoredKeyword> {
        logits
            .ranking()
            .into_iter()
            .take(limit)
            .map(|id| ScoredKeyword {
                keyword: self.predictor.keyword_vocab.entry(id).to_string(),
                prob: logits.probs[id],
            })
            .collect()
    }

    fn names(&self, ids: &[usize]) -> KeywordSet {
        ids.iter()
            .map(|&i| self.predictor.keyword_vocab.entry(i).to_string())
            .collect()
    }

    /// Conditioning keyword sets before filtering.
    fn keyword_sets(&self, strategy: Strategy, logits: &KeywordLogits, options: &GroupOptions) -> Result<Vec<KeywordSet>> {
        let sel = &self.settings.selection;
        Ok(match strategy {
            Strategy::Mle => Vec::new(),
            Strategy::Beam | Strategy::DivBeam | Strategy::Bsp => {
                vec![self.names(&select_threshold(&logits.probs, sel.threshold))]
            }
            Strategy::Sample => select_sampling(&logits.logits, sel, &mut seeded_rng(options.seed))?
                .iter()
                .map(|ids| self.names(ids))
                .collect(),
            Strategy::Cluster => {
                let top: Vec<usize> = logits.ranking().into_iter().take(sel.cluster_top_k).collect();
                let groups = sel.clusters.min(top.len());
                cluster_keywords(&self.graph, &top, groups, options.seed)?
                    .iter()
                    .map(|ids| self.names(ids))
                    .collect()
            }
            Strategy::Truth => {
                let truth = options.truth_keywords.as_ref().ok_or(Error::MissingTruthKeywords)?;
                self.predictor.keyword_vocab.ids(truth)?;
                vec![truth.clone()]
            }
        })
    }

    fn decode(
        &self,
        strategy: Strategy,
        session: &GeneratorSession<'_>,
        width: usize,
        seed: u64,
    ) -> Result<Vec<Hypothesis>> {
        let s = &self.settings;
        let cfg = BeamConfig {
            beam_size: width,
            ..s.beam.clone()
        };
        match strategy {
            Strategy::DivBeam => diverse_beam_search(session, &cfg, &s.constraints),
            Strategy::Bsp => sample_decode(session, &cfg, &mut seeded_rng(seed), &s.constraints),
            _ => beam_search(session, &BeamConfig { diverse_groups: 1, ..cfg }, &s.constraints),
        }
    }

    /// Runs one strategy end to end on a raw context.
    pub fn generate_group(&self, raw_context: &str, strategy: Strategy, options: &GroupOptions) -> Result<GenerationGroup> {
        let context = self.prepare_context(raw_context)?;
        self.generate_for_tokens(&context, strategy, options)
    }

    /// As [`Pipeline::generate_group`] for an already tokenized context.
    pub fn generate_for_tokens(&self, context: &TokenSequence, strategy: Strategy, options: &GroupOptions) -> Result<GenerationGroup> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let slots = options.slots.unwrap_or(self.settings.slots);
        let budget = options.candidates.unwrap_or(self.settings.candidates).max(slots);
        let logits = self.predictor.predict(context)?;
        let sel = &self.settings.selection;
        let mut group = GenerationGroup {
            strategy,
            context: context.clone(),
            selected: Vec::new(),
            discarded: Vec::new(),
            predicted: self.ranked_keywords(&logits, sel.top_k.max(sel.cluster_top_k)),
            keyword_sets: Vec::new(),
            warnings: Vec::new(),
        };

        // (set index, rank in set, hypothesis)
        let mut pool: Vec<(Option<usize>, usize, Hypothesis)> = Vec::new();
        if strategy == Strategy::Mle {
            let session = match &self.mle_generator {
                Some(g) => g.unconditioned_session(context)?,
                None => self.generator.unconditioned_session(context)?,
            };
            for (rank, h) in self.decode(strategy, &session, budget, options.seed)?.into_iter().take(budget).enumerate() {
                pool.push((None, rank, Hypothesis { origin: "mle".into(), ..h }));
            }
        } else {
            let sets = self.keyword_sets(strategy, &logits, options)?;
            let per_set = budget.div_ceil(sets.len().max(1));
            for (i, selected) in sets.into_iter().enumerate() {
                let (kept, filtered) = if options.no_filter {
                    (selected.clone(), BTreeMap::new())
                } else {
                    let (kept, removed) = filter_keywords(&selected, context, &self.blacklist);
                    let text = context.to_string().to_lowercase();
                    let reasons = removed
                        .into_iter()
                        .map(|k| {
                            let pattern = self.blacklist.trigger(&k, &text).unwrap_or_default().to_string();
                            (k, pattern)
                        })
                        .collect();
                    (kept, reasons)
                };
                let used = exclude_keywords(&kept, &options.excluded);
                let excluded: KeywordSet = kept.intersection(&options.excluded).cloned().collect();
                let fallback = used.is_empty();
                let masked = if fallback {
                    group.warnings.push(format!(
                        "keyword set {i} is empty after filtering; decoding without keyword conditioning"
                    ));
                    MaskedLogits::zeros(self.generator.num_keywords())
                } else {
                    self.generator.mask(&logits, &used)?
                };
                let session = self.generator.session(context, Some(&masked))?;
                let width = if strategy == Strategy::DivBeam { budget } else { per_set };
                let hyps = self.decode(strategy, &session, width, options.seed.wrapping_add(i as u64))?;
                for (rank, mut h) in hyps.into_iter().take(per_set).enumerate() {
                    h.keyword_set = used.clone();
                    h.origin = format!("{strategy}:{i}:{}", h.origin);
                    pool.push((Some(i), rank, h));
                }
                group.keyword_sets.push(KeywordSetAudit {
                    selected,
                    filtered,
                    excluded,
                    used,
                    unconditioned_fallback: fallback,
                });
            }
        }

        // interleave by per-set rank, then by score
        pool.sort_by(|a, b| a.1.cmp(&b.1).then(b.2.score.total_cmp(&a.2.score)).then(a.0.cmp(&b.0)));
        pool.truncate(budget);
        let mut members = Vec::with_capacity(pool.len());
        for (set_index, _, hypothesis) in pool {
            let question = TokenSequence::from_tokens(self.generator.token_vocab.decode(&hypothesis.tokens));
            let keywords = extract_keywords(
                &question,
                &self.corpus_options.stopwords,
                self.corpus_options.content_lexicon.as_ref(),
            );
            let member = GroupMember {
                question,
                keywords,
                hypothesis,
                set_index,
            };
            match member.keywords.intersection(&options.excluded).next() {
                Some(k) => group.discarded.push(DiscardedMember {
                    reason: DiscardReason::ExcludedKeyword { keyword: k.clone() },
                    member,
                }),
                None => members.push(member),
            }
        }
        let questions: Vec<TokenSequence> = members.iter().map(|m| m.question.clone()).collect();
        let outcome = dedup_select(&questions, slots, self.settings.dedup_threshold);
        group.selected = outcome.selected.iter().map(|&i| members[i].clone()).collect();
        group.discarded.extend(outcome.discarded.into_iter().map(|(i, reason)| DiscardedMember {
            member: members[i].clone(),
            reason,
        }));
        Ok(group)
    }
}
