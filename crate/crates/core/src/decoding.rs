//! Beam search, Hamming-diverse beam search and top-k/top-p sampling over
//! any autoregressive [`StepModel`], with repeat-blocking constraints.

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::textproc::KeywordSet;

/// An autoregressive model producing next-token log-probabilities.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn eos(&self) -> usize;
    /// Tokens that are never emitted (padding, start symbol, ...).
    fn is_banned(&self, token: usize) -> bool;
    fn initial_state(&self) -> Self::State;
    /// Log-probabilities for position `step` given the previous token
    /// (`None` at step 0).
    fn step(&self, state: &Self::State, prev: Option<usize>, step: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated ids, including the trailing EOS when one was emitted.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
    /// `log_prob / len(tokens)`.
    pub score: f64,
    pub keyword_set: KeywordSet,
    pub origin: String,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, log_prob: f64, origin: &str) -> Self {
        let score = log_prob / tokens.len().max(1) as f64;
        Hypothesis {
            tokens,
            log_prob,
            score,
            keyword_set: KeywordSet::new(),
            origin: origin.to_string(),
        }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self, eos: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConstraints {
    /// No bigram may appear twice.
    pub block_repeat_bigrams: bool,
    /// Two equal tokens must be at least this many positions apart.
    pub min_same_token_gap: usize,
}

impl Default for DecodeConstraints {
    fn default() -> Self {
        DecodeConstraints {
            block_repeat_bigrams: true,
            min_same_token_gap: 3,
        }
    }
}

impl DecodeConstraints {
    pub fn none() -> Self {
        DecodeConstraints {
            block_repeat_bigrams: false,
            min_same_token_gap: 1,
        }
    }

    /// Whether `token` may follow `prefix`. EOS is always allowed.
    pub fn allows(&self, prefix: &[usize], token: usize, eos: usize) -> bool {
        if token == eos {
            return true;
        }
        let n = prefix.len();
        if self.min_same_token_gap > 1 {
            let window = (self.min_same_token_gap - 1).min(n);
            if prefix[n - window..].contains(&token) {
                return false;
            }
        }
        if self.block_repeat_bigrams {
            if let Some(&last) = prefix.last() {
                if prefix.windows(2).any(|w| w[0] == last && w[1] == token) {
                    return false;
                }
            }
        }
        true
    }

    /// Post-hoc check of a full sequence.
    pub fn satisfied_by(&self, tokens: &[usize], eos: usize) -> bool {
        (0..tokens.len()).all(|i| self.allows(&tokens[..i], tokens[i], eos))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub diverse_groups: usize,
    /// Hamming penalty λ for diverse beam search.
    pub diversity_strength: f64,
    /// 0 disables top-k truncation in sampling.
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 6,
            diverse_groups: 3,
            diversity_strength: 0.5,
            top_k: 10,
            top_p: 0.9,
            max_len: 20,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config("beam_size and max_len must be positive".into()));
        }
        if self.diverse_groups == 0
            || self.beam_size < self.diverse_groups
            || !self.beam_size.is_multiple_of(self.diverse_groups)
        {
            return Err(Error::Config(format!(
                "beam_size {} must be a positive multiple of diverse_groups {}",
                self.beam_size, self.diverse_groups
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

struct Candidate {
    parent: usize,
    token: usize,
    log_prob: f64,
    key: f64,
}

fn rank_finished(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
}

/// Beam state for a single (group of a) search.
struct Beam<S> {
    width: usize,
    live: Vec<Live<S>>,
    finished: Vec<Hypothesis>,
}

impl<S: Clone> Beam<S> {
    fn new(width: usize, initial: S) -> Self {
        Beam {
            width,
            live: vec![Live {
                tokens: Vec::new(),
                log_prob: 0.0,
                state: initial,
            }],
            finished: Vec::new(),
        }
    }

    fn open_slots(&self) -> usize {
        self.width.saturating_sub(self.finished.len())
    }

    /// Expands every live hypothesis, selecting by `log_prob - penalty[token]`.
    /// Returns the tokens chosen this step.
    fn advance<M: StepModel<State = S>>(
        &mut self,
        model: &M,
        constraints: &DecodeConstraints,
        step: usize,
        penalty: Option<&[f64]>,
        origin: &str,
    ) -> Result<Vec<usize>> {
        let slots = self.open_slots();
        if slots == 0 || self.live.is_empty() {
            self.live.clear();
            return Ok(Vec::new());
        }
        let eos = model.eos();
        let mut candidates = Vec::new();
        let mut next_states = Vec::with_capacity(self.live.len());
        for (parent, h) in self.live.iter().enumerate() {
            let (logp, state) = model.step(&h.state, h.tokens.last().copied(), step)?;
            next_states.push(state);
            let before = candidates.len();
            for (token, &lp) in logp.iter().enumerate() {
                if model.is_banned(token) || lp == f64::NEG_INFINITY {
                    continue;
                }
                if !constraints.allows(&h.tokens, token, eos) {
                    continue;
                }
                let log_prob = h.log_prob + lp;
                let key = log_prob - penalty.map_or(0.0, |p| p[token]);
                candidates.push(Candidate {
                    parent,
                    token,
                    log_prob,
                    key,
                });
            }
            if candidates.len() == before {
                // every continuation vetoed: force EOS
                let log_prob = h.log_prob + logp[eos];
                candidates.push(Candidate {
                    parent,
                    token: eos,
                    log_prob,
                    key: log_prob,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.key
                .total_cmp(&a.key)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        candidates.truncate(slots);

        let mut chosen = Vec::with_capacity(candidates.len());
        let mut live = Vec::new();
        for c in candidates {
            chosen.push(c.token);
            let mut tokens = self.live[c.parent].tokens.clone();
            tokens.push(c.token);
            if c.token == eos {
                self.finished.push(Hypothesis::new(tokens, c.log_prob, origin));
            } else {
                live.push(Live {
                    tokens,
                    log_prob: c.log_prob,
                    state: next_states[c.parent].clone(),
                });
            }
        }
        self.live = live;
        Ok(chosen)
    }

    fn finish(mut self, origin: &str) -> Vec<Hypothesis> {
        for h in self.live.drain(..) {
            self.finished.push(Hypothesis::new(h.tokens, h.log_prob, origin));
        }
        rank_finished(&mut self.finished);
        self.finished
    }
}

/// Length-normalized beam search. Completed hypotheses leave the beam;
/// the search stops when no live hypothesis remains or at `max_len`.
pub fn beam_search<M: StepModel>(model: &M, cfg: &BeamConfig, constraints: &DecodeConstraints) -> Result<Vec<Hypothesis>> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(Error::Config("beam_size and max_len must be positive".into()));
    }
    let mut beam = Beam::new(cfg.beam_size, model.initial_state());
    for step in 0..cfg.max_len {
        if beam.live.is_empty() {
            break;
        }
        beam.advance(model, constraints, step, None, "beam")?;
    }
    Ok(beam.finish("beam"))
}

/// Diverse beam search with a Hamming penalty. Groups advance in lockstep;
/// at each step group `g` pays `λ · count` for every token already chosen
/// at this step by groups `0..g`. Hypotheses carry `divbeam:<g>` origins and
/// are returned ranked by score.
pub fn diverse_beam_search<M: StepModel>(model: &M, cfg: &BeamConfig, constraints: &DecodeConstraints) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let groups = cfg.diverse_groups;
    let width = cfg.beam_size / groups;
    let origins: Vec<String> = (0..groups).map(|g| format!("divbeam:{g}")).collect();
    let mut beams: Vec<Beam<M::State>> = (0..groups).map(|_| Beam::new(width, model.initial_state())).collect();
    for step in 0..cfg.max_len {
        if beams.iter().all(|b| b.live.is_empty()) {
            break;
        }
        let mut counts = vec![0.0; model.vocab_size()];
        for (g, beam) in beams.iter_mut().enumerate() {
            let penalty: Vec<f64> = counts.iter().map(|c| cfg.diversity_strength * c).collect();
            for token in beam.advance(model, constraints, step, Some(&penalty), &origins[g])? {
                counts[token] += 1.0;
            }
        }
    }
    let mut out: Vec<Hypothesis> = beams
        .into_iter()
        .zip(&origins)
        .flat_map(|(b, o)| b.finish(o))
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.origin.cmp(&b.origin)));
    Ok(out)
}

/// Indices kept by top-k then top-p truncation of `probs` (which need not
/// be normalized). Zero-probability entries are never kept.
pub fn top_k_top_p(probs: &[f64], top_k: usize, top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    if top_k > 0 {
        order.truncate(top_k);
    }
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i] / total;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    kept
}

/// Draws an index from `kept` proportionally to `probs`.
pub(crate) fn draw(probs: &[f64], kept: &[usize], rng: &mut Rng) -> usize {
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    let mut u = rng.gen::<f64>() * total;
    for &i in kept {
        u -= probs[i];
        if u < 0.0 {
            return i;
        }
    }
    *kept.last().expect("nonempty candidate set")
}

/// Ancestral sampling with per-step top-k/top-p truncation. Constraints
/// mask tokens before truncation. Draws `cfg.beam_size` sequences; scores
/// use the untruncated model log-probabilities.
pub fn sample_decode<M: StepModel>(
    model: &M,
    cfg: &BeamConfig,
    rng: &mut Rng,
    constraints: &DecodeConstraints,
) -> Result<Vec<Hypothesis>> {
    let eos = model.eos();
    let mut out = Vec::with_capacity(cfg.beam_size);
    for _ in 0..cfg.beam_size {
        let mut state = model.initial_state();
        let mut tokens: Vec<usize> = Vec::new();
        let mut log_prob = 0.0;
        for step in 0..cfg.max_len {
            let (logp, next) = model.step(&state, tokens.last().copied(), step)?;
            state = next;
            let probs: Vec<f64> = logp
                .iter()
                .enumerate()
                .map(|(t, &lp)| {
                    if model.is_banned(t) || !constraints.allows(&tokens, t, eos) {
                        0.0
                    } else {
                        lp.exp()
                    }
                })
                .collect();
            let kept = top_k_top_p(&probs, cfg.top_k, cfg.top_p);
            let token = if kept.is_empty() { eos } else { draw(&probs, &kept, rng) };
            log_prob += logp[token];
            tokens.push(token);
            if token == eos {
                break;
            }
        }
        out.push(Hypothesis::new(tokens, log_prob, "sample"));
    }
    Ok(out)
}

/// Ordering helper shared with callers that merge hypothesis pools.
pub fn by_score_desc(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score)
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    /// Hand-specified bigram language model over `n` tokens; token 0 is EOS.
    /// `table[prev+1][next]` holds probabilities (row 0 is the start row).
    pub struct ToyModel {
        pub table: Vec<Vec<f64>>,
    }

    impl StepModel for ToyModel {
        type State = ();

        fn vocab_size(&self) -> usize {
            self.table[0].len()
        }
        fn eos(&self) -> usize {
            0
        }
        fn is_banned(&self, _token: usize) -> bool {
            false
        }
        fn initial_state(&self) {}
        fn step(&self, _state: &(), prev: Option<usize>, _step: usize) -> Result<(Vec<f64>, ())> {
            let row = prev.map_or(0, |p| p + 1);
            Ok((self.table[row].iter().map(|p| p.ln()).collect(), ()))
        }
    }

    pub fn toy() -> ToyModel {
        ToyModel {
            table: vec![
                vec![0.05, 0.50, 0.30, 0.10, 0.05],
                vec![1.0, 1e-9, 1e-9, 1e-9, 1e-9],
                vec![0.10, 0.05, 0.15, 0.40, 0.30],
                vec![0.30, 0.35, 0.05, 0.20, 0.10],
                vec![0.45, 0.10, 0.25, 0.05, 0.15],
                vec![0.25, 0.15, 0.35, 0.15, 0.10],
            ],
        }
    }

    /// Every sequence the decoder could emit, scored and ranked.
    pub fn enumerate<M: StepModel>(model: &M, max_len: usize, constraints: &DecodeConstraints) -> Vec<Hypothesis> {
        fn rec<M: StepModel>(
            model: &M,
            state: &M::State,
            tokens: &mut Vec<usize>,
            lp: f64,
            max_len: usize,
            c: &DecodeConstraints,
            out: &mut Vec<Hypothesis>,
        ) {
            let step = tokens.len();
            if step == max_len {
                out.push(Hypothesis::new(tokens.clone(), lp, "beam"));
                return;
            }
            let (logp, next) = model.step(state, tokens.last().copied(), step).unwrap();
            let eos = model.eos();
            let allowed: Vec<usize> = (0..logp.len())
                .filter(|&t| !model.is_banned(t) && c.allows(tokens, t, eos))
                .collect();
            let allowed = if allowed.is_empty() { vec![eos] } else { allowed };
            for t in allowed {
                tokens.push(t);
                if t == eos {
                    out.push(Hypothesis::new(tokens.clone(), lp + logp[t], "beam"));
                } else {
                    rec(model, &next, tokens, lp + logp[t], max_len, c, out);
                }
                tokens.pop();
            }
        }
        let mut out = Vec::new();
        rec(model, &model.initial_state(), &mut Vec::new(), 0.0, max_len, constraints, &mut out);
        rank_finished(&mut out);
        out
    }
}
