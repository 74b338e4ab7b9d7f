//! Beam search on hand-specified toy language models against exhaustive
//! enumeration, and zero-penalty diverse beam search against plain beams.

use kpcnet_core::decoding::{beam_search, diverse_beam_search, BeamConfig, DecodeConstraints, Hypothesis, StepModel};
use kpcnet_core::nn::seeded_rng;
use kpcnet_core::Result;
use rand::Rng;

use crate::Outcome;

const PAD: usize = 0;
const EOS: usize = 1;
const VOCAB: usize = 5;
const HORIZON: usize = 4;

/// Log-probabilities indexed by `[step][previous token][next token]`;
/// the start position uses PAD as its previous token.
struct Toy {
    table: Vec<Vec<Vec<f64>>>,
}

impl Toy {
    /// Bigram model with probabilities written out by hand.
    fn hand() -> Self {
        let rows: [[f64; VOCAB]; VOCAB] = [
            [0.0, 0.1, 0.5, 0.3, 0.1], // start
            [0.0, 1.0, 0.0, 0.0, 0.0], // after EOS (unused)
            [0.0, 0.2, 0.1, 0.6, 0.1], // after a
            [0.0, 0.5, 0.2, 0.1, 0.2], // after b
            [0.0, 0.7, 0.1, 0.1, 0.1], // after c
        ];
        let step: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Toy {
            table: vec![step; HORIZON],
        }
    }

    /// Step-dependent model with random normalized probabilities.
    fn random(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let table = (0..HORIZON)
            .map(|_| {
                (0..VOCAB)
                    .map(|_| {
                        let weights: Vec<f64> = (0..VOCAB).map(|t| if t == PAD { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
                        let total: f64 = weights.iter().sum();
                        weights.iter().map(|w| (w / total).ln()).collect()
                    })
                    .collect()
            })
            .collect();
        Toy { table }
    }

    fn logp(&self, step: usize, prev: Option<usize>, token: usize) -> f64 {
        self.table[step][prev.unwrap_or(PAD)][token]
    }
}

impl StepModel for Toy {
    type State = ();

    fn vocab_size(&self) -> usize {
        VOCAB
    }

    fn eos(&self) -> usize {
        EOS
    }

    fn is_banned(&self, token: usize) -> bool {
        token == PAD
    }

    fn initial_state(&self) {}

    fn step(&self, _: &(), prev: Option<usize>, step: usize) -> Result<(Vec<f64>, ())> {
        Ok(((0..VOCAB).map(|t| self.logp(step, prev, t)).collect(), ()))
    }
}

/// No bigram twice; equal tokens at least `gap` positions apart.
fn admissible(tokens: &[usize], bigrams: bool, gap: usize) -> bool {
    let body: Vec<usize> = tokens.iter().copied().filter(|&t| t != EOS).collect();
    for i in 0..body.len() {
        for j in i + 1..body.len() {
            if body[i] == body[j] && j - i < gap {
                return false;
            }
        }
    }
    if bigrams {
        let pairs: Vec<(usize, usize)> = body.windows(2).map(|w| (w[0], w[1])).collect();
        for i in 0..pairs.len() {
            if pairs[i + 1..].contains(&pairs[i]) {
                return false;
            }
        }
    }
    true
}

/// Every sequence the decoder can emit: EOS-terminated of length ≤ horizon,
/// or horizon-long without EOS. Returns `(tokens, log_prob, score)` ranked
/// by score, then tokens.
fn enumerate(model: &Toy, bigrams: bool, gap: usize) -> Vec<(Vec<usize>, f64, f64)> {
    let words: Vec<usize> = (0..VOCAB).filter(|&t| t != PAD && t != EOS).collect();
    let mut prefixes: Vec<Vec<usize>> = vec![vec![]];
    let mut all = Vec::new();
    for len in 0..HORIZON {
        let mut next = Vec::new();
        for p in &prefixes {
            let mut done = p.clone();
            done.push(EOS);
            all.push(done);
            for &w in &words {
                let mut q = p.clone();
                q.push(w);
                if len + 1 == HORIZON {
                    all.push(q.clone());
                }
                next.push(q);
            }
        }
        prefixes = next;
    }
    let mut scored: Vec<(Vec<usize>, f64, f64)> = all
        .into_iter()
        .filter(|s| admissible(s, bigrams, gap))
        .map(|s| {
            let lp: f64 = s.iter().enumerate().map(|(i, &t)| model.logp(i, i.checked_sub(1).map(|j| s[j]), t)).sum();
            let score = lp / s.len() as f64;
            (s, lp, score)
        })
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    scored
}

fn greedy(model: &Toy, bigrams: bool, gap: usize) -> Vec<usize> {
    let mut seq = Vec::new();
    for step in 0..HORIZON {
        let best = (1..VOCAB)
            .filter(|&t| {
                let mut s = seq.clone();
                s.push(t);
                admissible(&s, bigrams, gap)
            })
            .max_by(|&a, &b| model.logp(step, seq.last().copied(), a).total_cmp(&model.logp(step, seq.last().copied(), b)).then(b.cmp(&a)))
            .unwrap();
        seq.push(best);
        if best == EOS {
            break;
        }
    }
    seq
}

fn same(hyps: &[Hypothesis], expected: &[(Vec<usize>, f64, f64)]) -> bool {
    hyps.len() == expected.len()
        && hyps
            .iter()
            .zip(expected)
            .all(|(h, (t, lp, _))| &h.tokens == t && (h.log_prob - lp).abs() < 1e-12)
}

fn config(beam_size: usize) -> BeamConfig {
    BeamConfig {
        beam_size,
        diverse_groups: 1,
        diversity_strength: 0.0,
        max_len: HORIZON,
        ..Default::default()
    }
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();
    let models: Vec<(String, Toy)> = std::iter::once(("hand".to_string(), Toy::hand()))
        .chain((0..20).map(|s| (format!("random {s}"), Toy::random(s))))
        .collect();
    let constraint_sets = [(false, 1), (true, 1), (false, 3), (true, 3)];

    let (mut exhaustive_ok, mut greedy_ok, mut cases) = (0, 0, 0);
    for (name, toy) in &models {
        for &(bigrams, gap) in &constraint_sets {
            cases += 1;
            let constraints = DecodeConstraints {
                block_repeat_bigrams: bigrams,
                min_same_token_gap: gap,
            };
            let expected = enumerate(toy, bigrams, gap);
            let full = beam_search(toy, &config(expected.len()), &constraints).unwrap();
            if same(&full, &expected) {
                exhaustive_ok += 1;
            } else if exhaustive_ok + 3 > cases {
                out.info(format!("{name} bigrams={bigrams} gap={gap}: beam {} vs {} sequences", full.len(), expected.len()));
            }
            let one = beam_search(toy, &config(1), &constraints).unwrap();
            greedy_ok += usize::from(one.len() == 1 && one[0].tokens == greedy(toy, bigrams, gap));
        }
    }
    out.check(exhaustive_ok == cases, format!("full-width beam equals exhaustive enumeration {exhaustive_ok}/{cases}"));
    out.check(greedy_ok == cases, format!("beam 1 equals greedy {greedy_ok}/{cases}"));

    let (mut partition_ok, mut diverged, mut cases) = (0, 0, 0);
    for (_, toy) in &models {
        for (beam_size, groups) in [(6, 3), (4, 2), (6, 2), (3, 3)] {
            cases += 1;
            let constraints = DecodeConstraints::default();
            let cfg = BeamConfig {
                beam_size,
                diverse_groups: groups,
                diversity_strength: 0.0,
                max_len: HORIZON,
                ..Default::default()
            };
            let diverse = diverse_beam_search(toy, &cfg, &constraints).unwrap();
            let plain = beam_search(toy, &config(beam_size / groups), &constraints).unwrap();
            let ok = (0..groups).all(|g| {
                let tag = format!("divbeam:{g}");
                let part: Vec<&Hypothesis> = diverse.iter().filter(|h| h.origin == tag).collect();
                part.len() == plain.len()
                    && part.iter().zip(&plain).all(|(a, b)| a.tokens == b.tokens && a.log_prob.to_bits() == b.log_prob.to_bits())
            });
            partition_ok += usize::from(ok);
        }
        // a large penalty forces the second group off the first group's opening token
        let cfg = BeamConfig {
            beam_size: 2,
            diverse_groups: 2,
            diversity_strength: 100.0,
            max_len: HORIZON,
            ..Default::default()
        };
        let hyps = diverse_beam_search(toy, &cfg, &DecodeConstraints::none()).unwrap();
        let first = |tag: &str| hyps.iter().find(|h| h.origin == tag).map(|h| h.tokens[0]);
        diverged += usize::from(first("divbeam:0") != first("divbeam:1"));
    }
    out.check(partition_ok == cases, format!("zero-penalty diverse beam equals partitioned beam {partition_ok}/{cases}"));
    out.check(diverged == models.len(), format!("strong penalty separates opening tokens {diverged}/{}", models.len()));
    out
}
