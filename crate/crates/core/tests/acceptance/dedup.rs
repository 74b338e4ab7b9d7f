//! Deduplication properties over random candidate pools.

use std::collections::HashSet;

use kpcnet_core::group::dedup_select;
use kpcnet_core::nn::seeded_rng;
use kpcnet_core::textproc::TokenSequence;
use rand::Rng;

use crate::Outcome;

const WORDS: [&str; 10] = ["what", "size", "color", "is", "the", "it", "kettle", "does", "have", "lid"];
const THRESHOLD: f64 = 0.5;

fn words_of(q: &TokenSequence) -> HashSet<&str> {
    q.iter().filter(|t| !matches!(*t, "?" | "," | ".")).collect()
}

fn similarity(a: &TokenSequence, b: &TokenSequence) -> f64 {
    let (a, b) = (words_of(a), words_of(b));
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Straightforward greedy reference.
fn reference(pool: &[TokenSequence], slots: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, q) in pool.iter().enumerate() {
        if kept.len() < slots && kept.iter().all(|&j| similarity(q, &pool[j]) < THRESHOLD) {
            kept.push(i);
        }
    }
    kept
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = seeded_rng(4);
    let (mut below, mut ordered, mut idempotent, mut matches_reference) = (0, 0, 0, 0);
    const POOLS: usize = 1000;
    for _ in 0..POOLS {
        let pool: Vec<TokenSequence> = (0..rng.gen_range(1..=12))
            .map(|_| {
                let mut toks: Vec<&str> = (0..rng.gen_range(0..=6)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
                if rng.gen_bool(0.7) {
                    toks.push("?");
                }
                TokenSequence::from_tokens(toks)
            })
            .collect();
        let slots = if rng.gen_bool(0.5) { usize::MAX } else { rng.gen_range(1..=6) };
        let selected = dedup_select(&pool, slots, THRESHOLD).selected;

        let pairwise_ok = selected
            .iter()
            .enumerate()
            .all(|(a, &i)| selected[a + 1..].iter().all(|&j| similarity(&pool[i], &pool[j]) < THRESHOLD));
        below += usize::from(pairwise_ok);
        ordered += usize::from(selected.windows(2).all(|w| w[0] < w[1]));

        let kept: Vec<TokenSequence> = selected.iter().map(|&i| pool[i].clone()).collect();
        let again = dedup_select(&kept, slots, THRESHOLD).selected;
        idempotent += usize::from(again == (0..kept.len()).collect::<Vec<_>>());
        matches_reference += usize::from(selected == reference(&pool, slots));
    }
    out.check(below == POOLS, format!("pairwise Jaccard < 0.5 in {below}/{POOLS}"));
    out.check(ordered == POOLS, format!("rank order preserved {ordered}/{POOLS}"));
    out.check(idempotent == POOLS, format!("idempotent {idempotent}/{POOLS}"));
    out.check(matches_reference == POOLS, format!("matches greedy reference {matches_reference}/{POOLS}"));
    out
}
