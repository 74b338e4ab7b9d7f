//! Metric values against hand-computed n-gram counts.

use std::collections::BTreeSet;

use kpcnet_core::metrics::{corpus_bleu, distinct_n, response_rate};
use kpcnet_core::nn::seeded_rng;
use kpcnet_core::textproc::TokenSequence;
use rand::Rng;

use crate::Outcome;

fn seq(s: &str) -> TokenSequence {
    TokenSequence::from_tokens(s.split_whitespace())
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();

    let bleu_cases: Vec<(&str, Vec<&str>, Vec<Vec<&str>>, f64)> = vec![
        // p1=p2=p3=1, no 4-grams, BP=exp(1-4/3)
        ("short hypothesis", vec!["the cat sat"], vec![vec!["the cat sat down"]], 100.0 * (-1.0f64 / 3.0).exp()),
        // p = 4/5, 3/4, 2/3, 1/2
        ("one substitution", vec!["a b c d e"], vec![vec!["a b c d f"]], 100.0 * 0.2f64.powf(0.25)),
        // max clip across refs: p = 5/5, 4/4, 2/3, 1/2; closest ref length 4
        ("multi reference clip", vec!["a a b c d"], vec![vec!["a b c d", "a a x"]], 100.0 * (1.0f64 / 3.0).powf(0.25)),
        // pooled counts p = 5/6, 3/4, 2/2, 1/1; lengths 6 vs 7
        (
            "corpus pooling",
            vec!["a b c d", "x y"],
            vec![vec!["a b c d"], vec!["x z w"]],
            100.0 * (5.0f64 / 6.0 * 3.0 / 4.0).powf(0.25) * (1.0f64 - 7.0 / 6.0).exp(),
        ),
        // equidistant refs of length 2 and 4: the shorter one sets BP=1
        ("closest length tie", vec!["a b c"], vec![vec!["a b c d", "a b"]], 100.0),
        ("no shared unigram", vec!["x y z"], vec![vec!["a b c"]], 0.0),
        // unigrams match but no bigram does
        ("zero bigram precision", vec!["c b a"], vec![vec!["a b c"]], 0.0),
    ];
    let mut ok = 0;
    for (name, hyps, refs, want) in &bleu_cases {
        let hyps: Vec<_> = hyps.iter().map(|h| seq(h)).collect();
        let refs: Vec<Vec<_>> = refs.iter().map(|r| r.iter().map(|s| seq(s)).collect()).collect();
        let got = corpus_bleu(&hyps, &refs).unwrap();
        if close(got, *want) {
            ok += 1;
        } else {
            out.check(false, format!("BLEU {name}: got {got:.6} want {want:.6}"));
        }
    }
    out.check(ok == bleu_cases.len(), format!("BLEU {ok}/{} hand cases", bleu_cases.len()));

    let mut rng = seeded_rng(2);
    let mut identity_ok = true;
    for _ in 0..50 {
        let corpus: Vec<TokenSequence> = (0..rng.gen_range(1..6))
            .map(|_| TokenSequence::from_tokens((0..rng.gen_range(1..12)).map(|_| format!("w{}", rng.gen_range(0..6)))))
            .collect();
        let refs: Vec<Vec<_>> = corpus.iter().map(|q| vec![q.clone()]).collect();
        identity_ok &= close(corpus_bleu(&corpus, &refs).unwrap(), 100.0);
    }
    out.check(identity_ok, "identity corpora score 100 (50 random)");

    let distinct_cases: Vec<(Vec<&str>, usize, f64)> = vec![
        (vec!["a b c"], 3, 1.0),
        (vec!["a b c", "a b c"], 3, 0.5),
        (vec!["a b c d", "b c d e"], 3, 3.0 / 4.0),
        (vec!["a b", "a b c"], 2, 2.0 / 3.0),
        (vec!["a a a a"], 1, 1.0 / 4.0),
        (vec!["a a a a"], 2, 1.0 / 3.0),
        (vec!["a b", "c"], 3, 0.0),
    ];
    let mut ok = 0;
    for (qs, n, want) in &distinct_cases {
        let qs: Vec<_> = qs.iter().map(|q| seq(q)).collect();
        let got = distinct_n(&qs, *n).unwrap();
        if close(got, *want) {
            ok += 1;
        } else {
            out.check(false, format!("distinct-{n} of {qs:?}: got {got} want {want}"));
        }
    }
    out.check(ok == distinct_cases.len(), format!("distinct-n {ok}/{} hand cases", distinct_cases.len()));

    let rr_cases: Vec<(Vec<(Vec<&str>, &str)>, f64)> = vec![
        (vec![(vec!["size", "cover", "pillow", "wash", "zipper"], "what is the size of this pillow case ?")], 0.4),
        (vec![(vec!["color", "kettle"], "what color is the kettle ?")], 1.0),
        (vec![(vec!["voltage"], "how big is it ?")], 0.0),
        (vec![(vec!["dimension"], "what are the dimensions ?")], 1.0),
        // macro average; the empty set is skipped
        (
            vec![(vec!["size", "color"], "what size is it ?"), (vec!["brand"], "who is the brand ?"), (vec![], "anything ?")],
            0.75,
        ),
        (vec![(vec!["size"], "what size ?"), (vec!["lid", "handle", "base"], "is the lid tight ?")], (1.0 + 1.0 / 3.0) / 2.0),
    ];
    let mut ok = 0;
    for (records, want) in &rr_cases {
        let records: Vec<_> = records.iter().map(|(k, g)| (set(k), seq(g))).collect();
        let got = response_rate(&records).unwrap();
        if close(got, *want) {
            ok += 1;
        } else {
            out.check(false, format!("response rate {records:?}: got {got} want {want}"));
        }
    }
    out.check(ok == rr_cases.len(), format!("response rate {ok}/{} hand cases", rr_cases.len()));
    out
}
