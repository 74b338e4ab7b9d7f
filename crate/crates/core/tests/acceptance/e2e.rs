//! Synthetic end-to-end run: train predictor and generator on the
//! templated corpus, then compare strategies on the test split.

use std::collections::BTreeSet;
use std::time::Instant;

use kpcnet_core::generator::{generator_examples, mean_token_loss, train_generator, train_on_examples, GeneratorConfig, GeneratorModel};
use kpcnet_core::group::{GroupOptions, Pipeline, Strategy};
use kpcnet_core::metrics::{evaluate_groups, pairwise_bleu, GroupEval};
use kpcnet_core::predictor::{evaluate_predictor, train_predictor, PredictorConfig, PredictorModel};
use kpcnet_core::selection::build_cooccurrence;
use kpcnet_core::synth::{asks_stated, synth_corpus, SynthConfig, SynthProduct};
use kpcnet_core::textproc::{build_keyword_vocab, build_token_vocab, ContextRecord, CorpusOptions, TokenSequence};

use crate::Outcome;

fn process(opts: &CorpusOptions, part: &[SynthProduct]) -> Vec<ContextRecord> {
    part.iter().map(|p| opts.process(&p.record)).collect()
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();

    let corpus = synth_corpus(&SynthConfig {
        products: 500,
        seed: 1,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let opts = CorpusOptions::default();
    let (train_p, valid_p, test_p) = corpus.split();
    let (train, valid, test) = (process(&opts, train_p), process(&opts, valid_p), process(&opts, test_p));
    let token_vocab = build_token_vocab(&train, 1).unwrap();
    let keyword_vocab = build_keyword_vocab(&train, 2).unwrap();

    // (a) predictor
    let t = Instant::now();
    let mut predictor = PredictorModel::new(
        PredictorConfig {
            embed_dim: 32,
            filter_widths: vec![2, 3],
            num_filters: 32,
            dropout: 0.3,
            lr: 3e-3,
            epochs: 20,
            patience: 4,
            ..Default::default()
        },
        token_vocab.clone(),
        keyword_vocab.clone(),
    )
    .unwrap();
    train_predictor(&mut predictor, &train, &valid).unwrap();
    let p5 = evaluate_predictor(&predictor, &test).unwrap().p_at_5;
    out.check(p5 >= 0.6, format!("(a) P@5={p5:.3} [{:.0}s]", t.elapsed().as_secs_f64()));

    // (b) overfit one pair from each of five products
    let t = Instant::now();
    let overfit_cfg = GeneratorConfig {
        embed_dim: 32,
        hidden: 64,
        num_layers: 1,
        dropout: 0.0,
        bridge_dropout: 0.0,
        lr: 1e-2,
        epochs: 200,
        batch_size: 1,
        ..Default::default()
    };
    let mut small = GeneratorModel::new(overfit_cfg, token_vocab.clone(), keyword_vocab.clone()).unwrap();
    let mut five = Vec::new();
    for rec in &train[..5] {
        let first = generator_examples(&small, std::slice::from_ref(rec), Some(&predictor)).unwrap().into_iter().next();
        five.extend(first);
    }
    train_on_examples(&mut small, &five, &[]).unwrap();
    let ppl = mean_token_loss(&small, &five).unwrap().exp();
    out.check(ppl < 1.1, format!("(b) ppl={ppl:.3} [{:.0}s]", t.elapsed().as_secs_f64()));

    // full generator
    let t = Instant::now();
    let mut generator = GeneratorModel::new(
        GeneratorConfig {
            embed_dim: 32,
            hidden: 64,
            num_layers: 1,
            dropout: 0.1,
            bridge_dropout: 0.1,
            lr: 3e-3,
            epochs: 12,
            batch_size: 16,
            patience: 3,
            val_samples: 100,
            ..Default::default()
        },
        token_vocab,
        keyword_vocab.clone(),
    )
    .unwrap();
    let curve = train_generator(&mut generator, &train, &valid, Some(&predictor)).unwrap();
    out.info(format!(
        "gen best epoch {} val BLEU {:.1} [{:.0}s]",
        curve.best_epoch,
        curve.val_bleu.get(curve.best_epoch).copied().unwrap_or(0.0),
        t.elapsed().as_secs_f64()
    ));

    let graph = build_cooccurrence(&train, &keyword_vocab);
    let pipeline = Pipeline::new(predictor, generator, graph).unwrap();

    // (c) truth vs beam response rate
    let t = Instant::now();
    let mut truth_evals = Vec::new();
    let mut beam_evals = Vec::new();
    let mut cluster_pb = Vec::new();
    let mut beam_pb = Vec::new();
    let (mut stated_filtered, mut stated_unfiltered) = ((0usize, 0usize), (0usize, 0usize));
    for (rec, prod) in test.iter().zip(test_p) {
        let refs: Vec<TokenSequence> = rec.questions.iter().map(|q| q.question.clone()).collect();
        let as_eval = |g: &kpcnet_core::group::GenerationGroup| GroupEval {
            id: rec.id.clone(),
            group: g.questions(),
            references: refs.clone(),
            keyword_sets: g.selected.iter().map(|m| Some(m.hypothesis.keyword_set.clone())).collect(),
        };
        let beam = pipeline.generate_for_tokens(&rec.context, Strategy::Beam, &GroupOptions::default()).unwrap();
        beam_evals.push(as_eval(&beam));
        if let Ok(pb) = pairwise_bleu(&beam.questions()) {
            beam_pb.push(pb);
        }
        let cluster = pipeline.generate_for_tokens(&rec.context, Strategy::Cluster, &GroupOptions::default()).unwrap();
        if let Ok(pb) = pairwise_bleu(&cluster.questions()) {
            cluster_pb.push(pb);
        }
        for q in rec.questions.iter().filter(|q| q.keywords.iter().any(|k| keyword_vocab.id(k).is_some())) {
            let truth: BTreeSet<String> = q.keywords.iter().filter(|k| keyword_vocab.id(k).is_some()).cloned().collect();
            let opts = GroupOptions {
                truth_keywords: Some(truth),
                ..Default::default()
            };
            let g = pipeline.generate_for_tokens(&rec.context, Strategy::Truth, &opts).unwrap();
            truth_evals.push(as_eval(&g));
        }
        // (e) stated attributes, filtered vs unfiltered
        if !prod.meta.stated.is_empty() {
            let unfiltered = pipeline
                .generate_for_tokens(&rec.context, Strategy::Beam, &GroupOptions { no_filter: true, ..Default::default() })
                .unwrap();
            for (g, acc) in [(&beam, &mut stated_filtered), (&unfiltered, &mut stated_unfiltered)] {
                for q in g.questions() {
                    acc.0 += usize::from(asks_stated(&q, &prod.meta.stated));
                    acc.1 += 1;
                }
            }
        }
    }
    let rr = |evals: &[GroupEval]| evaluate_groups(evals).unwrap().0.response_rate.unwrap_or(0.0) / 100.0;
    let (rr_truth, rr_beam) = (rr(&truth_evals), rr(&beam_evals));
    out.check(rr_truth >= rr_beam + 0.1, format!("(c) RR truth={rr_truth:.3} beam={rr_beam:.3}"));

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (pb_cluster, pb_beam) = (mean(&cluster_pb), mean(&beam_pb));
    out.check(
        pb_cluster < pb_beam,
        format!("(d) pairwise BLEU cluster={pb_cluster:.2} (n={}) beam={pb_beam:.2} (n={})", cluster_pb.len(), beam_pb.len()),
    );

    let frac = |(a, n): (usize, usize)| a as f64 / n.max(1) as f64;
    let (f_on, f_off) = (frac(stated_filtered), frac(stated_unfiltered));
    out.check(f_on < f_off, format!("(e) stated-attribute fraction filtered={f_on:.3} unfiltered={f_off:.3}"));
    out.info(format!("[eval {:.0}s]", t.elapsed().as_secs_f64()));

    out
}
