//! With both bridge features off the generator must ignore the keyword set
//! bit for bit; with them on, the keyword set must matter.

use kpcnet_core::decoding::{beam_search, BeamConfig, DecodeConstraints, StepModel};
use kpcnet_core::generator::{mask_logits, GeneratorConfig, GeneratorModel, MaskedLogits};
use kpcnet_core::nn::{seeded_rng, Tape};
use kpcnet_core::predictor::KeywordLogits;
use kpcnet_core::textproc::{KeywordSet, KeywordVocab, TokenSequence, TokenVocab};
use rand::Rng;

use crate::Outcome;

const KEYWORDS: usize = 12;

/// Everything observable about one conditioned forward pass, as raw bits.
fn fingerprint(model: &GeneratorModel, context: &TokenSequence, target: &TokenSequence, masked: &MaskedLogits) -> Vec<u64> {
    let session = model.session(context, Some(masked)).unwrap();
    let (step0, _) = session.step(&session.initial_state(), None, 0).unwrap();
    let cfg = BeamConfig {
        beam_size: 4,
        diverse_groups: 1,
        max_len: 8,
        ..Default::default()
    };
    let hyps = beam_search(&session, &cfg, &DecodeConstraints::default()).unwrap();

    let mut tape = Tape::new(&model.store);
    let ctx = model.token_vocab.encode(context);
    let tgt = model.token_vocab.encode(target);
    let loss = model.pair_loss(&mut tape, &ctx, &masked.0, &tgt, &mut seeded_rng(0)).unwrap();

    let mut bits: Vec<u64> = step0.iter().map(|x| x.to_bits()).collect();
    for h in &hyps {
        bits.extend(h.tokens.iter().map(|&t| t as u64));
        bits.push(h.log_prob.to_bits());
    }
    bits.push(tape.value(loss).item().to_bits());
    bits
}

fn model(bridge: bool) -> GeneratorModel {
    let words = ["what", "is", "the", "size", "color", "of", "this", "kettle", "lamp", "?", "it", "made", "by"];
    let tv = TokenVocab::from_entries(words.iter().map(|w| (w.to_string(), 1)).collect()).unwrap();
    let kv = KeywordVocab::from_entries((0..KEYWORDS).map(|i| (format!("k{i}"), 1)).collect()).unwrap();
    let cfg = GeneratorConfig {
        embed_dim: 8,
        hidden: 8,
        num_layers: 1,
        use_encoder_feature: bridge,
        use_decoder_feature: bridge,
        seed: 11,
        ..Default::default()
    };
    GeneratorModel::new(cfg, tv, kv).unwrap()
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();
    let context = TokenSequence::from_tokens("what is the size of this kettle made by".split(' '));
    let target = TokenSequence::from_tokens("what color is the lamp ?".split(' '));
    let mut rng = seeded_rng(6);
    let sets: Vec<(KeywordLogits, KeywordSet)> = (0..100)
        .map(|_| {
            let logits = KeywordLogits::from_logits((0..KEYWORDS).map(|_| rng.gen_range(-4.0..4.0)).collect());
            let set = (0..KEYWORDS).filter(|_| rng.gen_bool(0.4)).map(|i| format!("k{i}")).collect();
            (logits, set)
        })
        .collect();

    for bridge in [false, true] {
        let m = model(bridge);
        let baseline = fingerprint(&m, &context, &target, &MaskedLogits::zeros(KEYWORDS));
        let same = sets
            .iter()
            .filter(|(logits, set)| {
                let masked = mask_logits(logits, set, &m.keyword_vocab, false).unwrap();
                fingerprint(&m, &context, &target, &masked) == baseline
            })
            .count();
        if bridge {
            // sets that are empty reduce to the zero mask and legitimately match
            let empty = sets.iter().filter(|(_, s)| s.is_empty()).count();
            out.check(same == empty, format!("bridge on: {} of 100 sets change the output", 100 - same));
        } else {
            out.check(same == 100, format!("bridge off: {same}/100 sets bitwise identical to the zero mask"));
        }
    }
    out
}
