//! Finite-difference check of every tape op and of the composed
//! predictor and generator losses over random shapes.

use std::time::Instant;

use kpcnet_core::generator::{mask_logits, GeneratorConfig, GeneratorModel};
use kpcnet_core::nn::{gradient_check, gradient_check_params, seeded_rng, GruCell, NnError, ParamStore, Tape, Tensor, Var};
use kpcnet_core::predictor::{KeywordLogits, PredictorConfig, PredictorModel};
use kpcnet_core::textproc::{KeywordSet, KeywordVocab, TokenSequence, TokenVocab};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SHAPES: u64 = 20;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random(shape, rng).map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
}

/// `sum(out ⊙ R)` for a fixed pseudo-random `R` of the output's shape, so
/// every output coordinate contributes a distinct weight.
fn weighted(tape: &mut Tape<'_>, out: Var) -> Result<Var, NnError> {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.leaf(random(&shape, &mut seeded_rng(shape.iter().product::<usize>() as u64)));
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

type OpCheck = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64, NnError>>;

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4))
}

fn unary(f: fn(&mut Tape<'_>, Var) -> Result<Var, NnError>, kinked: bool) -> OpCheck {
    Box::new(move |rng| {
        let (m, n, _) = dims(rng);
        let x = if kinked { away_from_zero(&[m, n], rng) } else { random(&[m, n], rng) };
        gradient_check(|t, v| { let y = f(t, v[0])?; weighted(t, y) }, &[x], EPS)
    })
}

fn binary(f: fn(&mut Tape<'_>, Var, Var) -> Result<Var, NnError>) -> OpCheck {
    Box::new(move |rng| {
        let (m, n, _) = dims(rng);
        let inputs = [random(&[m, n], rng), random(&[m, n], rng)];
        gradient_check(|t, v| { let y = f(t, v[0], v[1])?; weighted(t, y) }, &inputs, EPS)
    })
}

/// Central differences on a training tape with a fixed dropout mask.
fn dropout_check(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (m, n, _) = dims(rng);
    let x = random(&[m, n], rng);
    let rate = rng.gen_range(0.1..0.7);
    let mask_seed = rng.gen();
    let store = ParamStore::new();
    let eval = |x: &Tensor, grad: bool| -> Result<(f64, Option<Tensor>), NnError> {
        let mut tape = Tape::training(&store);
        let v = tape.leaf(x.clone());
        let y = tape.dropout(v, rate, &mut seeded_rng(mask_seed))?;
        let loss = weighted(&mut tape, y)?;
        let g = if grad { tape.backward(loss)?.wrt(v).cloned() } else { None };
        Ok((tape.value(loss).item(), g))
    };
    let analytic = eval(&x, true)?.1.unwrap_or_else(|| Tensor::zeros(&[m, n]));
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for k in 0..x.numel() {
        probe.data_mut()[k] = x.data()[k] + EPS;
        let plus = eval(&probe, false)?.0;
        probe.data_mut()[k] = x.data()[k] - EPS;
        let minus = eval(&probe, false)?.0;
        probe.data_mut()[k] = x.data()[k];
        let numeric = (plus - minus) / (2.0 * EPS);
        let a = analytic.data()[k];
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs() + numeric.abs()));
    }
    Ok(worst)
}

fn op_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("matmul", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, k) = dims(rng);
            let inputs = [random(&[m, k], rng), random(&[k, n], rng)];
            gradient_check(|t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y) }, &inputs, EPS)
        })),
        ("add", binary(|t, a, b| t.add(a, b))),
        ("sub", binary(|t, a, b| t.sub(a, b))),
        ("mul", binary(|t, a, b| t.mul(a, b))),
        ("add_row", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, _) = dims(rng);
            let inputs = [random(&[m, n], rng), random(&[1, n], rng)];
            gradient_check(|t, v| { let y = t.add_row(v[0], v[1])?; weighted(t, y) }, &inputs, EPS)
        })),
        ("affine", unary(|t, a| t.affine(a, -1.7, 0.3), false)),
        ("tanh", unary(|t, a| t.tanh(a), false)),
        ("sigmoid", unary(|t, a| t.sigmoid(a), false)),
        ("relu", unary(|t, a| t.relu(a), true)),
        ("softmax_rows", unary(|t, a| t.softmax(a, 1), false)),
        ("softmax_cols", unary(|t, a| t.softmax(a, 0), false)),
        ("log_softmax", unary(|t, a| t.log_softmax(a), false)),
        ("transpose", unary(|t, a| t.transpose(a), false)),
        ("sum", unary(|t, a| t.sum(a), false)),
        ("mean", unary(|t, a| t.mean(a), false)),
        ("max_over_time", unary(|t, a| t.max_over_time(a), false)),
        ("concat", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, k) = dims(rng);
            let axis = rng.gen_range(0..2);
            let second = if axis == 0 { [k, n] } else { [m, k] };
            let inputs = [random(&[m, n], rng), random(&second, rng)];
            gradient_check(|t, v| { let y = t.concat(&[v[0], v[1]], axis)?; weighted(t, y) }, &inputs, EPS)
        })),
        ("slice", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, _) = dims(rng);
            let axis = rng.gen_range(0..2);
            let limit = if axis == 0 { m } else { n };
            let start = rng.gen_range(0..limit);
            let len = rng.gen_range(1..=limit - start);
            let x = random(&[m, n], rng);
            gradient_check(|t, v| { let y = t.slice(v[0], axis, start, len)?; weighted(t, y) }, &[x], EPS)
        })),
        ("embedding", Box::new(|rng: &mut ChaCha8Rng| {
            let (rows, d, len) = dims(rng);
            let ids: Vec<usize> = (0..len + 1).map(|_| rng.gen_range(0..rows)).collect();
            let table = random(&[rows, d], rng);
            gradient_check(|t, v| { let y = t.embedding(v[0], &ids)?; weighted(t, y) }, &[table], EPS)
        })),
        ("dropout", Box::new(dropout_check)),
        ("conv1d_valid", Box::new(|rng: &mut ChaCha8Rng| {
            let (e, f, width) = dims(rng);
            let len = width + rng.gen_range(0..4);
            let inputs = [random(&[len, e], rng), random(&[width * e, f], rng), random(&[1, f], rng)];
            gradient_check(|t, v| { let y = t.conv1d_valid(v[0], v[1], v[2], width)?; weighted(t, y) }, &inputs, EPS)
        })),
        ("cross_entropy", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, _) = dims(rng);
            let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n + 1)).collect();
            let x = random(&[m, n + 1], rng);
            gradient_check(|t, v| t.cross_entropy(v[0], &targets), &[x], EPS)
        })),
        ("bce_with_logits", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, _) = dims(rng);
            let targets: Vec<f64> = (0..m * n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let positive_only = rng.gen_bool(0.5);
            let x = random(&[m, n], rng);
            gradient_check(|t, v| t.bce_with_logits(v[0], &targets, positive_only), &[x], EPS)
        })),
        ("linear", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, n, k) = dims(rng);
            let mut store = ParamStore::new();
            let x = store.add("x", random(&[m, k], rng));
            let w = store.add("w", random(&[k, n], rng));
            let b = store.add("b", random(&[1, n], rng));
            gradient_check_params(&store, |t| { let xv = t.param(x); let y = t.linear(xv, w, b)?; weighted(t, y) }, EPS, None)
        })),
        ("gru_step", Box::new(|rng: &mut ChaCha8Rng| {
            let (input, hidden, _) = dims(rng);
            let mut store = ParamStore::new();
            let cell = GruCell::new(&mut store, "gru", input, hidden, rng);
            let x = store.add("x", random(&[1, input], rng));
            let h = store.add("h", random(&[1, hidden], rng));
            gradient_check_params(
                &store,
                |t| {
                    let (xv, hv) = (t.param(x), t.param(h));
                    let y = cell.step(t, xv, hv)?;
                    weighted(t, y)
                },
                EPS,
                None,
            )
        })),
    ]
}

fn words(prefix: &str, n: usize) -> Vec<(String, usize)> {
    (0..n).map(|i| (format!("{prefix}{i}"), 1)).collect()
}

fn random_seq(prefix: &str, vocab: usize, len: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
    TokenSequence::from_tokens((0..len).map(|_| format!("{prefix}{}", rng.gen_range(0..vocab))))
}

fn predictor_loss_check(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (tokens, keywords) = (rng.gen_range(3..8), rng.gen_range(2..6));
    let tv = TokenVocab::from_entries(words("w", tokens)).unwrap();
    let kv = KeywordVocab::from_entries(words("k", keywords)).unwrap();
    let mut widths = vec![1, 2, 3];
    widths.shuffle(rng);
    widths.truncate(rng.gen_range(1..=3));
    let cfg = PredictorConfig {
        embed_dim: rng.gen_range(2..5),
        filter_widths: widths,
        num_filters: rng.gen_range(1..4),
        dropout: 0.0,
        positive_only_loss: rng.gen_bool(0.3),
        seed: rng.gen(),
        ..Default::default()
    };
    let m = PredictorModel::new(cfg, tv, kv).unwrap();
    let ids = m.encode_context(&random_seq("w", tokens, rng.gen_range(1..6), rng));
    let targets: Vec<f64> = (0..keywords).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
    gradient_check_params(&m.store, |t| m.loss(t, &ids, &targets, &mut seeded_rng(0)), EPS, Some(8))
}

fn generator_loss_check(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (tokens, keywords) = (rng.gen_range(3..8), rng.gen_range(2..6));
    let tv = TokenVocab::from_entries(words("w", tokens)).unwrap();
    let kv = KeywordVocab::from_entries(words("k", keywords)).unwrap();
    let cfg = GeneratorConfig {
        embed_dim: rng.gen_range(2..5),
        hidden: rng.gen_range(2..5),
        num_layers: rng.gen_range(1..=2),
        dropout: 0.0,
        bridge_dropout: 0.0,
        use_encoder_feature: rng.gen_bool(0.7),
        use_decoder_feature: rng.gen_bool(0.7),
        hard_label_bridge: rng.gen_bool(0.3),
        seed: rng.gen(),
        ..Default::default()
    };
    let hard = cfg.hard_label_bridge;
    let m = GeneratorModel::new(cfg, tv, kv.clone()).unwrap();
    let ctx = m.token_vocab.encode(&random_seq("w", tokens, rng.gen_range(1..6), rng));
    let tgt = m.token_vocab.encode(&random_seq("w", tokens, rng.gen_range(1..5), rng));
    let logits = KeywordLogits::from_logits((0..keywords).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let selected: KeywordSet = (0..keywords).filter(|_| rng.gen_bool(0.5)).map(|i| format!("k{i}")).collect();
    let masked = mask_logits(&logits, &selected, &kv, hard).unwrap();
    gradient_check_params(&m.store, |t| m.pair_loss(t, &ctx, &masked.0, &tgt, &mut seeded_rng(0)), EPS, Some(8))
}

pub fn criterion() -> Outcome {
    let start = Instant::now();
    let mut out = Outcome::new();
    let mut checks = op_checks();
    checks.push(("predictor_loss", Box::new(predictor_loss_check)));
    checks.push(("generator_loss", Box::new(generator_loss_check)));
    let mut worst_overall = 0.0f64;
    for (i, (name, check)) in checks.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut failure = None;
        for shape in 0..SHAPES {
            let mut rng = seeded_rng(1000 * i as u64 + shape);
            match check(&mut rng) {
                Ok(err) => worst = worst.max(err),
                Err(e) => {
                    failure = Some(format!("shape {shape}: {e}"));
                    break;
                }
            }
        }
        worst_overall = worst_overall.max(worst);
        match failure {
            Some(f) => out.check(false, format!("{name} errored at {f}")),
            None if worst >= TOL => out.check(false, format!("{name} rel err {worst:.2e}")),
            None => {}
        }
    }
    let secs = start.elapsed().as_secs_f64();
    out.check(secs < 120.0, format!("{} checks x {SHAPES} shapes, max rel err {worst_overall:.2e}, {secs:.1}s", checks.len()));
    out
}
