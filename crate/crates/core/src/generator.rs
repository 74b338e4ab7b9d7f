//! Attention seq2seq question generator `p(y|x,z)` with the keyword bridge.
//!
//! Masked keyword logits pass through dropout and a shared tanh layer into
//! two linear heads. The encoder head overwrites memory slot 0 (an
//! attention-addressable pseudo-token); the decoder head replaces the
//! embedding of the start symbol at the first decoding step.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decoding::{beam_search, BeamConfig, DecodeConstraints, StepModel};
use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::nn::{
    seeded_rng, AdamState, Checkpoint, Gru, NnError, ParamId, ParamStore, Rng, Tape, Tensor, Var,
    GRAD_CLIP_NORM,
};
use crate::predictor::{check_vocab_hash, KeywordLogits, PredictorModel};
use crate::textproc::{
    ContextRecord, KeywordSet, KeywordVocab, TokenSequence, TokenVocab, EOS, PAD, SOS,
};

/// `p̃`: keyword logits with every dimension outside `z^s` zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedLogits(pub Vec<f64>);

impl MaskedLogits {
    pub fn zeros(len: usize) -> Self {
        MaskedLogits(vec![0.0; len])
    }
}

/// Masks `logits` by the indicator of `selected`. In hard-label mode the
/// indicator itself is returned.
pub fn mask_logits(
    logits: &KeywordLogits,
    selected: &KeywordSet,
    vocab: &KeywordVocab,
    hard_label: bool,
) -> Result<MaskedLogits> {
    if logits.len() != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "{} logits for {} keywords",
            logits.len(),
            vocab.len()
        )));
    }
    let mut out = vec![0.0; vocab.len()];
    for id in vocab.ids(selected)? {
        out[id] = if hard_label { 1.0 } else { logits.logits[id] };
    }
    Ok(MaskedLogits(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeFeatures {
    /// Encoder hidden size.
    pub encoder_feature: Vec<f64>,
    /// Word embedding size.
    pub decoder_feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeInput {
    /// Predictor logits masked by the reference keywords.
    PredictorLogits,
    /// Binary indicator of the reference keywords.
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub num_layers: usize,
    /// Dropout on embeddings, between layers and on attention outputs.
    pub dropout: f64,
    pub bridge_dropout: f64,
    pub use_encoder_feature: bool,
    pub use_decoder_feature: bool,
    pub hard_label_bridge: bool,
    /// Training-time bridge input when a predictor is supplied.
    pub bridge_input: BridgeInput,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation BLEU improvement before stopping.
    pub patience: usize,
    /// Validation pairs decoded per epoch for checkpoint selection.
    pub val_samples: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            embed_dim: 200,
            hidden: 100,
            num_layers: 2,
            dropout: 0.3,
            bridge_dropout: 0.3,
            use_encoder_feature: true,
            use_decoder_feature: true,
            hard_label_bridge: false,
            bridge_input: BridgeInput::PredictorLogits,
            lr: 3e-4,
            epochs: 60,
            batch_size: 16,
            patience: 10,
            val_samples: 200,
            max_decode_len: 20,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// The configuration of the unconditioned baseline.
    pub fn mle_baseline(mut self) -> Self {
        self.use_encoder_feature = false;
        self.use_decoder_feature = false;
        self
    }

    pub fn uses_bridge(&self) -> bool {
        self.use_encoder_feature || self.use_decoder_feature
    }
}

#[derive(Debug, Clone, Copy)]
struct BridgeParams {
    shared_w: ParamId,
    shared_b: ParamId,
    enc_w: ParamId,
    enc_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub store: ParamStore,
    pub config: GeneratorConfig,
    pub token_vocab: TokenVocab,
    pub keyword_vocab: KeywordVocab,
    embedding: ParamId,
    encoder: Gru,
    decoder: Gru,
    attn_w: ParamId,
    attn_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    bridge: BridgeParams,
}

/// Encoder output for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `[T, hidden]` attention memory.
    pub memory: Tensor,
    /// Final encoder state per layer, used to start the decoder.
    pub states: Vec<Tensor>,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> Result<Self> {
        if keyword_vocab.is_empty() {
            return Err(Error::EmptyKeywordVocab);
        }
        if config.num_layers == 0 || config.hidden == 0 || config.embed_dim == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut store = ParamStore::new();
        let (e, h, c, v) = (config.embed_dim, config.hidden, keyword_vocab.len(), token_vocab.len());
        let embedding = store.add_embedding("gen.embedding", v, e, &mut rng);
        let encoder = Gru::new(&mut store, "gen.encoder", e, h, config.num_layers, config.dropout, &mut rng);
        let decoder = Gru::new(&mut store, "gen.decoder", e, h, config.num_layers, config.dropout, &mut rng);
        let attn_w = store.add_uniform("gen.attn.w", &[2 * h, h], &mut rng);
        let attn_b = store.add_uniform("gen.attn.b", &[1, h], &mut rng);
        let out_w = store.add_uniform("gen.out.w", &[h, v], &mut rng);
        let out_b = store.add_uniform("gen.out.b", &[1, v], &mut rng);
        let bridge = BridgeParams {
            shared_w: store.add_uniform("gen.bridge.shared.w", &[c, 2 * h], &mut rng),
            shared_b: store.add_uniform("gen.bridge.shared.b", &[1, 2 * h], &mut rng),
            enc_w: store.add_uniform("gen.bridge.enc.w", &[2 * h, h], &mut rng),
            enc_b: store.add_uniform("gen.bridge.enc.b", &[1, h], &mut rng),
            dec_w: store.add_uniform("gen.bridge.dec.w", &[2 * h, e], &mut rng),
            dec_b: store.add_uniform("gen.bridge.dec.b", &[1, e], &mut rng),
        };
        Ok(GeneratorModel {
            store,
            config,
            token_vocab,
            keyword_vocab,
            embedding,
            encoder,
            decoder,
            attn_w,
            attn_b,
            out_w,
            out_b,
            bridge,
        })
    }

    pub fn num_keywords(&self) -> usize {
        self.keyword_vocab.len()
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    /// Bridge parameter ids (shared, encoder head, decoder head; weights
    /// then biases).
    pub fn bridge_params(&self) -> [ParamId; 6] {
        let b = self.bridge;
        [b.shared_w, b.enc_w, b.dec_w, b.shared_b, b.enc_b, b.dec_b]
    }

    /// Masks with this model's hard-label setting.
    pub fn mask(&self, logits: &KeywordLogits, selected: &KeywordSet) -> Result<MaskedLogits> {
        mask_logits(logits, selected, &self.keyword_vocab, self.config.hard_label_bridge)
    }

    fn bridge_vars(&self, tape: &mut Tape<'_>, masked: &[f64], rng: &mut Rng) -> Result<(Var, Var), NnError> {
        if masked.len() != self.num_keywords() {
            return Err(NnError::ShapeMismatch {
                op: "bridge",
                left: vec![1, masked.len()],
                right: vec![1, self.num_keywords()],
            });
        }
        let x = tape.leaf(Tensor::row(masked.to_vec()));
        let x = tape.dropout(x, self.config.bridge_dropout, rng)?;
        let hidden = tape.linear(x, self.bridge.shared_w, self.bridge.shared_b)?;
        let hidden = tape.tanh(hidden)?;
        let enc = tape.linear(hidden, self.bridge.enc_w, self.bridge.enc_b)?;
        let dec = tape.linear(hidden, self.bridge.dec_w, self.bridge.dec_b)?;
        Ok((enc, dec))
    }

    /// Bridge features; dropout is active only in training mode.
    pub fn bridge(&self, masked: &MaskedLogits, train_mode: bool, rng: &mut Rng) -> Result<BridgeFeatures> {
        let mut tape = if train_mode {
            Tape::training(&self.store)
        } else {
            Tape::new(&self.store)
        };
        let (enc, dec) = self.bridge_vars(&mut tape, &masked.0, rng)?;
        Ok(BridgeFeatures {
            encoder_feature: tape.value(enc).data().to_vec(),
            decoder_feature: tape.value(dec).data().to_vec(),
        })
    }

    /// Memory `[T, H]` and final states. `enc_feature` overwrites slot 0.
    fn encode_vars(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        enc_feature: Option<Var>,
        rng: &mut Rng,
    ) -> Result<(Var, Vec<Var>), NnError> {
        let table = tape.param(self.embedding);
        let x = tape.embedding(table, ids)?;
        let x = tape.dropout(x, self.config.dropout, rng)?;
        let h0: Vec<Var> = (0..self.config.num_layers)
            .map(|_| tape.leaf(Tensor::zeros(&[1, self.config.hidden])))
            .collect();
        let (mut outputs, finals) = self.encoder.run_sequence(tape, x, &h0, rng)?;
        if let Some(f) = enc_feature {
            outputs[0] = f;
        }
        let memory = tape.concat(&outputs, 0)?;
        Ok((memory, finals))
    }

    /// One decoder step: returns the attentional hidden state `h̃` and the
    /// new per-layer states.
    fn decode_vars(
        &self,
        tape: &mut Tape<'_>,
        input: Var,
        states: &[Var],
        memory: Var,
        rng: &mut Rng,
    ) -> Result<(Var, Vec<Var>), NnError> {
        let input = tape.dropout(input, self.config.dropout, rng)?;
        let next = self.decoder.step(tape, input, states, rng)?;
        let top = *next.last().expect("at least one layer");
        let top_t = tape.transpose(top)?;
        let scores = tape.matmul(memory, top_t)?;
        let weights = tape.softmax(scores, 0)?;
        let weights_t = tape.transpose(weights)?;
        let ctx = tape.matmul(weights_t, memory)?;
        let cat = tape.concat(&[ctx, top], 1)?;
        let attn = tape.linear(cat, self.attn_w, self.attn_b)?;
        let attn = tape.tanh(attn)?;
        let attn = tape.dropout(attn, self.config.dropout, rng)?;
        Ok((attn, next))
    }

    fn context_ids(&self, context: &TokenSequence) -> Result<Vec<usize>> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        Ok(self.token_vocab.encode(context))
    }

    /// Encodes `context` in evaluation mode. Features are ignored when the
    /// encoder feature is disabled.
    pub fn encode(&self, context: &TokenSequence, feats: Option<&BridgeFeatures>) -> Result<Encoded> {
        let ids = self.context_ids(context)?;
        let mut tape = Tape::new(&self.store);
        let mut rng = seeded_rng(0);
        let enc = match feats {
            Some(f) if self.config.use_encoder_feature => {
                Some(tape.leaf(Tensor::row(f.encoder_feature.clone())))
            }
            _ => None,
        };
        let (memory, finals) = self.encode_vars(&mut tape, &ids, enc, &mut rng)?;
        Ok(Encoded {
            memory: tape.value(memory).clone(),
            states: finals.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Next-token log-probabilities in evaluation mode. At step 0 the input
    /// is the decoder feature when given (and enabled), else `embed(SOS)`.
    pub fn decode_step(
        &self,
        prev: usize,
        states: &[Tensor],
        memory: &Tensor,
        step: usize,
        decoder_feature: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<Tensor>)> {
        let mut tape = Tape::new(&self.store);
        let mut rng = seeded_rng(0);
        let input = match decoder_feature {
            Some(f) if step == 0 && self.config.use_decoder_feature => tape.leaf(Tensor::row(f.to_vec())),
            _ => {
                let table = tape.param(self.embedding);
                let token = if step == 0 { SOS } else { prev };
                tape.embedding(table, &[token])?
            }
        };
        let states: Vec<Var> = states.iter().map(|s| tape.leaf(s.clone())).collect();
        let memory = tape.leaf(memory.clone());
        let (attn, next) = self.decode_vars(&mut tape, input, &states, memory, &mut rng)?;
        let logits = tape.linear(attn, self.out_w, self.out_b)?;
        let logp = tape.log_softmax(logits)?;
        Ok((
            tape.value(logp).data().to_vec(),
            next.iter().map(|&v| tape.value(v).clone()).collect(),
        ))
    }

    /// Prepares decoding for one context. `masked` is ignored entirely when
    /// both bridge features are disabled; otherwise `None` means zero `p̃`.
    pub fn session(&self, context: &TokenSequence, masked: Option<&MaskedLogits>) -> Result<GeneratorSession<'_>> {
        let feats = if self.config.uses_bridge() {
            let zeros;
            let p = match masked {
                Some(m) => m,
                None => {
                    zeros = MaskedLogits::zeros(self.num_keywords());
                    &zeros
                }
            };
            Some(self.bridge(p, false, &mut seeded_rng(0))?)
        } else {
            None
        };
        let encoded = self.encode(context, feats.as_ref())?;
        Ok(GeneratorSession {
            model: self,
            encoded,
            decoder_feature: feats
                .filter(|_| self.config.use_decoder_feature)
                .map(|f| f.decoder_feature),
        })
    }

    /// Decoding with the bridge bypassed, whatever the feature flags say.
    pub fn unconditioned_session(&self, context: &TokenSequence) -> Result<GeneratorSession<'_>> {
        Ok(GeneratorSession {
            model: self,
            encoded: self.encode(context, None)?,
            decoder_feature: None,
        })
    }

    /// Teacher-forced mean per-token negative log-likelihood of `target`
    /// (EOS appended) on `tape`.
    pub fn pair_loss(
        &self,
        tape: &mut Tape<'_>,
        context_ids: &[usize],
        masked: &[f64],
        target_ids: &[usize],
        rng: &mut Rng,
    ) -> Result<Var, NnError> {
        let (enc_feat, dec_feat) = if self.config.uses_bridge() {
            let (e, d) = self.bridge_vars(tape, masked, rng)?;
            (
                self.config.use_encoder_feature.then_some(e),
                self.config.use_decoder_feature.then_some(d),
            )
        } else {
            (None, None)
        };
        let (memory, mut states) = self.encode_vars(tape, context_ids, enc_feat, rng)?;
        let table = tape.param(self.embedding);
        let mut input_ids = Vec::with_capacity(target_ids.len() + 1);
        input_ids.push(SOS);
        input_ids.extend_from_slice(target_ids);
        let inputs = tape.embedding(table, &input_ids)?;
        let mut rows = Vec::with_capacity(input_ids.len());
        for t in 0..input_ids.len() {
            let x = match dec_feat {
                Some(d) if t == 0 => d,
                _ => tape.slice(inputs, 0, t, 1)?,
            };
            let (attn, next) = self.decode_vars(tape, x, &states, memory, rng)?;
            rows.push(attn);
            states = next;
        }
        let hidden = tape.concat(&rows, 0)?;
        let logits = tape.linear(hidden, self.out_w, self.out_b)?;
        let mut targets = target_ids.to_vec();
        targets.push(EOS);
        tape.cross_entropy(logits, &targets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), serde_json::json!("generator"));
        meta.insert("config".into(), serde_json::to_value(&self.config)?);
        meta.insert("token_vocab_hash".into(), serde_json::json!(self.token_vocab.hash()));
        meta.insert("keyword_vocab_hash".into(), serde_json::json!(self.keyword_vocab.hash()));
        self.store.to_checkpoint(meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let kind: String = ckpt.meta("kind")?;
        if kind != "generator" {
            return Err(Error::Config(format!("{} holds a {kind}, not a generator", path.display())));
        }
        check_vocab_hash(&ckpt, "token_vocab_hash", &token_vocab.hash())?;
        check_vocab_hash(&ckpt, "keyword_vocab_hash", &keyword_vocab.hash())?;
        let config: GeneratorConfig = ckpt.meta("config")?;
        let mut model = GeneratorModel::new(config, token_vocab, keyword_vocab)?;
        model.store.load_checkpoint(&ckpt)?;
        Ok(model)
    }
}

/// Per-context decoding state over an immutable model.
pub struct GeneratorSession<'m> {
    model: &'m GeneratorModel,
    encoded: Encoded,
    decoder_feature: Option<Vec<f64>>,
}

impl GeneratorSession<'_> {
    pub fn memory(&self) -> &Tensor {
        &self.encoded.memory
    }

    pub fn decoder_feature(&self) -> Option<&[f64]> {
        self.decoder_feature.as_deref()
    }
}

impl StepModel for GeneratorSession<'_> {
    type State = Vec<Tensor>;

    fn vocab_size(&self) -> usize {
        self.model.token_vocab.len()
    }

    fn eos(&self) -> usize {
        EOS
    }

    fn is_banned(&self, token: usize) -> bool {
        token == PAD || token == SOS
    }

    fn initial_state(&self) -> Vec<Tensor> {
        self.encoded.states.clone()
    }

    fn step(&self, state: &Vec<Tensor>, prev: Option<usize>, step: usize) -> Result<(Vec<f64>, Vec<Tensor>)> {
        self.model.decode_step(
            prev.unwrap_or(SOS),
            state,
            &self.encoded.memory,
            step,
            self.decoder_feature.as_deref(),
        )
    }
}

/// One teacher-forcing example.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorExample {
    pub context_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub masked: MaskedLogits,
    pub context: TokenSequence,
    pub target: TokenSequence,
}

/// Builds `(x, y, p̃)` training pairs. The bridge input is the predictor's
/// logits masked by the in-dictionary keywords of `y`, or their indicator.
/// Questions without any dictionary keyword are skipped when the bridge is
/// in use.
pub fn generator_examples(
    model: &GeneratorModel,
    records: &[ContextRecord],
    predictor: Option<&PredictorModel>,
) -> Result<Vec<GeneratorExample>> {
    let cfg = &model.config;
    let use_logits = predictor.is_some() && cfg.bridge_input == BridgeInput::PredictorLogits && !cfg.hard_label_bridge;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for rec in records.iter().filter(|r| !r.context.is_empty()) {
        let logits = match predictor {
            Some(p) if use_logits && !rec.questions.is_empty() => Some(p.predict(&rec.context)?),
            _ => None,
        };
        let context_ids = model.token_vocab.encode(&rec.context);
        for q in rec.questions.iter().filter(|q| !q.question.is_empty()) {
            let known: KeywordSet = q
                .keywords
                .iter()
                .filter(|k| model.keyword_vocab.id(k).is_some())
                .cloned()
                .collect();
            let masked = if !cfg.uses_bridge() {
                MaskedLogits::zeros(model.num_keywords())
            } else if known.is_empty() {
                skipped += 1;
                continue;
            } else {
                match &logits {
                    Some(l) => mask_logits(l, &known, &model.keyword_vocab, false)?,
                    None => mask_logits(
                        &KeywordLogits::from_logits(vec![0.0; model.num_keywords()]),
                        &known,
                        &model.keyword_vocab,
                        true,
                    )?,
                }
            };
            out.push(GeneratorExample {
                context_ids: context_ids.clone(),
                target_ids: model.token_vocab.encode(&q.question),
                masked,
                context: rec.context.clone(),
                target: q.question.clone(),
            });
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, "questions without dictionary keywords skipped");
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCurve {
    /// Mean per-token training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Greedy-decoding BLEU on the validation sample per epoch.
    pub val_bleu: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean per-token loss in evaluation mode.
pub fn mean_token_loss(model: &GeneratorModel, examples: &[GeneratorExample]) -> Result<f64> {
    let mut rng = seeded_rng(0);
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        let mut tape = Tape::new(&model.store);
        let loss = model.pair_loss(&mut tape, &ex.context_ids, &ex.masked.0, &ex.target_ids, &mut rng)?;
        let n = ex.target_ids.len() + 1;
        total += tape.value(loss).item() * n as f64;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

/// Greedy-decoding corpus BLEU of `examples` against their targets.
pub fn greedy_bleu(model: &GeneratorModel, examples: &[GeneratorExample]) -> Result<f64> {
    let cfg = BeamConfig {
        beam_size: 1,
        diverse_groups: 1,
        max_len: model.config.max_decode_len,
        ..Default::default()
    };
    let constraints = DecodeConstraints::default();
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for ex in examples {
        let session = model.session(&ex.context, Some(&ex.masked))?;
        let best = beam_search(&session, &cfg, &constraints)?;
        let tokens = best.first().map(|h| model.token_vocab.decode(&h.tokens)).unwrap_or_default();
        hyps.push(TokenSequence::from_tokens(tokens));
        refs.push(vec![ex.target.clone()]);
    }
    corpus_bleu(&hyps, &refs)
}

/// One optimizer step over `batch`; returns the summed per-example loss.
fn train_batch(model: &mut GeneratorModel, adam: &mut AdamState, batch: &[&GeneratorExample], rng: &mut Rng) -> Result<f64> {
    let mut sum = 0.0;
    for ex in batch {
        let grads = {
            let mut tape = Tape::training(&model.store);
            let loss = model.pair_loss(&mut tape, &ex.context_ids, &ex.masked.0, &ex.target_ids, rng)?;
            sum += tape.value(loss).item();
            tape.backward(loss)?
        };
        model.store.accumulate(&grads);
    }
    model.store.scale_grads(1.0 / batch.len() as f64);
    model.store.clip_grad_norm(GRAD_CLIP_NORM);
    adam.step(&mut model.store);
    Ok(sum)
}

/// Teacher-forced MLE training with Adam. The predictor is only read.
/// With validation data, the parameters with the best greedy BLEU on up
/// to `val_samples` validation pairs are kept.
pub fn train_generator(
    model: &mut GeneratorModel,
    train: &[ContextRecord],
    val: &[ContextRecord],
    predictor: Option<&PredictorModel>,
) -> Result<GeneratorCurve> {
    if let Some(p) = predictor {
        if p.keyword_vocab.hash() != model.keyword_vocab.hash() {
            return Err(Error::Config("predictor and generator keyword vocabularies differ".into()));
        }
    }
    let examples = generator_examples(model, train, predictor)?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut val_examples = generator_examples(model, val, predictor)?;
    val_examples.truncate(model.config.val_samples);
    train_on_examples(model, &examples, &val_examples)
}

pub fn train_on_examples(
    model: &mut GeneratorModel,
    examples: &[GeneratorExample],
    val_examples: &[GeneratorExample],
) -> Result<GeneratorCurve> {
    let cfg = model.config.clone();
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut curve = GeneratorCurve::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&GeneratorExample> = chunk.iter().map(|&i| &examples[i]).collect();
            epoch_loss += train_batch(model, &mut adam, &batch, &mut rng)?;
        }
        curve.train_loss.push(epoch_loss / examples.len() as f64);
        if val_examples.is_empty() {
            curve.best_epoch = epoch;
            continue;
        }
        let bleu = greedy_bleu(model, val_examples)?;
        curve.val_bleu.push(bleu);
        tracing::debug!(epoch, loss = curve.train_loss[epoch], bleu, "generator epoch");
        if best.as_ref().is_none_or(|(b, _)| bleu > *b) {
            best = Some((bleu, model.store.clone()));
            curve.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(curve)
}
