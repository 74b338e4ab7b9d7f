//! TextCNN multilabel keyword predictor `p(z|x)`.
//!
//! Each keyword is scored independently: embeddings → parallel valid
//! convolutions of widths {3,4,5} with ReLU and max-over-time pooling →
//! dropout → a linear layer producing one logit per dictionary keyword.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    seeded_rng, AdamState, Checkpoint, NnError, ParamId, ParamStore, Rng, Tape, Var,
    GRAD_CLIP_NORM,
};
use crate::textproc::{ContextRecord, KeywordSet, KeywordVocab, TokenSequence, TokenVocab, PAD};

/// Per-context keyword scores: raw logits and their sigmoids.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordLogits {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl KeywordLogits {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = logits.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
        KeywordLogits { logits, probs }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Keyword ids by descending probability; ties keep dictionary order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.probs.len()).collect();
        ids.sort_by(|&a, &b| self.logits[b].total_cmp(&self.logits[a]).then(a.cmp(&b)));
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// One example per context; targets are the union over its questions.
    Union,
    /// One example per question.
    PerQuestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub num_filters: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Keep only the `-z·ln p` term of the loss.
    pub positive_only_loss: bool,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            embed_dim: 200,
            filter_widths: vec![3, 4, 5],
            num_filters: 100,
            dropout: 0.5,
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            patience: 3,
            positive_only_loss: false,
            target_mode: TargetMode::Union,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBank {
    weight: ParamId,
    bias: ParamId,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub store: ParamStore,
    pub config: PredictorConfig,
    pub token_vocab: TokenVocab,
    pub keyword_vocab: KeywordVocab,
    embedding: ParamId,
    convs: Vec<ConvBank>,
    out_w: ParamId,
    out_b: ParamId,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> Result<Self> {
        if keyword_vocab.is_empty() {
            return Err(Error::EmptyKeywordVocab);
        }
        if config.filter_widths.is_empty() || config.filter_widths.contains(&0) {
            return Err(Error::Config("filter widths must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut store = ParamStore::new();
        let (e, f) = (config.embed_dim, config.num_filters);
        let embedding = store.add_embedding("pred.embedding", token_vocab.len(), e, &mut rng);
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| ConvBank {
                weight: store.add_uniform(&format!("pred.conv{w}.w"), &[w * e, f], &mut rng),
                bias: store.add_uniform(&format!("pred.conv{w}.b"), &[1, f], &mut rng),
                width: w,
            })
            .collect::<Vec<_>>();
        let features = f * convs.len();
        let out_w = store.add_uniform("pred.out.w", &[features, keyword_vocab.len()], &mut rng);
        let out_b = store.add_uniform("pred.out.b", &[1, keyword_vocab.len()], &mut rng);
        Ok(PredictorModel {
            store,
            config,
            token_vocab,
            keyword_vocab,
            embedding,
            convs,
            out_w,
            out_b,
        })
    }

    pub fn num_keywords(&self) -> usize {
        self.keyword_vocab.len()
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    pub fn output_bias(&self) -> ParamId {
        self.out_b
    }

    pub fn output_weight(&self) -> ParamId {
        self.out_w
    }

    fn max_width(&self) -> usize {
        self.config.filter_widths.iter().copied().max().unwrap_or(1)
    }

    /// Token ids, PAD-extended to the widest filter.
    pub fn encode_context(&self, context: &TokenSequence) -> Vec<usize> {
        let mut ids = self.token_vocab.encode(context);
        while ids.len() < self.max_width() {
            ids.push(PAD);
        }
        ids
    }

    /// `[1, C]` logits on `tape`.
    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize], rng: &mut Rng) -> Result<Var, NnError> {
        let table = tape.param(self.embedding);
        let x = tape.embedding(table, ids)?;
        let mut pooled = Vec::with_capacity(self.convs.len());
        for bank in &self.convs {
            let w = tape.param(bank.weight);
            let b = tape.param(bank.bias);
            let c = tape.conv1d_valid(x, w, b, bank.width)?;
            let c = tape.relu(c)?;
            pooled.push(tape.max_over_time(c)?);
        }
        let feats = tape.concat(&pooled, 1)?;
        let feats = tape.dropout(feats, self.config.dropout, rng)?;
        tape.linear(feats, self.out_w, self.out_b)
    }

    /// Loss for one example on `tape`.
    pub fn loss(&self, tape: &mut Tape<'_>, ids: &[usize], targets: &[f64], rng: &mut Rng) -> Result<Var, NnError> {
        let logits = self.forward(tape, ids, rng)?;
        tape.bce_with_logits(logits, targets, self.config.positive_only_loss)
    }

    /// Deterministic evaluation-mode prediction.
    pub fn predict(&self, context: &TokenSequence) -> Result<KeywordLogits> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let ids = self.encode_context(context);
        let mut tape = Tape::new(&self.store);
        // eval mode: dropout never draws from this rng
        let mut rng = seeded_rng(0);
        let logits = self.forward(&mut tape, &ids, &mut rng)?;
        Ok(KeywordLogits::from_logits(tape.value(logits).data().to_vec()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), serde_json::json!("predictor"));
        meta.insert("config".into(), serde_json::to_value(&self.config)?);
        meta.insert("token_vocab_hash".into(), serde_json::json!(self.token_vocab.hash()));
        meta.insert("keyword_vocab_hash".into(), serde_json::json!(self.keyword_vocab.hash()));
        self.store.to_checkpoint(meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        check_vocab_hash(&ckpt, "token_vocab_hash", &token_vocab.hash())?;
        check_vocab_hash(&ckpt, "keyword_vocab_hash", &keyword_vocab.hash())?;
        let config: PredictorConfig = ckpt.meta("config")?;
        let mut model = PredictorModel::new(config, token_vocab, keyword_vocab)?;
        model.store.load_checkpoint(&ckpt)?;
        Ok(model)
    }
}

pub(crate) fn check_vocab_hash(ckpt: &Checkpoint, key: &str, expected: &str) -> Result<()> {
    let found: String = ckpt.meta(key)?;
    if found != expected {
        return Err(Error::Config(format!(
            "checkpoint {key} {found} does not match vocabulary {expected}"
        )));
    }
    Ok(())
}

/// Training examples `(context ids, keyword targets)`.
pub fn predictor_examples(model: &PredictorModel, records: &[ContextRecord], mode: TargetMode) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for rec in records.iter().filter(|r| !r.questions.is_empty() && !r.context.is_empty()) {
        let ids = model.encode_context(&rec.context);
        match mode {
            TargetMode::Union => {
                out.push((ids, model.keyword_vocab.targets(&rec.keyword_union()).0));
            }
            TargetMode::PerQuestion => {
                for q in &rec.questions {
                    out.push((ids.clone(), model.keyword_vocab.targets(&q.keywords).0));
                }
            }
        }
    }
    out
}

fn mean_loss(model: &PredictorModel, examples: &[(Vec<usize>, Vec<f64>)]) -> Result<f64> {
    let mut rng = seeded_rng(0);
    let mut total = 0.0;
    for (ids, targets) in examples {
        let mut tape = Tape::new(&model.store);
        let loss = model.loss(&mut tape, ids, targets, &mut rng)?;
        total += tape.value(loss).item();
    }
    Ok(total / examples.len().max(1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation loss per epoch (empty without a validation split).
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Minimizes mean BCE with Adam; keeps the parameters with the lowest
/// validation loss and stops after `patience` epochs without improvement.
pub fn train_predictor(
    model: &mut PredictorModel,
    train: &[ContextRecord],
    val: &[ContextRecord],
) -> Result<TrainCurve> {
    let cfg = model.config.clone();
    let examples = predictor_examples(model, train, cfg.target_mode);
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let val_examples = predictor_examples(model, val, cfg.target_mode);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut curve = TrainCurve::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            for &i in batch {
                let (ids, targets) = &examples[i];
                let grads = {
                    let mut tape = Tape::training(&model.store);
                    let loss = model.loss(&mut tape, ids, targets, &mut rng)?;
                    epoch_loss += tape.value(loss).item();
                    tape.backward(loss)?
                };
                model.store.accumulate(&grads);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            model.store.clip_grad_norm(GRAD_CLIP_NORM);
            adam.step(&mut model.store);
        }
        curve.train_loss.push(epoch_loss / examples.len() as f64);

        if val_examples.is_empty() {
            curve.best_epoch = epoch;
            continue;
        }
        let val_loss = mean_loss(model, &val_examples)?;
        curve.val_loss.push(val_loss);
        tracing::debug!(epoch, train = curve.train_loss[epoch], val = val_loss, "predictor epoch");
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.store.clone()));
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

/// `|top-k ∩ truth| / k`, ranking by probability with dictionary-order ties.
pub fn precision_at_k(logits: &KeywordLogits, truth: &KeywordSet, vocab: &KeywordVocab, k: usize) -> Result<f64> {
    if logits.len() < k || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "precision@{k} needs at least {k} keywords, have {}",
            logits.len()
        )));
    }
    let hits = logits
        .ranking()
        .into_iter()
        .take(k)
        .filter(|&id| truth.contains(vocab.entry(id)))
        .count();
    Ok(hits as f64 / k as f64)
}

pub fn precision_at_5(logits: &KeywordLogits, truth: &KeywordSet, vocab: &KeywordVocab) -> Result<f64> {
    precision_at_k(logits, truth, vocab, 5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub records: usize,
    pub loss: f64,
    pub p_at_5: f64,
}

/// Mean union-target loss and P@5 over records with questions.
pub fn evaluate_predictor(model: &PredictorModel, records: &[ContextRecord]) -> Result<PredictorReport> {
    let examples = predictor_examples(model, records, TargetMode::Union);
    let loss = mean_loss(model, &examples)?;
    let mut p5 = 0.0;
    let mut n = 0;
    for rec in records.iter().filter(|r| !r.questions.is_empty() && !r.context.is_empty()) {
        let logits = model.predict(&rec.context)?;
        p5 += precision_at_5(&logits, &rec.keyword_union(), &model.keyword_vocab)?;
        n += 1;
    }
    Ok(PredictorReport {
        records: n,
        loss,
        p_at_5: if n > 0 { p5 / n as f64 } else { 0.0 },
    })
}
