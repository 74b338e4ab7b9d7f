//! Flat TOML configuration shared by all subcommands. Every key is
//! optional; `--set key=value` flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kpcnet_core::generator::{BridgeInput, GeneratorConfig};
use kpcnet_core::group::{GroupSettings, Strategy};
use kpcnet_core::predictor::{PredictorConfig, TargetMode};
use kpcnet_core::selection::Blacklist;
use kpcnet_core::textproc::{CorpusOptions, Stopwords};
use kpcnet_service::ServiceConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,

    pub max_context_len: Option<usize>,
    pub max_question_len: Option<usize>,
    /// One stopword per line; replaces the bundled list.
    pub stopwords: Option<PathBuf>,
    pub min_token_freq: Option<usize>,
    pub min_keyword_freq: Option<usize>,
    /// Pretrained word vectors in GloVe text format.
    pub embeddings: Option<PathBuf>,

    pub predictor_embed_dim: Option<usize>,
    pub predictor_filter_widths: Option<Vec<usize>>,
    pub predictor_num_filters: Option<usize>,
    pub predictor_dropout: Option<f64>,
    pub predictor_lr: Option<f64>,
    pub predictor_epochs: Option<usize>,
    pub predictor_batch_size: Option<usize>,
    pub predictor_patience: Option<usize>,
    pub predictor_positive_only_loss: Option<bool>,
    pub predictor_target_mode: Option<TargetMode>,

    pub generator_embed_dim: Option<usize>,
    pub generator_hidden: Option<usize>,
    pub generator_num_layers: Option<usize>,
    pub generator_dropout: Option<f64>,
    pub generator_bridge_dropout: Option<f64>,
    pub generator_use_encoder_feature: Option<bool>,
    pub generator_use_decoder_feature: Option<bool>,
    pub generator_hard_label_bridge: Option<bool>,
    pub generator_bridge_input: Option<BridgeInput>,
    pub generator_lr: Option<f64>,
    pub generator_epochs: Option<usize>,
    pub generator_batch_size: Option<usize>,
    pub generator_patience: Option<usize>,
    pub generator_val_samples: Option<usize>,
    pub generator_max_decode_len: Option<usize>,

    pub threshold: Option<f64>,
    pub selection_top_k: Option<usize>,
    pub selection_top_p: Option<f64>,
    pub sample_k: Option<usize>,
    pub n_samples: Option<usize>,
    pub clusters: Option<usize>,
    pub cluster_top_k: Option<usize>,
    pub beam_size: Option<usize>,
    pub diverse_groups: Option<usize>,
    pub diversity_strength: Option<f64>,
    pub decode_top_k: Option<usize>,
    pub decode_top_p: Option<f64>,
    pub max_len: Option<usize>,
    pub block_repeat_bigrams: Option<bool>,
    pub min_same_token_gap: Option<usize>,
    pub slots: Option<usize>,
    pub candidates: Option<usize>,
    pub dedup_threshold: Option<f64>,
    pub blacklist: Option<PathBuf>,

    pub host: Option<String>,
    pub port: Option<u16>,
    pub default_strategy: Option<Strategy>,
}

fn set<T: Clone>(target: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *target = v.clone();
    }
}

/// Parses `key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let Some((key, value)) = raw.split_once('=') else {
        bail!("override `{raw}` is not key=value");
    };
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl CliConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        toml::Value::Table(table).try_into().context("invalid configuration")
    }

    pub fn corpus_options(&self) -> Result<CorpusOptions> {
        let mut o = CorpusOptions::default();
        set(&mut o.max_context_len, &self.max_context_len);
        set(&mut o.max_question_len, &self.max_question_len);
        if let Some(p) = &self.stopwords {
            o.stopwords = Stopwords::load(p)?;
        }
        Ok(o)
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        let mut c = PredictorConfig::default();
        set(&mut c.embed_dim, &self.predictor_embed_dim);
        set(&mut c.filter_widths, &self.predictor_filter_widths);
        set(&mut c.num_filters, &self.predictor_num_filters);
        set(&mut c.dropout, &self.predictor_dropout);
        set(&mut c.lr, &self.predictor_lr);
        set(&mut c.epochs, &self.predictor_epochs);
        set(&mut c.batch_size, &self.predictor_batch_size);
        set(&mut c.patience, &self.predictor_patience);
        set(&mut c.positive_only_loss, &self.predictor_positive_only_loss);
        set(&mut c.target_mode, &self.predictor_target_mode);
        set(&mut c.seed, &self.seed);
        c
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let mut c = GeneratorConfig::default();
        set(&mut c.embed_dim, &self.generator_embed_dim);
        set(&mut c.hidden, &self.generator_hidden);
        set(&mut c.num_layers, &self.generator_num_layers);
        set(&mut c.dropout, &self.generator_dropout);
        set(&mut c.bridge_dropout, &self.generator_bridge_dropout);
        set(&mut c.use_encoder_feature, &self.generator_use_encoder_feature);
        set(&mut c.use_decoder_feature, &self.generator_use_decoder_feature);
        set(&mut c.hard_label_bridge, &self.generator_hard_label_bridge);
        set(&mut c.bridge_input, &self.generator_bridge_input);
        set(&mut c.lr, &self.generator_lr);
        set(&mut c.epochs, &self.generator_epochs);
        set(&mut c.batch_size, &self.generator_batch_size);
        set(&mut c.patience, &self.generator_patience);
        set(&mut c.val_samples, &self.generator_val_samples);
        set(&mut c.max_decode_len, &self.generator_max_decode_len);
        set(&mut c.seed, &self.seed);
        c
    }

    /// Overlays configured selection, decoding and display keys.
    pub fn apply_settings(&self, s: &mut GroupSettings) -> Result<()> {
        set(&mut s.selection.threshold, &self.threshold);
        set(&mut s.selection.top_k, &self.selection_top_k);
        set(&mut s.selection.top_p, &self.selection_top_p);
        set(&mut s.selection.sample_k, &self.sample_k);
        set(&mut s.selection.n_samples, &self.n_samples);
        set(&mut s.selection.clusters, &self.clusters);
        set(&mut s.selection.cluster_top_k, &self.cluster_top_k);
        set(&mut s.beam.beam_size, &self.beam_size);
        set(&mut s.beam.diverse_groups, &self.diverse_groups);
        set(&mut s.beam.diversity_strength, &self.diversity_strength);
        set(&mut s.beam.top_k, &self.decode_top_k);
        set(&mut s.beam.top_p, &self.decode_top_p);
        set(&mut s.beam.max_len, &self.max_len);
        set(&mut s.constraints.block_repeat_bigrams, &self.block_repeat_bigrams);
        set(&mut s.constraints.min_same_token_gap, &self.min_same_token_gap);
        set(&mut s.slots, &self.slots);
        set(&mut s.candidates, &self.candidates);
        set(&mut s.dedup_threshold, &self.dedup_threshold);
        s.validate()?;
        Ok(())
    }

    pub fn blacklist(&self) -> Result<Blacklist> {
        Ok(match &self.blacklist {
            Some(p) => Blacklist::load(p)?,
            None => Blacklist::default_patterns(),
        })
    }

    pub fn service_config(&self, model_dir: Option<PathBuf>) -> ServiceConfig {
        let mut c = ServiceConfig::default();
        set(&mut c.host, &self.host);
        set(&mut c.port, &self.port);
        set(&mut c.default_strategy, &self.default_strategy);
        if self.blacklist.is_some() {
            c.blacklist = self.blacklist.clone();
        }
        if let Some(dir) = model_dir {
            c.model_dir = dir;
        }
        c
    }
}
