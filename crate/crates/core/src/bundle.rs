//! On-disk model directory: vocabularies, graph, checkpoints, blacklist
//! and pipeline settings side by side.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::group::{GroupSettings, Pipeline};
use crate::predictor::PredictorModel;
use crate::selection::{Blacklist, CooccurrenceGraph};
use crate::textproc::{CorpusOptions, KeywordVocab, TokenVocab};

pub const TOKEN_VOCAB_FILE: &str = "token_vocab.tsv";
pub const KEYWORD_VOCAB_FILE: &str = "keyword_vocab.tsv";
pub const GRAPH_FILE: &str = "cooccurrence.json";
pub const PREDICTOR_FILE: &str = "predictor.json";
pub const GENERATOR_FILE: &str = "generator.json";
pub const MLE_GENERATOR_FILE: &str = "mle_generator.json";
pub const BLACKLIST_FILE: &str = "blacklist.json";
pub const SETTINGS_FILE: &str = "pipeline.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineFile {
    pub max_context_len: usize,
    pub settings: GroupSettings,
}

impl Default for PipelineFile {
    fn default() -> Self {
        PipelineFile {
            max_context_len: CorpusOptions::default().max_context_len,
            settings: GroupSettings::default(),
        }
    }
}

/// A loaded pipeline plus identifiers reported by the service.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub pipeline: Pipeline,
    /// Hash of the keyword dictionary.
    pub vocab_hash: String,
    /// Hash of the checkpoint files.
    pub model_version: String,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Bundle {
    /// Loads a model directory. `pipeline.json`, `blacklist.json` and
    /// `mle_generator.json` are optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let token_vocab = TokenVocab::load(&dir.join(TOKEN_VOCAB_FILE))?;
        let keyword_vocab = KeywordVocab::load(&dir.join(KEYWORD_VOCAB_FILE))?;
        let graph = CooccurrenceGraph::load(&dir.join(GRAPH_FILE))?;
        let predictor = PredictorModel::load(&dir.join(PREDICTOR_FILE), token_vocab.clone(), keyword_vocab.clone())?;
        let generator = GeneratorModel::load(&dir.join(GENERATOR_FILE), token_vocab.clone(), keyword_vocab.clone())?;
        let mut checkpoints = vec![read(&dir.join(PREDICTOR_FILE))?, read(&dir.join(GENERATOR_FILE))?];

        let mut pipeline = Pipeline::new(predictor, generator, graph)?;
        let mle_path = dir.join(MLE_GENERATOR_FILE);
        if mle_path.exists() {
            pipeline.mle_generator = Some(GeneratorModel::load(&mle_path, token_vocab, keyword_vocab.clone())?);
            checkpoints.push(read(&mle_path)?);
        }
        let blacklist_path = dir.join(BLACKLIST_FILE);
        if blacklist_path.exists() {
            pipeline.blacklist = Blacklist::load(&blacklist_path)?;
        }
        let settings_path = dir.join(SETTINGS_FILE);
        if settings_path.exists() {
            let file: PipelineFile = serde_json::from_slice(&read(&settings_path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", settings_path.display())))?;
            file.settings.validate()?;
            pipeline.settings = file.settings;
            pipeline.corpus_options.max_context_len = file.max_context_len;
        }
        let model_version = crate::textproc::content_hash(
            checkpoints.iter().map(|c| std::str::from_utf8(c).unwrap_or_default()),
        );
        Ok(Bundle {
            vocab_hash: keyword_vocab.hash(),
            model_version,
            pipeline,
        })
    }
}

impl Pipeline {
    /// Writes every component into `dir`, creating it if needed.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.predictor.token_vocab.save(&dir.join(TOKEN_VOCAB_FILE))?;
        self.predictor.keyword_vocab.save(&dir.join(KEYWORD_VOCAB_FILE))?;
        self.graph.save(&dir.join(GRAPH_FILE))?;
        self.predictor.save(&dir.join(PREDICTOR_FILE))?;
        self.generator.save(&dir.join(GENERATOR_FILE))?;
        if let Some(mle) = &self.mle_generator {
            mle.save(&dir.join(MLE_GENERATOR_FILE))?;
        }
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write(BLACKLIST_FILE, serde_json::to_string_pretty(self.blacklist.patterns())?)?;
        let file = PipelineFile {
            max_context_len: self.corpus_options.max_context_len,
            settings: self.settings.clone(),
        };
        write(SETTINGS_FILE, serde_json::to_string_pretty(&file)?)
    }
}
