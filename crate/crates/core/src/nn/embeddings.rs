use std::path::Path;

use super::{NnError, Tensor};
use crate::textproc::{TokenVocab, UNK};

/// Reads `word v1 … vd` lines (GloVe / word2vec text format) into rows of
/// `table` for words present in `vocab`. A leading `count dim` header line
/// is skipped. Returns how many vocabulary rows were filled.
pub fn load_text_embeddings(path: &Path, vocab: &TokenVocab, table: &mut Tensor) -> Result<usize, NnError> {
    let dim = table.cols();
    if table.rows() != vocab.len() {
        return Err(NnError::ShapeMismatch {
            op: "load_text_embeddings",
            left: table.shape().to_vec(),
            right: vec![vocab.len(), dim],
        });
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| NnError::InvalidArgument(format!("{}: {e}", path.display())))?;
    let mut filled = vec![false; vocab.len()];
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if lineno == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(NnError::InvalidArgument(format!(
                "{}:{}: expected {dim} values, found {}",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        let id = vocab.id(word);
        if id == UNK && word != "<unk>" {
            continue;
        }
        let row: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                NnError::InvalidArgument(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
        filled[id] = true;
    }
    Ok(filled.iter().filter(|&&f| f).count())
}
