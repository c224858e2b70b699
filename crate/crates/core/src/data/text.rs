use std::collections::BTreeSet;

use aligned_tensor::Tensor;

use super::formats::EmbeddingTable;
use super::sample::{Modality, Sample, TEXT_EMBED_DIM, TEXT_TOKENS};
use crate::error::{CoreError, Result};

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Embeds a sentence as a `300 × 16` matrix, one column per kept token.
///
/// Stop words and out-of-vocabulary tokens are dropped, the remainder is
/// cropped to the first 16 tokens and shorter sentences are padded with
/// zero columns.
pub fn embed_text<S: AsRef<str>>(
    id: &str,
    tokens: &[S],
    table: &EmbeddingTable,
    stopwords: &BTreeSet<String>,
) -> Result<Sample> {
    if table.dim() != TEXT_EMBED_DIM {
        return Err(CoreError::data(format!(
            "embedding dimension {} differs from {TEXT_EMBED_DIM}",
            table.dim()
        )));
    }
    let kept: Vec<&[f32]> = tokens
        .iter()
        .map(|t| t.as_ref().to_lowercase())
        .filter(|t| !stopwords.contains(t))
        .filter_map(|t| table.get(&t))
        .take(TEXT_TOKENS)
        .collect();
    if kept.is_empty() {
        return Err(CoreError::Degenerate(format!(
            "text {id} has no in-vocabulary tokens after stop-word removal"
        )));
    }
    let mut data = vec![0.0; TEXT_EMBED_DIM * TEXT_TOKENS];
    for (col, v) in kept.iter().enumerate() {
        for (row, &x) in v.iter().enumerate() {
            data[row * TEXT_TOKENS + col] = f64::from(x);
        }
    }
    let mut s = Sample::new(id, Modality::Text, Tensor::new(vec![TEXT_EMBED_DIM, TEXT_TOKENS], data)?)?;
    s.processed = true;
    Ok(s)
}
