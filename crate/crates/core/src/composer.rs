//! The composition function mapping (reference image, text) to a query embedding.
//!
//! `Precomputed` returns vectors exported offline by a real backbone, keyed
//! `"<ref_id>|<text_hash>"` (see [`composite_key`]). `Toy` is a linear
//! stand-in, `normalize(alpha·f_ref + (1 − alpha)·f_text)`, that makes the
//! scoring pipeline runnable without any model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{EmbeddingTable, EmbeddingVector};
use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("no composite embedding for `{0}`")]
    MissingComposite(String),
    #[error("no image embedding for `{0}`")]
    MissingImage(String),
    #[error("no text embedding for `{0}`")]
    MissingText(String),
    #[error("image table dim {image} differs from text table dim {text}")]
    DimMismatch { image: usize, text: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("composed vector for `{0}` has zero norm")]
    ZeroNorm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposerMode {
    Precomputed,
    Toy,
}

#[derive(Debug, Clone)]
pub enum ComposerBackend {
    Precomputed {
        composites: EmbeddingTable,
    },
    Toy {
        images: EmbeddingTable,
        texts: EmbeddingTable,
        alpha: f64,
    },
}

/// Key under which text embeddings are stored: hex SHA-256 of the trimmed text.
pub fn text_key(text: &str) -> String {
    sha256_hex(text.trim().as_bytes())
}

/// Key of a precomputed composite for a reference image and modification text.
pub fn composite_key(ref_id: &str, text: &str) -> String {
    format!("{ref_id}|{}", text_key(text))
}

impl ComposerBackend {
    pub fn precomputed(composites: EmbeddingTable) -> Self {
        ComposerBackend::Precomputed { composites }
    }

    pub fn toy(images: EmbeddingTable, texts: EmbeddingTable, alpha: f64) -> Result<Self, ComposeError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ComposeError::InvalidAlpha(alpha));
        }
        if images.dim() != texts.dim() {
            return Err(ComposeError::DimMismatch {
                image: images.dim(),
                text: texts.dim(),
            });
        }
        Ok(ComposerBackend::Toy { images, texts, alpha })
    }

    pub fn mode(&self) -> ComposerMode {
        match self {
            ComposerBackend::Precomputed { .. } => ComposerMode::Precomputed,
            ComposerBackend::Toy { .. } => ComposerMode::Toy,
        }
    }

    /// Content hashes of the backing tables, in a fixed order.
    pub fn table_hashes(&self) -> Vec<String> {
        match self {
            ComposerBackend::Precomputed { composites } => vec![composites.content_hash()],
            ComposerBackend::Toy { images, texts, .. } => vec![images.content_hash(), texts.content_hash()],
        }
    }

    pub fn compose(&self, pair_id: &str, ref_image_id: &str, text_id: &str) -> Result<EmbeddingVector, ComposeError> {
        match self {
            ComposerBackend::Precomputed { composites } => composites
                .get(pair_id)
                .cloned()
                .ok_or_else(|| ComposeError::MissingComposite(pair_id.to_string())),
            ComposerBackend::Toy { images, texts, alpha } => {
                let r = images
                    .get(ref_image_id)
                    .ok_or_else(|| ComposeError::MissingImage(ref_image_id.to_string()))?;
                let t = texts
                    .get(text_id)
                    .ok_or_else(|| ComposeError::MissingText(text_id.to_string()))?;
                let mixed: Vec<f64> = r
                    .values()
                    .iter()
                    .zip(t.values())
                    .map(|(&a, &b)| alpha * f64::from(a) + (1.0 - alpha) * f64::from(b))
                    .collect();
                let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(ComposeError::ZeroNorm(pair_id.to_string()));
                }
                let unit: Vec<f64> = mixed.iter().map(|x| x / norm).collect();
                Ok(EmbeddingVector::from_f64(&unit).expect("finite unit vector"))
            }
        }
    }
}
