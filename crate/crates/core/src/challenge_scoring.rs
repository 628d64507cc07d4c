//! Challenge scores for unlabeled reference/target pairs.
//!
//! For a pair, the target image's caption stands in for the missing
//! modification text. The reference image and that caption are composed into
//! a query `f_c`, and the score is `1 − cos(f_c, f_t)` against the target image
//! embedding `f_t`. Higher scores mean the composed query lands further from
//! its target.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::{Caption, CaptionError, CaptionSource};
use crate::composer::{composite_key, text_key, ComposeError, ComposerBackend, ComposerMode};
use crate::embedding_store::{cosine_similarity, EmbeddingTable, StoreError};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("duplicate pair id `{0}`")]
    DuplicatePair(String),
    #[error("pair `{0}` has identical reference and target")]
    SelfPair(String),
    #[error("pair id must be non-empty")]
    EmptyPairId,
    #[error("no image embedding for target `{0}`")]
    MissingTarget(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error("cosine failed: {0}")]
    Cosine(StoreError),
    #[error("{} pair(s) failed to score, first: {}", .0.len(), .0.first().map(|f| f.to_string()).unwrap_or_default())]
    PairsFailed(Vec<PairFailure>),
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("non-finite score for `{0}`")]
    NonFiniteScore(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub reason: String,
}

impl std::fmt::Display for PairFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.pair_id, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair_id: String,
    #[serde(rename = "ref")]
    pub ref_image_id: String,
    #[serde(rename = "tgt")]
    pub target_image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl CandidatePair {
    pub fn new(pair_id: impl Into<String>, ref_image_id: impl Into<String>, target_image_id: impl Into<String>) -> Self {
        Self {
            pair_id: pair_id.into(),
            ref_image_id: ref_image_id.into(),
            target_image_id: target_image_id.into(),
            category: None,
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.pair_id.is_empty() {
            return Err(ScoreError::EmptyPairId);
        }
        if self.ref_image_id == self.target_image_id {
            return Err(ScoreError::SelfPair(self.pair_id.clone()));
        }
        Ok(())
    }
}

/// A scored pair; one row of a score table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeScore {
    pub pair_id: String,
    #[serde(rename = "ref")]
    pub ref_image_id: String,
    #[serde(rename = "tgt")]
    pub target_image_id: String,
    pub category: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: Option<ComposerMode>,
    pub seed: Option<u64>,
    pub table_hashes: Vec<String>,
}

/// Scores sorted by `pair_id` ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: Vec<ChallengeScore>,
    pub provenance: Provenance,
}

impl ScoreTable {
    /// Sorts by pair id and rejects duplicates and non-finite scores.
    pub fn new(mut scores: Vec<ChallengeScore>, provenance: Provenance) -> Result<Self, ScoreError> {
        scores.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(w) = scores.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(ScoreError::DuplicatePair(w[0].pair_id.clone()));
        }
        if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
            return Err(ScoreError::NonFiniteScore(s.pair_id.clone()));
        }
        Ok(Self { scores, provenance })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.score).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ScoreError> {
        for s in &self.scores {
            serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, ScoreError> {
        let mut scores = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ChallengeScore = serde_json::from_str(&line).map_err(|e| ScoreError::Malformed {
                line: n + 1,
                reason: e.to_string(),
            })?;
            scores.push(row);
        }
        Self::new(
            scores,
            Provenance {
                mode: None,
                seed: None,
                table_hashes: Vec::new(),
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), ScoreError> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<CandidatePair>, ScoreError> {
    read_pairs_from(BufReader::new(File::open(path)?))
}

pub fn read_pairs_from<R: BufRead>(r: R) -> Result<Vec<CandidatePair>, ScoreError> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| ScoreError::Malformed {
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[CandidatePair], mut w: W) -> Result<(), ScoreError> {
    for p in pairs {
        serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `1 − cos(compose(ref, caption(target)), f_target)`.
pub fn score_pair(
    pair: &CandidatePair,
    target_caption: &Caption,
    backend: &ComposerBackend,
    images: &EmbeddingTable,
) -> Result<ChallengeScore, ScoreError> {
    pair.validate()?;
    let target = images
        .get(&pair.target_image_id)
        .ok_or_else(|| ScoreError::MissingTarget(pair.target_image_id.clone()))?;
    let key = composite_key(&pair.ref_image_id, &target_caption.text);
    let composed = backend.compose(&key, &pair.ref_image_id, &text_key(&target_caption.text))?;
    let cos = cosine_similarity(&composed, target).map_err(ScoreError::Cosine)?;
    Ok(ChallengeScore {
        pair_id: pair.pair_id.clone(),
        ref_image_id: pair.ref_image_id.clone(),
        target_image_id: pair.target_image_id.clone(),
        category: pair.category.clone(),
        score: (1.0 - cos).clamp(0.0, 2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Fail the whole run if any pair fails.
    pub strict: bool,
    pub parallel: bool,
    pub seed: Option<u64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            strict: true,
            parallel: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub table: ScoreTable,
    /// Pairs skipped in lenient mode.
    pub failures: Vec<PairFailure>,
}

pub fn score_all(
    pairs: &[CandidatePair],
    captions: &dyn CaptionSource,
    backend: &ComposerBackend,
    images: &EmbeddingTable,
    options: ScoreOptions,
) -> Result<ScoreOutcome, ScoreError> {
    let mut seen = HashSet::with_capacity(pairs.len());
    for p in pairs {
        if !seen.insert(p.pair_id.as_str()) {
            return Err(ScoreError::DuplicatePair(p.pair_id.clone()));
        }
    }

    let one = |p: &CandidatePair| -> Result<ChallengeScore, ScoreError> {
        let caption = captions.caption_of(&p.target_image_id)?;
        score_pair(p, &caption, backend, images)
    };
    let results: Vec<Result<ChallengeScore, ScoreError>> = if options.parallel {
        pairs.par_iter().map(one).collect()
    } else {
        pairs.iter().map(one).collect()
    };

    let mut scores = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => failures.push(PairFailure {
                pair_id: p.pair_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    failures.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if options.strict && !failures.is_empty() {
        return Err(ScoreError::PairsFailed(failures));
    }
    let provenance = Provenance {
        mode: Some(backend.mode()),
        seed: options.seed,
        table_hashes: {
            let mut h = backend.table_hashes();
            h.push(images.content_hash());
            h
        },
    };
    Ok(ScoreOutcome {
        table: ScoreTable::new(scores, provenance)?,
        failures,
    })
}

/// Distinct category labels present in a table (`None` excluded).
pub fn categories(table: &ScoreTable) -> BTreeSet<String> {
    table.scores.iter().filter_map(|s| s.category.clone()).collect()
}
