//! Stage-one pseudo triplets built from a directory of plain images.
//!
//! For every source image: plan a mask, write the masked image as the
//! reference, caption the *original* image, and pair the two with the
//! original as target. The caption describes what the mask hides, which is
//! what a modification text has to supply.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! masked/<id>#masked.png     masked reference image
//! masked/<id>#masked.json    {"id", "seed", "masked_indices"}
//! manifest.jsonl             {"ref", "text", "tgt", "plan"} per triplet
//! manifest.meta.json         corpus id, seed, config snapshot, skipped images
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::captioner::{CaptionError, CaptionInput, Captioner, CaptionerConfig};
use crate::embedding_store::{ItemKind, ItemRef};
use crate::hashing::sha256_hex;
use crate::mask_plan::{apply_mask, decode_rgb, encode_png, plan_mask, MaskConfig, MaskError, MaskPlan, PlanSidecar};

pub const MASKED_SUFFIX: &str = "#masked";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("empty corpus: no images in {0}")]
    EmptyCorpus(String),
    #[error("{failed} of {total} images failed (limit {limit:.1}%)")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One training triplet row, shared by pseudo and human-annotated manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(rename = "ref")]
    pub reference: String,
    pub text: String,
    #[serde(rename = "tgt")]
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<MaskPlan>,
}

/// Serializes rows as JSONL, one row per line.
pub fn manifest_bytes(rows: &[ManifestRow]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("serializable");
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTriplet {
    pub reference: ItemRef,
    pub modification_text: String,
    pub target: ItemRef,
    pub plan: MaskPlan,
    pub reference_path: PathBuf,
    pub target_path: PathBuf,
}

impl PseudoTriplet {
    pub fn to_row(&self) -> ManifestRow {
        ManifestRow {
            reference: self.reference_path.display().to_string(),
            text: self.modification_text.clone(),
            target: self.target_path.display().to_string(),
            plan: Some(self.plan.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGenOptions {
    pub mask: MaskConfig,
    pub seed: u64,
    /// Differently seeded maskings per image; variant `v` uses `seed + v`.
    pub variants: u32,
    /// Fraction of images allowed to fail before the whole run fails.
    pub max_failure_fraction: f64,
    pub workers: usize,
}

impl Default for PseudoGenOptions {
    fn default() -> Self {
        Self {
            mask: MaskConfig::default(),
            seed: 0,
            variants: 1,
            max_failure_fraction: 0.1,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mask: MaskConfig,
    pub variants: u32,
    pub captioner: CaptionerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletManifest {
    pub corpus_id: String,
    pub seed: u64,
    pub config: ConfigSnapshot,
    pub triplets: Vec<PseudoTriplet>,
    pub skipped: Vec<SkippedImage>,
}

impl TripletManifest {
    pub fn rows(&self) -> Vec<ManifestRow> {
        self.triplets.iter().map(PseudoTriplet::to_row).collect()
    }
}

/// Reference id for a masked variant of `image_id`.
pub fn masked_id(image_id: &str, variant: u32, variants: u32) -> String {
    if variants <= 1 {
        format!("{image_id}{MASKED_SUFFIX}")
    } else {
        format!("{image_id}{MASKED_SUFFIX}{variant}")
    }
}

/// Image files directly under `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, PseudoError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn process_image(
    path: &Path,
    out_masked: &Path,
    options: &PseudoGenOptions,
    captioner: &Captioner,
) -> Result<(String, Vec<PseudoTriplet>), PseudoError> {
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| PseudoError::InvalidOptions(format!("non UTF-8 file name {}", path.display())))?
        .to_string();
    let bytes = fs::read(path)?;
    let content_hash = sha256_hex(&bytes);
    let original = decode_rgb(&bytes)?;
    let caption = captioner.caption(CaptionInput::Raster {
        image_id: &id,
        image: &original,
    })?;

    let mut triplets = Vec::with_capacity(options.variants as usize);
    for v in 0..options.variants {
        let plan = plan_mask(&id, &options.mask, options.seed.wrapping_add(u64::from(v)))?;
        let masked = apply_mask(&original, &plan, &options.mask)?;
        let ref_id = masked_id(&id, v, options.variants);
        let png_path = out_masked.join(format!("{ref_id}.png"));
        fs::write(&png_path, encode_png(&masked)?)?;
        let sidecar = PlanSidecar {
            id: ref_id.clone(),
            seed: plan.seed,
            masked_indices: plan.masked_indices.clone(),
        };
        fs::write(out_masked.join(format!("{ref_id}.json")), serde_json::to_vec(&sidecar)?)?;
        triplets.push(PseudoTriplet {
            reference: ItemRef::new(ref_id, ItemKind::MaskedImage).expect("non-empty"),
            modification_text: caption.text.clone(),
            target: ItemRef::new(id.clone(), ItemKind::Image).expect("non-empty"),
            plan,
            reference_path: png_path,
            target_path: path.to_path_buf(),
        });
    }
    Ok((format!("{id}\0{content_hash}\n"), triplets))
}

pub fn build_pseudo_triplets(
    image_dir: &Path,
    out_dir: &Path,
    options: &PseudoGenOptions,
    captioner: &Captioner,
) -> Result<TripletManifest, PseudoError> {
    options.mask.validate()?;
    if options.variants == 0 {
        return Err(PseudoError::InvalidOptions("variants must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&options.max_failure_fraction) {
        return Err(PseudoError::InvalidOptions("failure fraction must lie in [0, 1]".into()));
    }
    let files = list_images(image_dir)?;
    if files.is_empty() {
        return Err(PseudoError::EmptyCorpus(image_dir.display().to_string()));
    }
    let out_masked = out_dir.join("masked");
    fs::create_dir_all(&out_masked)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<_> = pool.install(|| {
        files
            .par_iter()
            .map(|p| process_image(p, &out_masked, options, captioner))
            .collect()
    });

    let mut corpus_key = String::new();
    let mut triplets = Vec::new();
    let mut skipped = Vec::new();
    for (path, result) in files.iter().zip(results) {
        match result {
            Ok((key, mut t)) => {
                corpus_key.push_str(&key);
                triplets.append(&mut t);
            }
            Err(e) => {
                let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                warn!(image = %id, error = %e, "skipping image");
                skipped.push(SkippedImage {
                    id,
                    reason: e.to_string(),
                });
            }
        }
    }
    let total = files.len();
    let failed = skipped.len();
    if failed == total || failed as f64 > options.max_failure_fraction * total as f64 {
        return Err(PseudoError::TooManyFailures {
            failed,
            total,
            limit: options.max_failure_fraction * 100.0,
        });
    }

    let manifest = TripletManifest {
        corpus_id: sha256_hex(corpus_key.as_bytes())[..16].to_string(),
        seed: options.seed,
        config: ConfigSnapshot {
            mask: options.mask.clone(),
            variants: options.variants,
            captioner: captioner.config().clone(),
        },
        triplets,
        skipped,
    };

    let mut f = fs::File::create(out_dir.join("manifest.jsonl"))?;
    f.write_all(&manifest_bytes(&manifest.rows()))?;
    #[derive(Serialize)]
    struct Meta<'a> {
        corpus_id: &'a str,
        seed: u64,
        config: &'a ConfigSnapshot,
        triplet_count: usize,
        skipped: &'a [SkippedImage],
    }
    fs::write(
        out_dir.join("manifest.meta.json"),
        serde_json::to_vec_pretty(&Meta {
            corpus_id: &manifest.corpus_id,
            seed: manifest.seed,
            config: &manifest.config,
            triplet_count: manifest.triplets.len(),
            skipped: &manifest.skipped,
        })?,
    )?;
    info!(
        triplets = manifest.triplets.len(),
        skipped = manifest.skipped.len(),
        "pseudo triplets written"
    );
    Ok(manifest)
}
