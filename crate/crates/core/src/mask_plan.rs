//! Patch masking that turns an original image into a pseudo reference image.
//!
//! An image is resized to `resize_to`, split into a `grid_rows × grid_cols`
//! grid, and `round(mask_ratio · cells)` cells are filled. Which cells is a
//! pure function of `(image_id, seed, config)`: indices are drawn without
//! replacement from [`keyed_rng`](crate::hashing::keyed_rng) keyed by the
//! image id.

use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb, RgbImage};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::keyed_rng;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("invalid mask config: {0}")]
    InvalidConfig(String),
    #[error("plan grid {plan_rows}x{plan_cols} does not match config grid {rows}x{cols}")]
    GridMismatch {
        plan_rows: u32,
        plan_cols: u32,
        rows: u32,
        cols: u32,
    },
    #[error("patch index {0} is outside the grid")]
    IndexOutOfRange(u32),
    #[error("image has zero area")]
    ZeroArea,
    #[error("cannot decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    #[default]
    Black,
    /// Per-channel mean of the pixels left visible by the plan.
    MeanColor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub mask_ratio: f64,
    pub fill: Fill,
    /// Target (width, height) in pixels.
    pub resize_to: (u32, u32),
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            grid_rows: 8,
            grid_cols: 8,
            mask_ratio: 0.75,
            fill: Fill::Black,
            resize_to: (256, 256),
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(MaskError::InvalidConfig("grid dimensions must be positive".into()));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(MaskError::InvalidConfig(format!(
                "mask ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        let (w, h) = self.resize_to;
        if w < self.grid_cols || h < self.grid_rows {
            return Err(MaskError::InvalidConfig(format!(
                "resize target {w}x{h} is smaller than the {}x{} grid",
                self.grid_rows, self.grid_cols
            )));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> u32 {
        self.grid_rows * self.grid_cols
    }

    pub fn masked_count(&self) -> u32 {
        (self.mask_ratio * f64::from(self.patch_count())).round() as u32
    }
}

/// Which grid cells to mask, row-major, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub masked_indices: Vec<u32>,
    pub seed: u64,
}

impl MaskPlan {
    /// Builds a plan from explicit indices; sorts and deduplicates them.
    pub fn from_indices(
        grid_rows: u32,
        grid_cols: u32,
        indices: impl IntoIterator<Item = u32>,
        seed: u64,
    ) -> Result<Self, MaskError> {
        let mut masked_indices: Vec<u32> = indices.into_iter().collect();
        masked_indices.sort_unstable();
        masked_indices.dedup();
        if let Some(&bad) = masked_indices.iter().find(|&&i| i >= grid_rows * grid_cols) {
            return Err(MaskError::IndexOutOfRange(bad));
        }
        Ok(Self {
            grid_rows,
            grid_cols,
            masked_indices,
            seed,
        })
    }

    pub fn is_masked(&self, index: u32) -> bool {
        self.masked_indices.binary_search(&index).is_ok()
    }
}

/// Per-image sidecar written next to each masked PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub id: String,
    pub seed: u64,
    pub masked_indices: Vec<u32>,
}

pub fn plan_mask(image_id: &str, config: &MaskConfig, seed: u64) -> Result<MaskPlan, MaskError> {
    config.validate()?;
    let mut rng = keyed_rng(image_id, seed);
    let cells = config.patch_count() as usize;
    let picked = index::sample(&mut rng, cells, config.masked_count() as usize);
    MaskPlan::from_indices(
        config.grid_rows,
        config.grid_cols,
        picked.into_iter().map(|i| i as u32),
        seed,
    )
}

/// Pixel span `[start, end)` of grid cell `cell` along an axis of `len` pixels.
fn span(cell: u32, cells: u32, len: u32) -> (u32, u32) {
    let start = (u64::from(cell) * u64::from(len) / u64::from(cells)) as u32;
    let end = (u64::from(cell + 1) * u64::from(len) / u64::from(cells)) as u32;
    (start, end)
}

/// Resizes to `config.resize_to` and fills every masked patch.
pub fn apply_mask(image: &RgbImage, plan: &MaskPlan, config: &MaskConfig) -> Result<RgbImage, MaskError> {
    config.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(MaskError::ZeroArea);
    }
    if plan.grid_rows != config.grid_rows || plan.grid_cols != config.grid_cols {
        return Err(MaskError::GridMismatch {
            plan_rows: plan.grid_rows,
            plan_cols: plan.grid_cols,
            rows: config.grid_rows,
            cols: config.grid_cols,
        });
    }
    if let Some(&bad) = plan
        .masked_indices
        .iter()
        .find(|&&i| i >= config.patch_count())
    {
        return Err(MaskError::IndexOutOfRange(bad));
    }

    let (w, h) = config.resize_to;
    let mut out = if image.dimensions() == (w, h) {
        image.clone()
    } else {
        imageops::resize(image, w, h, FilterType::Triangle)
    };

    let fill = match config.fill {
        Fill::Black => Rgb([0, 0, 0]),
        Fill::MeanColor => visible_mean(&out, plan),
    };
    for &cell in &plan.masked_indices {
        let (x0, x1) = span(cell % plan.grid_cols, plan.grid_cols, w);
        let (y0, y1) = span(cell / plan.grid_cols, plan.grid_rows, h);
        for y in y0..y1 {
            for x in x0..x1 {
                out.put_pixel(x, y, fill);
            }
        }
    }
    Ok(out)
}

/// Rounded per-channel mean over unmasked pixels (over all pixels if the plan covers everything).
/// Using only visible pixels makes re-applying the same plan a no-op.
fn visible_mean(image: &RgbImage, plan: &MaskPlan) -> Rgb<u8> {
    let (w, h) = image.dimensions();
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for row in 0..plan.grid_rows {
        let (y0, y1) = span(row, plan.grid_rows, h);
        for col in 0..plan.grid_cols {
            if plan.is_masked(row * plan.grid_cols + col) {
                continue;
            }
            let (x0, x1) = span(col, plan.grid_cols, w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = image.get_pixel(x, y);
                    for c in 0..3 {
                        sums[c] += u64::from(p[c]);
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        for p in image.pixels() {
            for c in 0..3 {
                sums[c] += u64::from(p[c]);
            }
        }
        count = u64::from(w) * u64::from(h);
    }
    Rgb(sums.map(|s| ((s as f64) / (count as f64)).round() as u8))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, MaskError> {
    let image = image::open(path)?.to_rgb8();
    if image.width() == 0 || image.height() == 0 {
        return Err(MaskError::ZeroArea);
    }
    Ok(image)
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, MaskError> {
    let image = image::load_from_memory(bytes)?.to_rgb8();
    if image.width() == 0 || image.height() == 0 {
        return Err(MaskError::ZeroArea);
    }
    Ok(image)
}

/// PNG encoding with the encoder's default settings; identical pixels give identical bytes.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, MaskError> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
