use serde::{Deserialize, Serialize};

use crate::challenge_scoring::CandidatePair;

use super::kmeans::CategoryAssignment;
use super::SelectionError;

/// Which image of a pair decides its category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryBasis {
    #[default]
    ReferenceImage,
    TargetImage,
}

pub fn assign_pair_categories(
    pairs: &[CandidatePair],
    assignment: &CategoryAssignment,
    basis: CategoryBasis,
) -> Result<Vec<CandidatePair>, SelectionError> {
    pairs
        .iter()
        .map(|p| {
            let image = match basis {
                CategoryBasis::ReferenceImage => &p.ref_image_id,
                CategoryBasis::TargetImage => &p.target_image_id,
            };
            let label = assignment
                .category_of(image)
                .ok_or_else(|| SelectionError::UnassignedImage(image.clone()))?;
            Ok(p.clone().with_category(label))
        })
        .collect()
}
