//! From a score table to the K-shot annotation set.
//!
//! Scores are summarized as a distribution, the top `pool_fraction` of each
//! category forms the candidate pool, and K pairs are drawn from it. The
//! default pool fraction 0.0455 is the upper tail beyond two standard
//! deviations taken on one side only, since scores pile up at the low end.

mod categories;
mod kmeans;
mod pool;
mod sampling;
mod summary;

use thiserror::Error;

pub use categories::{assign_pair_categories, CategoryBasis};
pub use kmeans::{
    cluster_label, kmeans, kmeans_categorize, AssignmentMethod, CategoryAssignment, KMeansParams, KMeansResult,
    KMeansSummary,
};
pub use pool::{build_pool, group_by_category, pool_size, rank_ascending, rank_descending, ALL_CATEGORY};
pub use sampling::{
    select, CategorySelection, PairInfo, RoundStatus, SelectionConfig, SelectionRound, Strategy,
};
pub use summary::{quantile_sorted, summarize, DistributionSummary, Histogram, HISTOGRAM_BINS, SUMMARY_QUANTILES};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("category `{0}` is empty")]
    EmptyCategory(String),
    #[error("K={shots} exceeds the {population} pairs in category `{category}`")]
    ShotsExceedPopulation {
        category: String,
        shots: usize,
        population: usize,
    },
    #[error("k-means needs at least k={k} items, got {items}")]
    TooFewItems { items: usize, k: usize },
    #[error("image `{0}` has no category")]
    UnassignedImage(String),
    #[error("invalid round: {0}")]
    InvalidRound(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
