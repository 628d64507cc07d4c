use std::collections::BTreeMap;

use crate::challenge_scoring::{ChallengeScore, ScoreTable};

use super::SelectionError;

/// Category key used when pools are global or a pair carries no category.
pub const ALL_CATEGORY: &str = "all";

/// Slack subtracted before `ceil` so that products like `0.01 × 100` don't
/// round up to the next integer through representation error.
const CEIL_SLACK: f64 = 1e-9;

/// `ceil(fraction · n)`, clamped to `[1, n]`.
pub fn pool_size(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = (fraction * n as f64 - CEIL_SLACK).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Highest score first; equal scores by `pair_id` ascending.
pub fn rank_descending<'a>(rows: &[&'a ChallengeScore]) -> Vec<&'a ChallengeScore> {
    let mut ranked = rows.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pair_id.cmp(&b.pair_id)));
    ranked
}

/// Lowest score first; equal scores by `pair_id` ascending.
pub fn rank_ascending<'a>(rows: &[&'a ChallengeScore]) -> Vec<&'a ChallengeScore> {
    let mut ranked = rows.to_vec();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.pair_id.cmp(&b.pair_id)));
    ranked
}

/// Splits rows by category label, or puts everything under [`ALL_CATEGORY`].
pub fn group_by_category(table: &ScoreTable, per_category: bool) -> BTreeMap<String, Vec<&ChallengeScore>> {
    let mut groups: BTreeMap<String, Vec<&ChallengeScore>> = BTreeMap::new();
    for row in &table.scores {
        let key = match (&row.category, per_category) {
            (Some(c), true) => c.clone(),
            _ => ALL_CATEGORY.to_string(),
        };
        groups.entry(key).or_default().push(row);
    }
    groups
}

pub(crate) fn check_fraction(name: &str, fraction: f64) -> Result<(), SelectionError> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(SelectionError::InvalidConfig(format!("{name} must lie in (0, 1), got {fraction}")))
    }
}

/// The `ceil(fraction · N)` highest-scoring pair ids of each category, in rank order.
pub fn build_pool(
    table: &ScoreTable,
    pool_fraction: f64,
    per_category: bool,
) -> Result<BTreeMap<String, Vec<String>>, SelectionError> {
    check_fraction("pool fraction", pool_fraction)?;
    if table.is_empty() {
        return Err(SelectionError::EmptyCategory(ALL_CATEGORY.into()));
    }
    Ok(group_by_category(table, per_category)
        .into_iter()
        .map(|(category, rows)| {
            let size = pool_size(pool_fraction, rows.len());
            let pool = rank_descending(&rows)
                .into_iter()
                .take(size)
                .map(|r| r.pair_id.clone())
                .collect();
            (category, pool)
        })
        .collect())
}
