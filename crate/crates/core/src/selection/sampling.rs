//! Drawing the K-shot annotation set from a score table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::challenge_scoring::{ChallengeScore, ScoreTable};
use crate::hashing::{keyed_rng, sha256_hex};

use super::pool::{check_fraction, group_by_category, pool_size, rank_ascending, rank_descending};
use super::SelectionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform draw from the top `pool_fraction` of scores.
    #[default]
    TopRangeRandom,
    /// Uniform draw from the whole category.
    Random,
    /// Uniform draw from the bottom `easy_fraction` of scores.
    EasyBottom,
    /// The K highest scores.
    TopK,
}

impl Strategy {
    pub fn is_pool_based(self) -> bool {
        matches!(self, Strategy::TopRangeRandom | Strategy::EasyBottom | Strategy::TopK)
    }
}

impl std::str::FromStr for Strategy {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "top_range_random" => Ok(Strategy::TopRangeRandom),
            "random" => Ok(Strategy::Random),
            "easy_bottom" | "easy" => Ok(Strategy::EasyBottom),
            "top_k" => Ok(Strategy::TopK),
            other => Err(SelectionError::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub pool_fraction: f64,
    pub easy_fraction: f64,
    /// K, the number of shots drawn per category.
    pub shots_per_category: usize,
    pub seed: u64,
    pub per_category: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TopRangeRandom,
            pool_fraction: 0.0455,
            easy_fraction: 0.25,
            shots_per_category: 16,
            seed: 0,
            per_category: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        check_fraction("pool fraction", self.pool_fraction)?;
        check_fraction("easy fraction", self.easy_fraction)?;
        if self.shots_per_category == 0 {
            return Err(SelectionError::InvalidConfig("shots per category must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Selected,
    Annotating,
    Exported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySelection {
    /// Candidate pair ids in rank order.
    pub pool: Vec<String>,
    /// Drawn pair ids, listed in the pool's rank order.
    pub chosen: Vec<String>,
}

/// What annotators and exporters need to know about a chosen pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInfo {
    #[serde(rename = "ref")]
    pub ref_image_id: String,
    #[serde(rename = "tgt")]
    pub target_image_id: String,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub round_id: String,
    pub config: SelectionConfig,
    pub categories: BTreeMap<String, CategorySelection>,
    /// Details for every chosen pair.
    pub pairs: BTreeMap<String, PairInfo>,
    pub warnings: Vec<String>,
    pub created_at: String,
    pub status: RoundStatus,
}

impl SelectionRound {
    pub fn chosen_ids(&self) -> impl Iterator<Item = &str> {
        self.categories.values().flat_map(|c| c.chosen.iter().map(String::as_str))
    }

    pub fn chosen_count(&self) -> usize {
        self.categories.values().map(|c| c.chosen.len()).sum()
    }

    pub fn contains_chosen(&self, pair_id: &str) -> bool {
        self.chosen_ids().any(|id| id == pair_id)
    }

    /// Structural checks: non-empty id, unique chosen ids, each with pair details,
    /// K per category, and chosen ⊆ pool for pool-based strategies.
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.round_id.trim().is_empty() {
            return Err(SelectionError::InvalidRound("empty round id".into()));
        }
        if self.categories.is_empty() {
            return Err(SelectionError::InvalidRound("round has no categories".into()));
        }
        let mut seen = BTreeSet::new();
        for (name, cat) in &self.categories {
            if cat.chosen.len() != self.config.shots_per_category {
                return Err(SelectionError::InvalidRound(format!(
                    "category `{name}` has {} chosen pairs, expected {}",
                    cat.chosen.len(),
                    self.config.shots_per_category
                )));
            }
            let pool: BTreeSet<&str> = cat.pool.iter().map(String::as_str).collect();
            for id in &cat.chosen {
                if !seen.insert(id.as_str()) {
                    return Err(SelectionError::InvalidRound(format!("pair `{id}` chosen twice")));
                }
                if !self.pairs.contains_key(id) {
                    return Err(SelectionError::InvalidRound(format!("no details for chosen pair `{id}`")));
                }
                if self.config.strategy.is_pool_based() && !pool.contains(id.as_str()) {
                    return Err(SelectionError::InvalidRound(format!("chosen pair `{id}` is outside the pool")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SelectionError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SelectionError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Identifier derived from the config and the table contents.
fn round_id(table: &ScoreTable, config: &SelectionConfig) -> String {
    let mut buf = serde_json::to_vec(config).expect("serializable");
    for s in &table.scores {
        buf.extend_from_slice(s.pair_id.as_bytes());
        buf.push(0);
        buf.extend_from_slice(s.category.as_deref().unwrap_or("").as_bytes());
        buf.push(0);
        buf.extend_from_slice(&s.score.to_bits().to_le_bytes());
    }
    format!("round-{}", &sha256_hex(&buf)[..12])
}

fn draw(pool: &[&ChallengeScore], shots: usize, category: &str, seed: u64) -> Vec<String> {
    let mut rng = keyed_rng(category, seed);
    let mut picked = index::sample(&mut rng, pool.len(), shots).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].pair_id.clone()).collect()
}

/// Draws `shots_per_category` pairs from each category according to the strategy.
///
/// Each category gets its own random stream keyed by the category name, so
/// the draw for one category does not depend on which others exist. When a
/// pool holds fewer than K pairs it is widened with the next-ranked pairs and
/// a warning is recorded.
pub fn select(table: &ScoreTable, config: &SelectionConfig) -> Result<SelectionRound, SelectionError> {
    config.validate()?;
    if table.is_empty() {
        return Err(SelectionError::EmptyCategory(super::pool::ALL_CATEGORY.into()));
    }
    let shots = config.shots_per_category;
    let mut categories = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    let mut warnings = Vec::new();

    for (name, rows) in group_by_category(table, config.per_category) {
        let n = rows.len();
        if shots > n {
            return Err(SelectionError::ShotsExceedPopulation {
                category: name,
                shots,
                population: n,
            });
        }
        let (pool, chosen): (Vec<&ChallengeScore>, Vec<String>) = match config.strategy {
            Strategy::TopRangeRandom | Strategy::EasyBottom => {
                let (ranked, fraction) = if config.strategy == Strategy::TopRangeRandom {
                    (rank_descending(&rows), config.pool_fraction)
                } else {
                    (rank_ascending(&rows), config.easy_fraction)
                };
                let mut size = pool_size(fraction, n);
                if size < shots {
                    warnings.push(format!(
                        "category `{name}`: pool of {size} is smaller than K={shots}; extended with the next-ranked pairs"
                    ));
                    size = shots;
                }
                let pool = ranked[..size].to_vec();
                let chosen = draw(&pool, shots, &name, config.seed);
                (pool, chosen)
            }
            Strategy::Random => {
                let pool = rank_descending(&rows);
                let chosen = draw(&pool, shots, &name, config.seed);
                (pool, chosen)
            }
            Strategy::TopK => {
                let pool: Vec<_> = rank_descending(&rows).into_iter().take(shots).collect();
                let chosen = pool.iter().map(|r| r.pair_id.clone()).collect();
                (pool, chosen)
            }
        };
        for id in &chosen {
            let row = pool.iter().find(|r| &r.pair_id == id).expect("chosen from pool");
            pairs.insert(
                id.clone(),
                PairInfo {
                    ref_image_id: row.ref_image_id.clone(),
                    target_image_id: row.target_image_id.clone(),
                    category: name.clone(),
                    score: row.score,
                },
            );
        }
        categories.insert(
            name,
            CategorySelection {
                pool: pool.iter().map(|r| r.pair_id.clone()).collect(),
                chosen,
            },
        );
    }

    Ok(SelectionRound {
        round_id: round_id(table, config),
        config: config.clone(),
        categories,
        pairs,
        warnings,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        status: RoundStatus::Selected,
    })
}
