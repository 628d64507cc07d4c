#![allow(dead_code)]

use ptg_core::challenge_scoring::{ChallengeScore, Provenance, ScoreTable};
use ptg_core::selection::{select, SelectionConfig, SelectionRound, Strategy};

/// A selected round over `categories` synthetic categories of 20 pairs each.
pub fn round(categories: usize, shots: usize, seed: u64) -> SelectionRound {
    let mut rows = Vec::new();
    for c in 0..categories {
        for i in 0..20 {
            rows.push(ChallengeScore {
                pair_id: format!("c{c}p{i:02}"),
                ref_image_id: format!("c{c}r{i:02}.png"),
                target_image_id: format!("c{c}t{i:02}.png"),
                category: Some(format!("cat{c}")),
                score: ((i * 7 + c * 3) % 20) as f64 / 20.0,
            });
        }
    }
    let table = ScoreTable::new(
        rows,
        Provenance {
            mode: None,
            seed: None,
            table_hashes: vec![],
        },
    )
    .unwrap();
    let config = SelectionConfig {
        strategy: Strategy::TopRangeRandom,
        pool_fraction: 0.25,
        shots_per_category: shots,
        seed,
        ..SelectionConfig::default()
    };
    select(&table, &config).unwrap()
}
