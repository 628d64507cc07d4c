mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{chi_square_critical, chi_square_stat};
use ptg_core::challenge_scoring::{CandidatePair, ChallengeScore, Provenance, ScoreTable};
use ptg_core::embedding_store::{EmbeddingTable, EmbeddingVector};
use ptg_core::selection::{
    assign_pair_categories, build_pool, kmeans, kmeans_categorize, select, summarize, CategoryBasis, KMeansParams,
    SelectionConfig, Strategy, ALL_CATEGORY,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

fn table_from(scores: &[f64], categories: Option<&[&str]>) -> ScoreTable {
    ScoreTable::new(
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ChallengeScore {
                pair_id: format!("p{i:06}"),
                ref_image_id: format!("r{i}"),
                target_image_id: format!("t{i}"),
                category: categories.map(|c| c[i % c.len()].to_string()),
                score: s,
            })
            .collect(),
        Provenance { mode: None, seed: None, table_hashes: vec![] },
    )
    .unwrap()
}

/// Exact `ceil(num/den · n)` in integers.
fn exact_ceil(num: u64, den: u64, n: u64) -> usize {
    (num * n).div_ceil(den).max(1) as usize
}

/// Full sort by (score desc, pair_id asc), then take the first `size`.
fn sort_oracle(rows: &[(String, f64)], size: usize) -> BTreeSet<String> {
    let mut v: Vec<(String, f64)> = rows.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().take(size).map(|(id, _)| id).collect()
}

#[test]
fn skewed_distribution_summary() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let exp = Exp::new(1.0).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut rng)).collect();
    let s = summarize(&xs).unwrap();
    assert!(s.skewness > 1.5, "skewness {}", s.skewness);
    let analytic = -(1.0f64 - 0.9545).ln();
    let q = s.quantiles.iter().find(|(p, _)| *p == 0.9545).unwrap().1;
    assert!((q - analytic).abs() / analytic < 0.01, "{q} vs {analytic}");
    assert_eq!(s.histogram.counts.len(), 50);
    assert_eq!(s.histogram.counts.iter().sum::<u64>(), 100_000);
}

#[test]
fn pool_matches_sort_oracle_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let fractions = [(0.01, 1u64, 100u64), (0.0455, 455, 10_000), (0.25, 1, 4)];
    for trial in 0..60 {
        let n = rng.random_range(10..=3000usize);
        let levels = if trial % 2 == 0 { 7 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let (f, num, den) = fractions[trial % 3];
        let table = table_from(&scores, None);
        let rows: Vec<(String, f64)> = table.scores.iter().map(|s| (s.pair_id.clone(), s.score)).collect();
        let expected = sort_oracle(&rows, exact_ceil(num, den, n as u64));
        let got: BTreeSet<String> = build_pool(&table, f, true).unwrap()[ALL_CATEGORY].iter().cloned().collect();
        assert_eq!(got, expected, "trial {trial}, n {n}, f {f}");
    }
}

#[test]
fn inclusion_is_uniform_over_seeds() {
    let scores: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let table = table_from(&scores, None);
    let pool = &build_pool(&table, 0.0455, true).unwrap()[ALL_CATEGORY];
    assert_eq!(pool.len(), 46);
    let mut counts: BTreeMap<String, u64> = pool.iter().map(|id| (id.clone(), 0)).collect();
    let seeds = 10_000u64;
    for seed in 0..seeds {
        let round = select(&table, &SelectionConfig { shots_per_category: 8, seed, ..Default::default() }).unwrap();
        for id in &round.categories[ALL_CATEGORY].chosen {
            *counts.get_mut(id).expect("chosen inside pool") += 1;
        }
    }
    let observed: Vec<u64> = counts.values().copied().collect();
    let stat = chi_square_stat(&observed, seeds as f64 * 8.0 / 46.0);
    assert!(stat < chi_square_critical(45, 0.01), "chi-square {stat}");
}

#[test]
fn chosen_never_dips_below_pool_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for run in 0..200u64 {
        let n = rng.random_range(400..2000);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let table = table_from(&scores, Some(&["a", "b"]));
        let cfg = SelectionConfig { shots_per_category: 8, seed: run, ..Default::default() };
        let round = select(&table, &cfg).unwrap();
        assert!(round.warnings.is_empty());
        assert_eq!(round.chosen_count(), 8 * 2);
        for (cat, sel) in &round.categories {
            let pool: BTreeSet<&String> = sel.pool.iter().collect();
            let min_chosen = sel.chosen.iter().map(|id| round.pairs[id].score).fold(f64::INFINITY, f64::min);
            let max_outside = table
                .scores
                .iter()
                .filter(|s| s.category.as_deref() == Some(cat) && !pool.contains(&s.pair_id))
                .map(|s| s.score)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(min_chosen >= max_outside);
        }
    }
}

#[test]
fn strategies_produce_k_per_category() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..800).map(|_| rng.random()).collect();
    let table = table_from(&scores, Some(&["w", "x", "y", "z"]));
    for strategy in [Strategy::TopRangeRandom, Strategy::Random, Strategy::EasyBottom, Strategy::TopK] {
        for k in [2, 4, 8, 16] {
            let round = select(&table, &SelectionConfig { strategy, shots_per_category: k, seed: 1, ..Default::default() }).unwrap();
            assert_eq!(round.chosen_count(), k * 4);
            round.validate().unwrap();
        }
    }
}

/// Adjusted Rand index from the contingency table.
fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = (sum_a + sum_b) / 2.0;
    (index - expected) / (max - expected)
}

fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for c in 0..4 {
        for _ in 0..100 {
            let mut p: Vec<f64> = (0..4).map(|_| noise.sample(&mut rng)).collect();
            p[c] += 1.0;
            points.push(p);
            truth.push(c);
        }
    }
    (points, truth)
}

#[test]
fn ari_oracle_sanity() {
    assert!((adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]) - 1.0).abs() < 1e-12);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn kmeans_recovers_four_blobs() {
    let mut good = 0;
    for seed in 0..10 {
        let (points, truth) = blobs(seed);
        let r = kmeans(&points, 4, seed, KMeansParams::default()).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0], "inertia rose: {} -> {}", w[0], w[1]);
        }
        if adjusted_rand_index(&r.assignments, &truth) >= 0.99 {
            good += 1;
        }
    }
    assert!(good >= 9, "{good}/10 seeds recovered the blobs");
}

#[test]
fn cirr_like_run_labels_every_pair() {
    let (points, _) = blobs(42);
    let mut images = EmbeddingTable::new(4).unwrap();
    for (i, p) in points.iter().enumerate() {
        images.insert(format!("img{i:03}"), EmbeddingVector::from_f64(p).unwrap()).unwrap();
    }
    let assignment = kmeans_categorize(&images, 4, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<CandidatePair> = (0..1000)
        .map(|i| {
            let r = rng.random_range(0..400);
            let t = (r + rng.random_range(1..400)) % 400;
            CandidatePair::new(format!("pair{i}"), format!("img{r:03}"), format!("img{t:03}"))
        })
        .collect();
    let labelled = assign_pair_categories(&pairs, &assignment, CategoryBasis::ReferenceImage).unwrap();
    assert!(labelled.iter().all(|p| p.category.is_some()));
    let cats: BTreeSet<_> = labelled.iter().filter_map(|p| p.category.clone()).collect();
    assert_eq!(cats.len(), 4);
}
