//! Lloyd's k-means with k-means++ seeding, used to split uncategorized corpora.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingTable;
use crate::hashing::keyed_rng;

use super::SelectionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iterations: usize,
    /// Converged once no centroid moves further than this.
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each iteration's centroid update.
    pub inertia_history: Vec<f64>,
    /// Inertia of the final assignment against the final centroids.
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already sits on a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        let newest = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, newest));
        }
    }
    centroids
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken only from clusters that can spare one.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("n >= k guarantees a cluster with two or more points");
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] = 1;
        centroids[empty] = points[i].clone();
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= c as f64;
        }
    }
    sums
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, params: KMeansParams) -> Result<KMeansResult, SelectionError> {
    if k == 0 {
        return Err(SelectionError::InvalidConfig("k must be positive".into()));
    }
    if points.len() < k {
        return Err(SelectionError::TooFewItems { items: points.len(), k });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(SelectionError::InvalidConfig(format!(
            "mixed dimensions {dim} and {}",
            p.len()
        )));
    }

    let mut rng = keyed_rng("kmeans", seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iterations {
        assignments = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut centroids, &mut assignments);
        let updated = means(points, &assignments, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(inertia(points, &centroids, &assignments));
        if shift < params.tolerance {
            converged = true;
            break;
        }
    }

    // Final pass so each point sits with its nearest centroid, unless that would empty a cluster.
    let final_assign: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
    let mut counts = vec![0usize; k];
    for &a in &final_assign {
        counts[a] += 1;
    }
    if counts.iter().all(|&c| c > 0) {
        assignments = final_assign;
    }

    Ok(KMeansResult {
        inertia: inertia(points, &centroids, &assignments),
        iterations_run: history.len(),
        centroids,
        assignments,
        inertia_history: history,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMethod {
    Explicit,
    Kmeans,
}

/// Item id → category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub labels: BTreeMap<String, String>,
    pub method: AssignmentMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmeans: Option<KMeansSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSummary {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub iterations_run: usize,
    pub inertia: f64,
}

impl CategoryAssignment {
    pub fn explicit(labels: BTreeMap<String, String>) -> Self {
        Self {
            labels,
            method: AssignmentMethod::Explicit,
            kmeans: None,
        }
    }

    pub fn category_of(&self, item_id: &str) -> Option<&str> {
        self.labels.get(item_id).map(String::as_str)
    }
}

/// Label of cluster `i`.
pub fn cluster_label(i: usize) -> String {
    format!("c{i}")
}

/// Clusters a table's vectors (taken in id order) into `k` labelled categories.
pub fn kmeans_categorize(items: &EmbeddingTable, k: usize, seed: u64) -> Result<CategoryAssignment, SelectionError> {
    let ids: Vec<&str> = items.ids().collect();
    let points: Vec<Vec<f64>> = items
        .iter()
        .map(|(_, v)| v.values().iter().map(|&x| f64::from(x)).collect())
        .collect();
    let result = kmeans(&points, k, seed, KMeansParams::default())?;
    let labels = ids
        .iter()
        .zip(&result.assignments)
        .map(|(id, &a)| (id.to_string(), cluster_label(a)))
        .collect();
    Ok(CategoryAssignment {
        labels,
        method: AssignmentMethod::Kmeans,
        kmeans: Some(KMeansSummary {
            k,
            centroids: result.centroids,
            iterations_run: result.iterations_run,
            inertia: result.inertia,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::EmbeddingVector;

    #[test]
    fn k_one_gives_the_mean() {
        let points = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&points, 1, 5, KMeansParams::default()).unwrap();
        assert!(r.assignments.iter().all(|&a| a == 0));
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn identical_points_still_fill_both_clusters() {
        let points = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        for seed in 0..20 {
            let r = kmeans(&points, 2, seed, KMeansParams::default()).unwrap();
            let mut a = r.assignments.clone();
            a.sort_unstable();
            assert_eq!(a, vec![0, 1], "seed {seed}");
        }
    }

    #[test]
    fn too_few_items() {
        assert!(matches!(
            kmeans(&[vec![1.0]], 2, 0, KMeansParams::default()),
            Err(SelectionError::TooFewItems { items: 1, k: 2 })
        ));
    }

    #[test]
    fn two_obvious_groups() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push(vec![i as f64 * 0.01, 0.0]);
            points.push(vec![10.0 + i as f64 * 0.01, 0.0]);
        }
        let r = kmeans(&points, 2, 1, KMeansParams::default()).unwrap();
        for pair in r.assignments.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        // every point sits with its nearest centroid
        for (p, &a) in points.iter().zip(&r.assignments) {
            assert_eq!(nearest(p, &r.centroids).0, a);
        }
    }

    #[test]
    fn categorize_labels_every_item() {
        let mut table = EmbeddingTable::new(2).unwrap();
        for i in 0..6 {
            let x = if i < 3 { 0.0 } else { 5.0 };
            table
                .insert(format!("img{i}"), EmbeddingVector::new(vec![x, i as f32 * 0.01]).unwrap())
                .unwrap();
        }
        let a = kmeans_categorize(&table, 2, 3).unwrap();
        assert_eq!(a.labels.len(), 6);
        assert_eq!(a.method, AssignmentMethod::Kmeans);
        assert_eq!(a.category_of("img0"), a.category_of("img2"));
        assert_ne!(a.category_of("img0"), a.category_of("img5"));
        assert_eq!(a, kmeans_categorize(&table, 2, 3).unwrap());
    }
}
