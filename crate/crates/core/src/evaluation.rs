//! Recall@k over an embedding gallery and aggregation across repeated trials.
//!
//! Each query's gallery is ranked by descending cosine to its composed
//! embedding, ties broken by item id ascending, with the query's excluded ids
//! (by default its reference image) removed. A query hits at k when its
//! ground-truth target is among the first k.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{cosine_similarity, EmbeddingTable, EmbeddingVector, StoreError};

/// Recall@k defaults for FashionIQ / Birds-to-Words style runs.
pub const DEFAULT_KS_FASHION: [usize; 2] = [10, 50];
/// Recall@k defaults for CIRR style runs.
pub const DEFAULT_KS_CIRR: [usize; 2] = [1, 5];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query `{query}`: ground truth `{target}` is not in the gallery")]
    MissingTarget { query: String, target: String },
    #[error("query `{query}`: ground truth `{target}` is excluded")]
    ExcludedTarget { query: String, target: String },
    #[error("query `{0}`: gallery is empty after exclusions")]
    EmptyGallery(String),
    #[error("k={k} is outside 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("no queries")]
    NoQueries,
    #[error("no ks requested")]
    NoKs,
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("trial reports have different shapes: {0}")]
    ShapeMismatch(String),
    #[error("query `{query}`: {source}")]
    Similarity { query: String, source: StoreError },
    #[error("malformed query at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query_id: String,
    #[serde(rename = "vec")]
    pub composed: EmbeddingVector,
    #[serde(rename = "target")]
    pub ground_truth_target_id: String,
    #[serde(default)]
    pub exclude_ids: BTreeSet<String>,
    /// Dataset subset (e.g. a FashionIQ category) this query belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

impl RetrievalQuery {
    pub fn new(query_id: impl Into<String>, composed: EmbeddingVector, target: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            composed,
            ground_truth_target_id: target.into(),
            exclude_ids: BTreeSet::new(),
            subset: None,
        }
    }

    pub fn excluding(mut self, id: impl Into<String>) -> Self {
        self.exclude_ids.insert(id.into());
        self
    }

    pub fn in_subset(mut self, subset: impl Into<String>) -> Self {
        self.subset = Some(subset.into());
        self
    }

    fn effective_gallery_size(&self, gallery: &EmbeddingTable) -> usize {
        gallery.len() - self.exclude_ids.iter().filter(|id| gallery.contains(id)).count()
    }

    fn validate(&self, gallery: &EmbeddingTable) -> Result<(), EvalError> {
        if !gallery.contains(&self.ground_truth_target_id) {
            return Err(EvalError::MissingTarget {
                query: self.query_id.clone(),
                target: self.ground_truth_target_id.clone(),
            });
        }
        if self.exclude_ids.contains(&self.ground_truth_target_id) {
            return Err(EvalError::ExcludedTarget {
                query: self.query_id.clone(),
                target: self.ground_truth_target_id.clone(),
            });
        }
        Ok(())
    }
}

/// 0-based rank of the query's target: the number of non-excluded gallery
/// items that score higher, or score equal with a smaller id.
pub fn target_rank(query: &RetrievalQuery, gallery: &EmbeddingTable) -> Result<usize, EvalError> {
    let sim = |v: &EmbeddingVector| {
        cosine_similarity(&query.composed, v).map_err(|source| EvalError::Similarity {
            query: query.query_id.clone(),
            source,
        })
    };
    let target = query.ground_truth_target_id.as_str();
    let target_sim = sim(gallery.require(target).map_err(|_| EvalError::MissingTarget {
        query: query.query_id.clone(),
        target: target.to_string(),
    })?)?;
    let mut rank = 0;
    for (id, v) in gallery.iter() {
        if id == target || query.exclude_ids.contains(id) {
            continue;
        }
        let s = sim(v)?;
        if s > target_sim || (s == target_sim && id < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Recall over all queries.
    pub overall: BTreeMap<usize, f64>,
    /// Recall within each subset.
    pub subsets: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Unweighted mean of the subset recalls; present when queries carry subsets.
    pub subset_average: Option<BTreeMap<usize, f64>>,
    pub query_count: usize,
}

pub fn recall_at_k(queries: &[RetrievalQuery], gallery: &EmbeddingTable, ks: &[usize]) -> Result<RecallReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if ks.is_empty() {
        return Err(EvalError::NoKs);
    }
    let mut min_size = usize::MAX;
    for q in queries {
        q.validate(gallery)?;
        let size = q.effective_gallery_size(gallery);
        if size == 0 {
            return Err(EvalError::EmptyGallery(q.query_id.clone()));
        }
        min_size = min_size.min(size);
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > min_size) {
        return Err(EvalError::BadK { k, max: min_size });
    }

    let ranks: Vec<usize> = queries
        .par_iter()
        .map(|q| target_rank(q, gallery))
        .collect::<Result<_, _>>()?;

    let recall = |idx: &[usize]| -> BTreeMap<usize, f64> {
        ks.iter()
            .map(|&k| {
                let hits = idx.iter().filter(|&&i| ranks[i] < k).count();
                (k, hits as f64 / idx.len() as f64)
            })
            .collect()
    };

    let all: Vec<usize> = (0..queries.len()).collect();
    let mut by_subset: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        if let Some(s) = &q.subset {
            by_subset.entry(s.clone()).or_default().push(i);
        }
    }
    let subsets: BTreeMap<String, BTreeMap<usize, f64>> =
        by_subset.iter().map(|(s, idx)| (s.clone(), recall(idx))).collect();
    let subset_average = (!subsets.is_empty()).then(|| {
        ks.iter()
            .map(|&k| {
                let sum: f64 = subsets.values().map(|m| m[&k]).sum();
                (k, sum / subsets.len() as f64)
            })
            .collect()
    });

    Ok(RecallReport {
        overall: recall(&all),
        subsets,
        subset_average,
        query_count: queries.len(),
        ks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStat {
    pub trials: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1) divided by √n.
    pub standard_error: f64,
}

impl TrialStat {
    pub fn from_trials(trials: Vec<f64>) -> Result<Self, EvalError> {
        let n = trials.len();
        if n < 2 {
            return Err(EvalError::TooFewTrials(n));
        }
        let nf = n as f64;
        let mean = trials.iter().sum::<f64>() / nf;
        let var = trials.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
        let standard_error = if trials.iter().all(|&x| x == trials[0]) {
            0.0
        } else {
            var.sqrt() / nf.sqrt()
        };
        Ok(Self {
            trials,
            mean,
            standard_error,
        })
    }
}

/// Scope of an aggregated recall value.
pub const OVERALL: &str = "overall";
pub const SUBSET_AVERAGE: &str = "subset_average";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub trial_count: usize,
    pub ks: Vec<usize>,
    /// scope (`overall`, `subset_average` or a subset name) → k → statistic.
    pub scopes: BTreeMap<String, BTreeMap<usize, TrialStat>>,
}

impl TrialAggregate {
    pub fn get(&self, scope: &str, k: usize) -> Option<&TrialStat> {
        self.scopes.get(scope).and_then(|m| m.get(&k))
    }
}

fn scopes_of(r: &RecallReport) -> BTreeMap<String, &BTreeMap<usize, f64>> {
    let mut m = BTreeMap::new();
    m.insert(OVERALL.to_string(), &r.overall);
    if let Some(avg) = &r.subset_average {
        m.insert(SUBSET_AVERAGE.to_string(), avg);
    }
    for (s, v) in &r.subsets {
        m.insert(s.clone(), v);
    }
    m
}

pub fn aggregate_trials(reports: &[RecallReport]) -> Result<TrialAggregate, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewTrials(reports.len()));
    }
    let first = &reports[0];
    let first_scopes = scopes_of(first);
    for (i, r) in reports.iter().enumerate().skip(1) {
        if r.ks != first.ks {
            return Err(EvalError::ShapeMismatch(format!("trial {i} has ks {:?}, expected {:?}", r.ks, first.ks)));
        }
        let keys: Vec<_> = scopes_of(r).into_keys().collect();
        let expected: Vec<_> = first_scopes.keys().cloned().collect();
        if keys != expected {
            return Err(EvalError::ShapeMismatch(format!(
                "trial {i} has subsets {keys:?}, expected {expected:?}"
            )));
        }
    }
    let mut scopes = BTreeMap::new();
    for scope in first_scopes.keys() {
        let mut per_k = BTreeMap::new();
        for &k in &first.ks {
            let values = reports.iter().map(|r| scopes_of(r)[scope][&k]).collect();
            per_k.insert(k, TrialStat::from_trials(values)?);
        }
        scopes.insert(scope.clone(), per_k);
    }
    Ok(TrialAggregate {
        trial_count: reports.len(),
        ks: first.ks.clone(),
        scopes,
    })
}

/// Reads queries, one JSON object per line:
/// `{"query_id", "vec", "target", "exclude_ids"?, "subset"?}`.
pub fn read_queries(path: &Path) -> Result<Vec<RetrievalQuery>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn gallery() -> EmbeddingTable {
        EmbeddingTable::from_entries(
            2,
            [
                ("a", v(&[1.0, 0.0])),
                ("b", v(&[0.0, 1.0])),
                ("c", v(&[1.0, 1.0])),
                ("d", v(&[-1.0, 0.2])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unique_nearest_hits_at_one() {
        let q = RetrievalQuery::new("q", v(&[0.9, 0.1]), "a");
        let r = recall_at_k(&[q], &gallery(), &[1, 4]).unwrap();
        assert_eq!(r.overall[&1], 1.0);
        assert_eq!(r.overall[&4], 1.0);
    }

    #[test]
    fn exclusion_and_full_gallery_boundary() {
        let q = RetrievalQuery::new("q", v(&[1.0, 0.0]), "d").excluding("a");
        let g = gallery();
        assert_eq!(target_rank(&q, &g).unwrap(), 2);
        let r = recall_at_k(std::slice::from_ref(&q), &g, &[1, 2, 3]).unwrap();
        assert_eq!((r.overall[&1], r.overall[&2], r.overall[&3]), (0.0, 0.0, 1.0));
        assert!(matches!(recall_at_k(&[q], &g, &[4]), Err(EvalError::BadK { k: 4, max: 3 })));
    }

    #[test]
    fn ties_rank_by_id() {
        let g = EmbeddingTable::from_entries(2, [("x", v(&[1.0, 0.0])), ("y", v(&[2.0, 0.0]))]).unwrap();
        let qx = RetrievalQuery::new("q1", v(&[1.0, 0.0]), "x");
        let qy = RetrievalQuery::new("q2", v(&[1.0, 0.0]), "y");
        assert_eq!(target_rank(&qx, &g).unwrap(), 0);
        assert_eq!(target_rank(&qy, &g).unwrap(), 1);
    }

    #[test]
    fn invalid_queries() {
        let g = gallery();
        let missing = RetrievalQuery::new("q", v(&[1.0, 0.0]), "zzz");
        assert!(matches!(recall_at_k(&[missing], &g, &[1]), Err(EvalError::MissingTarget { .. })));
        let excluded = RetrievalQuery::new("q", v(&[1.0, 0.0]), "a").excluding("a");
        assert!(matches!(recall_at_k(&[excluded], &g, &[1]), Err(EvalError::ExcludedTarget { .. })));
        let small = EmbeddingTable::from_entries(2, [("a", v(&[1.0, 0.0]))]).unwrap();
        let q = RetrievalQuery::new("q", v(&[1.0, 0.0]), "a");
        assert!(recall_at_k(&[q], &small, &[0]).is_err());
        assert!(matches!(recall_at_k(&[], &g, &[1]), Err(EvalError::NoQueries)));
    }

    #[test]
    fn subset_average_is_unweighted() {
        let g = gallery();
        let queries = vec![
            RetrievalQuery::new("1", v(&[1.0, 0.0]), "a").in_subset("dress"),
            RetrievalQuery::new("2", v(&[1.0, 0.0]), "b").in_subset("dress"),
            RetrievalQuery::new("3", v(&[1.0, 0.0]), "a").in_subset("dress"),
            RetrievalQuery::new("4", v(&[0.0, 1.0]), "b").in_subset("shirt"),
        ];
        let r = recall_at_k(&queries, &g, &[1]).unwrap();
        assert!((r.subsets["dress"][&1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.subsets["shirt"][&1], 1.0);
        assert!((r.subset_average.as_ref().unwrap()[&1] - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.overall[&1], 0.75);
    }

    fn report(x: f64) -> RecallReport {
        RecallReport {
            ks: vec![10],
            overall: BTreeMap::from([(10, x)]),
            subsets: BTreeMap::new(),
            subset_average: None,
            query_count: 1,
        }
    }

    #[test]
    fn constant_trials_have_zero_error() {
        let agg = aggregate_trials(&vec![report(0.5); 5]).unwrap();
        let s = agg.get(OVERALL, 10).unwrap();
        assert_eq!((s.mean, s.standard_error), (0.5, 0.0));
    }

    #[test]
    fn two_point_trials() {
        let agg = aggregate_trials(&[report(0.4), report(0.6)]).unwrap();
        let s = agg.get(OVERALL, 10).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.standard_error - 0.1).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_and_too_few() {
        assert!(matches!(aggregate_trials(&[report(0.1)]), Err(EvalError::TooFewTrials(1))));
        let mut other = report(0.2);
        other.ks = vec![50];
        assert!(matches!(aggregate_trials(&[report(0.1), other]), Err(EvalError::ShapeMismatch(_))));
        let mut sub = report(0.2);
        sub.subsets.insert("x".into(), BTreeMap::from([(10, 0.2)]));
        assert!(matches!(aggregate_trials(&[report(0.1), sub]), Err(EvalError::ShapeMismatch(_))));
    }

    #[test]
    fn query_json_shape() {
        let q: RetrievalQuery =
            serde_json::from_str(r#"{"query_id": "q", "vec": [1, 0], "target": "a", "exclude_ids": ["r"]}"#).unwrap();
        assert_eq!(q.ground_truth_target_id, "a");
        assert!(q.exclude_ids.contains("r"));
        assert_eq!(q.subset, None);
    }
}
