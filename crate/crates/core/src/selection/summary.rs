use serde::{Deserialize, Serialize};

use super::SelectionError;

pub const HISTOGRAM_BINS: usize = 50;
pub const SUMMARY_QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 0.9545];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Uniform bins over `[lo, hi]`; the last bin is closed on the right.
    /// A single bin when every value is equal.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Adjusted Fisher–Pearson coefficient; 0 when undefined (n < 3 or zero spread).
    pub skewness: f64,
    pub histogram: Histogram,
    /// `(p, value)` for each of [`SUMMARY_QUANTILES`], linear interpolation between order statistics.
    pub quantiles: Vec<(f64, f64)>,
}

/// Linear-interpolation quantile of sorted data (`h = (n − 1)·p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(scores: &[f64]) -> Result<DistributionSummary, SelectionError> {
    let n = scores.len();
    if n < 2 {
        return Err(SelectionError::TooFewScores(n));
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in scores {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let std = (m2 / (nf - 1.0)).sqrt();

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[n - 1]);

    let skewness = if n < 3 || min == max {
        0.0
    } else {
        let g1 = (m3 / nf) / (m2 / nf).powf(1.5);
        g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0)
    };
    let std = if min == max { 0.0 } else { std };

    let histogram = if min == max {
        Histogram {
            lo: min,
            hi: max,
            counts: vec![n as u64],
        }
    } else {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for &x in scores {
            let bin = (((x - min) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Histogram { lo: min, hi: max, counts }
    };

    let quantiles = SUMMARY_QUANTILES
        .iter()
        .map(|&p| (p, quantile_sorted(&sorted, p)))
        .collect();

    Ok(DistributionSummary {
        count: n,
        mean,
        std,
        min,
        max,
        skewness,
        histogram,
        quantiles,
    })
}
