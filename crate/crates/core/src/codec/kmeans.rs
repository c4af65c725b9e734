//! Two-cluster k-means in one dimension.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusters {
    /// `true` for members of the higher-centroid cluster.
    pub labels: Vec<bool>,
    pub low: f64,
    pub high: f64,
    /// Within-cluster sum of squares.
    pub sse: f64,
}

impl TwoClusters {
    /// Pooled within-cluster standard deviation.
    pub fn pooled_sd(&self) -> f64 {
        let n = self.labels.len();
        if n <= 2 {
            return 0.0;
        }
        (self.sse / (n - 2) as f64).sqrt()
    }

    /// Centroid gap in units of the pooled within-cluster spread.
    pub fn separation(&self) -> f64 {
        let sd = self.pooled_sd();
        if sd == 0.0 {
            return f64::INFINITY;
        }
        (self.high - self.low) / sd
    }
}

fn centroids(values: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &l) in values.iter().zip(labels) {
        if l {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    let (c0, c1) = (s0 / n0 as f64, s1 / n1 as f64);
    let sse = values.iter().zip(labels).map(|(&v, &l)| (v - if l { c1 } else { c0 }).powi(2)).sum();
    (c0, c1, sse)
}

fn lloyd(values: &[f64], mut c0: f64, mut c1: f64, mut labels: Option<Vec<bool>>) -> Vec<bool> {
    loop {
        let next: Vec<bool> = values.iter().map(|&v| (v - c1).abs() < (v - c0).abs()).collect();
        if labels.as_ref() == Some(&next) || next.iter().all(|&l| l) || next.iter().all(|&l| !l) {
            return labels.unwrap_or(next);
        }
        (c0, c1, _) = centroids(values, &next);
        labels = Some(next);
    }
}

/// Lowest-SSE split of the sorted values: returns (split index, sse) such
/// that `sorted[..k]` is the low cluster.
fn best_split(sorted: &[f64]) -> (usize, f64) {
    let n = sorted.len();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut prefix_sq = Vec::with_capacity(n + 1);
    let (mut s, mut q) = (0.0, 0.0);
    prefix.push(0.0);
    prefix_sq.push(0.0);
    // Centre before squaring to keep the prefix sums well conditioned.
    let shift = sorted[n / 2];
    for &v in sorted {
        let v = v - shift;
        s += v;
        q += v * v;
        prefix.push(s);
        prefix_sq.push(q);
    }
    let ss = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let sum = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a] - sum * sum / m).max(0.0)
    };
    let mut best = (1, f64::INFINITY);
    for k in 1..n {
        if sorted[k] == sorted[k - 1] {
            continue;
        }
        let e = ss(0, k) + ss(k, n);
        if e < best.1 {
            best = (k, e);
        }
    }
    best
}

/// Lloyd iteration from the extreme values until assignments are stable.
///
/// Lloyd can settle in a local optimum; when a threshold split with strictly
/// lower within-cluster SSE exists, iteration restarts from that split (in 1-D
/// the optimal two-cluster partition is always a threshold split). The result
/// is therefore the SSE-optimal partition.
pub fn kmeans2(values: &[f64]) -> Result<TwoClusters> {
    if values.len() < 2 {
        return Err(Error::config("k-means needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("k-means values must be finite"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::SingleCluster);
    }
    let mut labels = lloyd(values, min, max, None);
    let (_, _, mut sse) = centroids(values, &labels);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (k, best) = best_split(&sorted);
    let scale = values.iter().map(|v| (v - sorted[0]).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
    if best < sse - 1e-12 * scale {
        let cut = sorted[k - 1];
        let split: Vec<bool> = values.iter().map(|&v| v > cut).collect();
        let (c0, c1, _) = centroids(values, &split);
        labels = lloyd(values, c0, c1, Some(split));
        sse = centroids(values, &labels).2;
    }
    let (low, high, _) = centroids(values, &labels);
    Ok(TwoClusters { labels, low, high, sse })
}
