//! Triplet mining in input space: prefix extraction, multiscale slicing,
//! DTW 2-means and anchor/positive/negative selection.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::{dba_barycenter, dtw_cost, medoid_index, DbaConfig};
use crate::error::{domain, Result};
use crate::series::{minmax_normalize_matrix, resample_linear_matrix};

/// Number of leading steps kept from a length-`len` subsequence.
pub fn prefix_len(len: usize, gamma: f64) -> usize {
    ((gamma * len as f64 - 1e-9).ceil() as usize).clamp(2.min(len), len)
}

/// First `ceil(gamma * len)` rows of a time-major `len x D` matrix,
/// resampled to `target_len` and Min-Max normalized per column.
pub fn prefix_and_interpolate(values: ArrayView2<'_, f64>, gamma: f64, target_len: usize) -> Result<Array2<f64>> {
    let len = values.nrows();
    if len < 2 {
        return Err(domain(format!("subsequence of length {len} is too short")));
    }
    let k = prefix_len(len, gamma);
    let r = resample_linear_matrix(values.slice(s![..k, ..]), target_len)?;
    Ok(minmax_normalize_matrix(r.view()))
}

/// Window length `round(alpha * len)`.
pub fn window_len(alpha: f64, len: usize) -> usize {
    (alpha * len as f64).round() as usize
}

/// Channel-major `D x w` windows of a time-major `L x D` matrix, starting at
/// `0, stride, 2*stride, ..` while they fit.
pub fn slice_multiscale(values: ArrayView2<'_, f64>, alpha: f64, stride: usize) -> Result<Vec<Array2<f64>>> {
    let len = values.nrows();
    let w = window_len(alpha, len);
    if w < 2 {
        return Err(domain(format!("window length {w} is below 2")));
    }
    if w > len {
        return Err(domain(format!("window length {w} exceeds series length {len}")));
    }
    if stride == 0 {
        return Err(domain("stride must be at least 1"));
    }
    Ok((0..=len - w)
        .step_by(stride)
        .map(|st| values.slice(s![st..st + w, ..]).t().to_owned())
        .collect())
}

/// Time-major view of a channel-major segment.
fn tm(seg: &Array2<f64>) -> ArrayView2<'_, f64> {
    seg.t()
}

/// Two-cluster K-means under DTW with DBA centroids.
///
/// The first centroid is drawn uniformly and the second with probability
/// proportional to DTW distance from it. Iterates until the assignment is
/// stable or `max_iter` passes. An empty cluster receives the segment
/// farthest from the other centroid. Ties go to cluster 0.
pub fn dtw_kmeans2<R: Rng>(segments: &[Array2<f64>], max_iter: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = segments.len();
    if n < 2 {
        return Err(domain(format!("2-means needs at least 2 segments, got {n}")));
    }
    let first = rng.random_range(0..n);
    let d0 = segments
        .par_iter()
        .map(|s| dtw_cost(tm(s), tm(&segments[first])))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = d0.iter().sum();
    let u: f64 = rng.random();
    let second = if total > 0.0 {
        let mut acc = 0.0;
        d0.iter()
            .position(|&d| {
                acc += d;
                acc > u * total && d > 0.0
            })
            .unwrap_or_else(|| d0.iter().rposition(|&d| d > 0.0).unwrap_or((first + 1) % n))
    } else {
        (first + 1 + ((u * (n - 1) as f64) as usize).min(n - 2)) % n
    };
    let mut centroids = [segments[first].t().to_owned(), segments[second].t().to_owned()];
    let ref_len = segments[0].ncols();
    let dba = DbaConfig {
        ref_len,
        ..DbaConfig::default()
    };

    let mut labels: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let dists = segments
            .par_iter()
            .map(|s| Ok([dtw_cost(tm(s), centroids[0].view())?, dtw_cost(tm(s), centroids[1].view())?]))
            .collect::<Result<Vec<[f64; 2]>>>()?;
        let mut next: Vec<usize> = dists.iter().map(|d| usize::from(d[1] < d[0])).collect();
        for empty in 0..2 {
            if !next.contains(&empty) {
                let other = 1 - empty;
                let far = (0..n)
                    .max_by(|&a, &b| dists[a][other].total_cmp(&dists[b][other]).then(b.cmp(&a)))
                    .expect("nonempty");
                next[far] = empty;
            }
        }
        if next == labels {
            break;
        }
        labels = next;
        for (k, c) in centroids.iter_mut().enumerate() {
            let members: Vec<ArrayView2<'_, f64>> = (0..n).filter(|&i| labels[i] == k).map(|i| tm(&segments[i])).collect();
            *c = dba_barycenter(&members, dba)?.values;
        }
    }
    Ok(labels)
}

/// Indices of one anchor with its positive and negative sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// One triplet per cluster: the DTW medoid as anchor, the `ceil(|c|/5)`
/// nearest cluster mates as positives and the `ceil(|c'|/5)` farthest
/// members of the other cluster as negatives. A cluster with no other
/// member yields no triplet.
pub fn select_triplets(segments: &[Array2<f64>], labels: &[usize]) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for k in 0..2 {
        let own: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        let other: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != k).collect();
        if own.len() < 2 || other.is_empty() {
            log::warn!("cluster {k} has {} members and its complement {}; no triplet", own.len(), other.len());
            continue;
        }
        let views: Vec<_> = own.iter().map(|&i| tm(&segments[i])).collect();
        let anchor = own[medoid_index(&views)?];
        let ranked = |pool: &[usize]| -> Result<Vec<(f64, usize)>> {
            let mut v = pool
                .par_iter()
                .map(|&i| Ok((dtw_cost(tm(&segments[i]), tm(&segments[anchor]))?, i)))
                .collect::<Result<Vec<_>>>()?;
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            Ok(v)
        };
        let mates: Vec<usize> = own.iter().copied().filter(|&i| i != anchor).collect();
        let n_pos = own.len().div_ceil(5).min(mates.len());
        let positives = ranked(&mates)?.into_iter().take(n_pos).map(|x| x.1).collect();
        let n_neg = other.len().div_ceil(5);
        let mut far = ranked(&other)?;
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let negatives = far.into_iter().take(n_neg).map(|x| x.1).collect();
        out.push(Triplet {
            anchor,
            positives,
            negatives,
        });
    }
    Ok(out)
}
