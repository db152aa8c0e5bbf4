//! Shapelet discovery in the encoder's latent space.
//!
//! Every multiscale window of every training prefix is embedded; Euclidean
//! K-means over that cloud yields `g` clusters, each represented by the raw
//! window whose embedding lies closest to its center. Clusters whose SIMPC
//! label purity does not exceed `1/P'` are discarded and the rest are ranked
//! by utility `U_c = |C_c| * sum_{c' != c} |Shp_c - Shp_c'|^2`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{prefix_and_interpolate, slice_multiscale, EncoderConfig, EncoderParams};
use crate::error::{domain, Error, Result};
use crate::series::resample_linear_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeletConfig {
    /// Number of K-means clusters `g`.
    pub n_shapelets: usize,
    pub max_iter: usize,
}

impl Default for ShapeletConfig {
    fn default() -> Self {
        Self {
            n_shapelets: 10,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub subsequence: usize,
    pub alpha: f64,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub embedding: Vec<f64>,
    /// Channel-major `D x L_c` window.
    pub segment: Array2<f64>,
    pub source: SegmentRef,
    pub label: usize,
}

/// Embeds every (subsequence, alpha, window) of the training prefixes.
pub fn build_latent_cloud(
    params: &EncoderParams,
    subsequences: &[ArrayView2<'_, f64>],
    labels: &[usize],
    cfg: &EncoderConfig,
) -> Result<Vec<CloudPoint>> {
    if subsequences.len() != labels.len() {
        return Err(domain("one label per subsequence required"));
    }
    let per_sub = subsequences
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(si, (sub, &label))| -> Result<Vec<CloudPoint>> {
            let prefix = prefix_and_interpolate(*sub, cfg.gamma, cfg.interp_len)?;
            let mut pts = Vec::new();
            for &alpha in &cfg.alphas {
                for (wi, seg) in slice_multiscale(prefix.view(), alpha, cfg.slice_stride)?.into_iter().enumerate() {
                    pts.push(CloudPoint {
                        embedding: params.embed(seg.view())?,
                        segment: seg,
                        source: SegmentRef {
                            subsequence: si,
                            alpha,
                            start: wi * cfg.slice_stride,
                        },
                        label,
                    });
                }
            }
            Ok(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sub.into_iter().flatten().collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

/// Lloyd's K-means with k-means++ seeding; ties go to the lowest center.
/// An emptied cluster keeps its previous center.
pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(domain(format!("K-means with k = {k} on {n} points")));
    }
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let u: f64 = rng.random();
        let pick = if total > 0.0 {
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > u * total && d > 0.0
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            ((u * n as f64) as usize).min(n - 1)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centers).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans { centers, assignment })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Channel-major `D x L_c` raw curve.
    pub values: Array2<f64>,
    pub source: SegmentRef,
    pub cluster_size: usize,
    pub purity: f64,
    pub majority_label: usize,
}

/// One candidate per non-empty cluster: the member nearest its center.
pub fn cluster_candidates<R: Rng>(cloud: &[CloudPoint], cfg: &ShapeletConfig, rng: &mut R) -> Result<Vec<Candidate>> {
    let emb: Vec<Vec<f64>> = cloud.iter().map(|p| p.embedding.clone()).collect();
    let km = kmeans(&emb, cfg.n_shapelets, cfg.max_iter, rng)?;
    let mut out = Vec::new();
    for (c, center) in km.centers.iter().enumerate() {
        let members: Vec<usize> = (0..cloud.len()).filter(|&i| km.assignment[i] == c).collect();
        if members.is_empty() {
            log::warn!("shapelet cluster {c} is empty");
            continue;
        }
        let rep = *members
            .iter()
            .min_by(|&&a, &&b| sq_dist(&emb[a], center).total_cmp(&sq_dist(&emb[b], center)).then(a.cmp(&b)))
            .expect("nonempty");
        let mut counts = BTreeMap::<usize, usize>::new();
        for &m in &members {
            *counts.entry(cloud[m].label).or_default() += 1;
        }
        let (&majority_label, &top) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("nonempty");
        out.push(Candidate {
            values: cloud[rep].segment.clone(),
            source: cloud[rep].source,
            cluster_size: members.len(),
            purity: top as f64 / members.len() as f64,
            majority_label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapelet {
    /// Channel-major `D x L_c` raw curve.
    pub values: Array2<f64>,
    pub source: SegmentRef,
    pub cluster_size: usize,
    pub purity: f64,
    pub majority_label: usize,
    pub utility: f64,
}

/// Keeps candidates with purity strictly above `1/P'` and ranks them by
/// utility (descending, stable). Curves are resampled to the longest
/// retained length before distances are taken.
pub fn score_and_filter(candidates: Vec<Candidate>, p_prime: usize) -> Result<Vec<Shapelet>> {
    if p_prime == 0 {
        return Err(domain("pattern count must be at least 1"));
    }
    let threshold = 1.0 / p_prime as f64;
    let kept: Vec<Candidate> = candidates.into_iter().filter(|c| c.purity > threshold).collect();
    if kept.is_empty() {
        return Err(Error::Pipeline(format!("no shapelet candidate has purity above 1/{p_prime}")));
    }
    let target = kept.iter().map(|c| c.values.ncols()).max().expect("nonempty");
    let flat: Vec<Vec<f64>> = kept
        .iter()
        .map(|c| {
            let tm = c.values.t();
            let r = if tm.nrows() == target {
                tm.to_owned()
            } else {
                resample_linear_matrix(tm, target)?
            };
            Ok(r.iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Shapelet> = kept
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let spread: f64 = (0..flat.len()).filter(|&j| j != i).map(|j| sq_dist(&flat[i], &flat[j])).sum();
            Shapelet {
                utility: c.cluster_size as f64 * spread,
                values: c.values,
                source: c.source,
                cluster_size: c.cluster_size,
                purity: c.purity,
                majority_label: c.majority_label,
            }
        })
        .collect();
    out.sort_by(|a, b| b.utility.total_cmp(&a.utility));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cand(values: Array2<f64>, size: usize, purity: f64) -> Candidate {
        Candidate {
            values,
            source: SegmentRef { subsequence: 0, alpha: 0.2, start: 0 },
            cluster_size: size,
            purity,
            majority_label: 0,
        }
    }

    #[test]
    fn blobs_yield_one_candidate_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let pts: Vec<Vec<f64>> = (0..80)
            .map(|i| centers[i % 4].iter().map(|c| c + noise.sample(&mut rng)).collect())
            .collect();
        let cloud: Vec<CloudPoint> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| CloudPoint {
                embedding: p.clone(),
                segment: Array2::from_elem((1, 4), i as f64),
                source: SegmentRef { subsequence: i, alpha: 0.2, start: 0 },
                label: i % 4,
            })
            .collect();
        let cfg = ShapeletConfig { n_shapelets: 4, max_iter: 50 };
        let cands = cluster_candidates(&cloud, &cfg, &mut substream(2, "km")).unwrap();
        assert_eq!(cands.len(), 4);
        let mut blobs: Vec<usize> = cands.iter().map(|c| c.source.subsequence % 4).collect();
        blobs.sort();
        assert_eq!(blobs, vec![0, 1, 2, 3]);
        assert!(cands.iter().all(|c| c.purity == 1.0 && c.cluster_size == 20));
        assert_eq!(cands, cluster_candidates(&cloud, &cfg, &mut substream(2, "km")).unwrap());
    }

    #[test]
    fn singleton_clusters() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 3.0]).collect();
        let km = kmeans(&pts, 5, 50, &mut substream(3, "km")).unwrap();
        let mut a = km.assignment.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert!(kmeans(&pts, 6, 50, &mut substream(3, "km")).is_err());
    }

    #[test]
    fn purity_threshold_is_strict() {
        let v = Array2::from_elem((1, 4), 0.0);
        let out = score_and_filter(vec![cand(v.clone(), 4, 1.0), cand(v.clone(), 4, 0.25)], 4).unwrap();
        assert_eq!(out.len(), 1);
        assert!(score_and_filter(vec![cand(v, 4, 0.25)], 4).is_err());
    }

    #[test]
    fn utility_hand_computed() {
        let a = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let b = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let c = Array2::from_shape_vec((1, 2), vec![0.0, 3.0]).unwrap();
        let out = score_and_filter(vec![cand(a, 2, 1.0), cand(b, 1, 1.0), cand(c, 1, 1.0)], 2).unwrap();
        // a: 2*(1+9)=20, b: 1*(1+10)=11, c: 1*(9+10)=19.
        let u: Vec<f64> = out.iter().map(|s| s.utility).collect();
        assert_eq!(u, vec![20.0, 19.0, 11.0]);
    }

    #[test]
    fn utility_mixed_lengths_and_scaling() {
        let short = Array2::from_shape_fn((2, 4), |(c, t)| (c + t) as f64);
        let long = Array2::from_shape_fn((2, 8), |(c, t)| (c * t) as f64 * 0.5);
        let base = score_and_filter(vec![cand(short.clone(), 3, 1.0), cand(long.clone(), 5, 1.0)], 2).unwrap();
        let doubled = score_and_filter(vec![cand(short, 6, 1.0), cand(long, 10, 1.0)], 2).unwrap();
        for (x, y) in base.iter().zip(&doubled) {
            assert!((2.0 * x.utility - y.utility).abs() < 1e-9);
        }
    }

    #[test]
    fn cloud_counts_and_duplicates() {
        let cfg = EncoderConfig { conv_channels: 4, emb_dim: 4, interp_len: 40, slice_stride: 4, ..Default::default() };
        let params = EncoderParams::init(cfg.architecture(2), &mut substream(1, "p")).unwrap();
        let sub = Array2::from_shape_fn((20, 2), |(t, c)| ((t * (c + 2)) as f64).sin());
        let views = vec![sub.view(), sub.view()];
        let cloud = build_latent_cloud(&params, &views, &[0, 1], &cfg).unwrap();
        let per: usize = cfg.alphas.iter().map(|&a| (40 - crate::encoder::window_len(a, 40)) / 4 + 1).sum();
        assert_eq!(cloud.len(), 2 * per);
        assert_eq!(cloud[0].embedding, cloud[per].embedding);
        assert!(build_latent_cloud(&params, &[], &[], &cfg).unwrap().is_empty());
    }
}
