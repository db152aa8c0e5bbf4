//! Selective invariant multivariate pattern clustering.
//!
//! A seeded k-means++ variant over variable-length segments:
//!
//! 1. keep the chart-pattern prototypes as fixed centroids and draw the rest
//!    from Min-Max normalized `L_max` windows with probability proportional
//!    to their DTW distance from the current centroid set;
//! 2. greedily scan the smoothed series, assigning at each step the
//!    (length, centroid) pair of smallest DTW when it is within `delta`;
//! 3. recompress clusters with at least `kappa` members by DBA, drop the rest
//!    and top the centroid set back up with step 1;
//! 4. after the last pass merge centroid pairs closer than `delta`.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dtw::{dba_barycenter, dtw_cost, DbaConfig};
use crate::error::{domain, Error, Result};
use crate::rng::StageRng;
use crate::series::minmax_normalize_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimpcConfig {
    /// Target cluster count.
    pub p: usize,
    /// Number of chart-pattern prototypes kept as fixed seeds.
    pub m: usize,
    pub delta: f64,
    pub kappa: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub iterations: usize,
    pub ref_len: usize,
    pub stride_unassigned: usize,
    /// Divide DTW cost by `len_a + len_b` before thresholding.
    pub dtw_normalize: bool,
    pub dba_max_iter: usize,
    pub dba_tol: f64,
}

impl Default for SimpcConfig {
    fn default() -> Self {
        Self {
            p: 8,
            m: 6,
            delta: 2.3,
            kappa: 40,
            l_min: 18,
            l_max: 22,
            iterations: 5,
            ref_len: 20,
            stride_unassigned: 1,
            dtw_normalize: false,
            dba_max_iter: 10,
            dba_tol: 1e-4,
        }
    }
}

impl SimpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p == 0 {
            return bad("simpc.p must be at least 1".into());
        }
        if self.m > self.p {
            return bad(format!("simpc.m ({}) exceeds simpc.p ({})", self.m, self.p));
        }
        if self.l_min < 2 || self.l_min > self.l_max {
            return bad(format!(
                "need 2 <= simpc.l_min <= simpc.l_max, got {} and {}",
                self.l_min, self.l_max
            ));
        }
        if !(self.delta > 0.0) {
            return bad(format!("simpc.delta must be > 0, got {}", self.delta));
        }
        if self.kappa == 0 || self.iterations == 0 || self.stride_unassigned == 0 {
            return bad("simpc.kappa, simpc.iterations and simpc.stride_unassigned must be >= 1".into());
        }
        if self.ref_len < 2 {
            return bad("simpc.ref_len must be at least 2".into());
        }
        Ok(())
    }

    fn dba(&self) -> DbaConfig {
        DbaConfig {
            ref_len: self.ref_len,
            max_iter: self.dba_max_iter,
            tol: self.dba_tol,
        }
    }

    /// Segment distance used for assignment and merging.
    pub fn distance(&self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
        let c = dtw_cost(a, b)?;
        Ok(if self.dtw_normalize {
            c / (a.nrows() + b.nrows()) as f64
        } else {
            c
        })
    }
}

/// Dimension-adjusted DTW threshold: `delta/sqrt(3)`, `delta/sqrt(2)` and
/// `delta` for one, two and three channels; `delta * sqrt(D/3)` beyond.
pub fn scale_delta(delta_base: f64, dim: usize) -> Result<f64> {
    match dim {
        0 => Err(domain("dimension must be at least 1")),
        1 => Ok(delta_base / 3f64.sqrt()),
        2 => Ok(delta_base / 2f64.sqrt()),
        3 => Ok(delta_base),
        d => Ok(delta_base * (d as f64 / 3.0).sqrt()),
    }
}

/// Min-Max normalized window `[start, start + len)`.
pub fn normalized_window(series: ArrayView2<'_, f64>, start: usize, len: usize) -> Array2<f64> {
    minmax_normalize_matrix(series.slice(s![start..start + len, ..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub centroids: Vec<Array2<f64>>,
    /// Start indices drawn, in draw order.
    pub selected_starts: Vec<usize>,
}

/// Draws `P - |seeds|` extra centroids by distance-proportional sampling.
///
/// Each draw consumes one `f64` from `rng`. With an empty centroid set the
/// draw is uniform over the remaining candidates; otherwise candidate `s` is
/// picked with probability `d_s / sum(d)`, falling back to uniform when every
/// distance is zero. Starts in `excluded` are never drawn.
pub fn init_centroids(
    series: ArrayView2<'_, f64>,
    seeds: Vec<Array2<f64>>,
    excluded: &BTreeSet<usize>,
    cfg: &SimpcConfig,
    rng: &mut StageRng,
) -> Result<InitOutcome> {
    let t_len = series.nrows();
    if t_len < cfg.l_max {
        return Err(domain(format!(
            "series of length {t_len} is shorter than l_max = {}",
            cfg.l_max
        )));
    }
    let mut centroids = seeds;
    let mut selected_starts = Vec::new();
    if centroids.len() >= cfg.p {
        return Ok(InitOutcome {
            centroids,
            selected_starts,
        });
    }

    let mut starts: Vec<usize> = (0..=t_len - cfg.l_max)
        .filter(|s| !excluded.contains(s))
        .collect();
    let mut windows: Vec<Array2<f64>> = starts
        .iter()
        .map(|&s| normalized_window(series, s, cfg.l_max))
        .collect();
    let mut nearest = vec![f64::INFINITY; starts.len()];
    for c in &centroids {
        for (d, w) in nearest.iter_mut().zip(&windows) {
            *d = d.min(cfg.distance(w.view(), c.view())?);
        }
    }

    while centroids.len() < cfg.p {
        if starts.is_empty() {
            log::warn!(
                "ran out of candidate windows with {} of {} centroids",
                centroids.len(),
                cfg.p
            );
            break;
        }
        let u: f64 = rng.random();
        let total: f64 = nearest.iter().sum();
        let pick = if centroids.is_empty() || !(total > 0.0) || !total.is_finite() {
            ((u * starts.len() as f64) as usize).min(starts.len() - 1)
        } else {
            let target = u * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (k, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(k);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        };
        let chosen = windows.remove(pick);
        selected_starts.push(starts.remove(pick));
        nearest.remove(pick);
        for (d, w) in nearest.iter_mut().zip(&windows) {
            *d = d.min(cfg.distance(w.view(), chosen.view())?);
        }
        centroids.push(chosen);
    }
    Ok(InitOutcome {
        centroids,
        selected_starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub start: usize,
    pub length: usize,
    pub cluster: usize,
    /// DTW distance to the centroid at assignment time.
    pub distance: f64,
}

/// One greedy segmentation pass.
///
/// Lengths are tried in ascending order and centroids by index; the first
/// strict minimum wins. An assignment advances the scan by its length so
/// segments never overlap; a miss advances by `stride_unassigned`.
pub fn greedy_assign_pass(
    series: ArrayView2<'_, f64>,
    centroids: &[Array2<f64>],
    cfg: &SimpcConfig,
) -> Result<Vec<Assignment>> {
    if centroids.is_empty() {
        return Err(domain("greedy pass needs at least one centroid"));
    }
    let t_len = series.nrows();
    let mut out = Vec::new();
    let mut t = 0;
    while t + cfg.l_min <= t_len {
        let mut best: Option<Assignment> = None;
        for len in cfg.l_min..=cfg.l_max {
            if t + len > t_len {
                break;
            }
            let w = normalized_window(series, t, len);
            for (k, c) in centroids.iter().enumerate() {
                let d = cfg.distance(w.view(), c.view())?;
                if best.is_none_or(|b| d < b.distance) {
                    best = Some(Assignment {
                        start: t,
                        length: len,
                        cluster: k,
                        distance: d,
                    });
                }
            }
        }
        match best {
            Some(a) if a.distance <= cfg.delta => {
                out.push(a);
                t += a.length;
            }
            _ => t += cfg.stride_unassigned,
        }
    }
    Ok(out)
}

/// A cluster after recompression: its centroid and members from the pass
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivingCluster {
    pub centroid: Array2<f64>,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub start: usize,
    pub length: usize,
}

/// DBA-recompresses every cluster with at least `kappa` members and
/// renormalizes it; smaller clusters are dropped. Returns the survivors (in
/// original cluster order) and the number dropped.
pub fn update_centroids(
    series: ArrayView2<'_, f64>,
    assignments: &[Assignment],
    n_clusters: usize,
    cfg: &SimpcConfig,
) -> Result<(Vec<SurvivingCluster>, usize)> {
    let mut groups: Vec<Vec<Member>> = vec![Vec::new(); n_clusters];
    for a in assignments {
        let g = groups
            .get_mut(a.cluster)
            .ok_or_else(|| Error::Internal(format!("assignment to unknown cluster {}", a.cluster)))?;
        g.push(Member {
            start: a.start,
            length: a.length,
        });
    }
    let mut survivors = Vec::new();
    let mut dropped = 0;
    for members in groups {
        if members.len() < cfg.kappa {
            dropped += 1;
            continue;
        }
        let windows: Vec<Array2<f64>> = members
            .iter()
            .map(|m| normalized_window(series, m.start, m.length))
            .collect();
        let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
        let bary = dba_barycenter(&views, cfg.dba())?;
        survivors.push(SurvivingCluster {
            centroid: minmax_normalize_matrix(bary.values.view()),
            members,
        });
    }
    Ok((survivors, dropped))
}

/// Final pattern set; cluster `k` is pattern label `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub centroids: Vec<Array2<f64>>,
    pub members: Vec<Vec<Member>>,
}

impl ClusterSet {
    pub fn p_prime(&self) -> usize {
        self.centroids.len()
    }

    /// Cluster of the member starting at `start`, if any.
    pub fn label_of(&self, start: usize) -> Option<usize> {
        self.members
            .iter()
            .position(|ms| ms.iter().any(|m| m.start == start))
    }
}

/// Pairwise centroid distances in index order `(0,1), (0,2), ..`.
pub fn pairwise_distances(centroids: &[Array2<f64>], cfg: &SimpcConfig) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            out.push((i, j, cfg.distance(centroids[i].view(), centroids[j].view())?));
        }
    }
    Ok(out)
}

/// Repeatedly merges the closest centroid pair while it is within `delta`.
/// The merged centroid is the renormalized DBA of the pair; member lists are
/// united without re-segmentation.
pub fn merge_centroids(clusters: Vec<SurvivingCluster>, cfg: &SimpcConfig) -> Result<ClusterSet> {
    let mut clusters = clusters;
    loop {
        let cents: Vec<Array2<f64>> = clusters.iter().map(|c| c.centroid.clone()).collect();
        let closest = pairwise_distances(&cents, cfg)?
            .into_iter()
            .fold(None::<(usize, usize, f64)>, |best, cur| match best {
                Some(b) if b.2 <= cur.2 => Some(b),
                _ => Some(cur),
            });
        let Some((i, j, d)) = closest.filter(|c| c.2 <= cfg.delta) else {
            break;
        };
        log::debug!("merging centroids {i} and {j} at distance {d:.4}");
        let pair = [clusters[i].centroid.view(), clusters[j].centroid.view()];
        let bary = dba_barycenter(&pair, cfg.dba())?;
        let absorbed = clusters.remove(j);
        let keep = &mut clusters[i];
        keep.centroid = minmax_normalize_matrix(bary.values.view());
        keep.members.extend(absorbed.members);
        keep.members.sort();
    }
    Ok(ClusterSet {
        centroids: clusters.iter().map(|c| c.centroid.clone()).collect(),
        members: clusters.into_iter().map(|c| c.members).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub assigned: usize,
    /// Members per centroid in this pass, before pruning.
    pub cluster_sizes: Vec<usize>,
    pub dropped: usize,
    pub replenished: usize,
}

/// Separation summary of the centroids before merging, scaled by `1/sqrt(D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub n_subsequences: usize,
    pub avg_distance: f64,
    pub min_distance: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpcOutcome {
    pub clusters: ClusterSet,
    pub iterations: Vec<IterationDiagnostics>,
    pub pre_merge: SeparationReport,
}

/// Runs the full clustering on an already smoothed `T x D` series.
///
/// The last iteration does not replenish: its survivors, with the members of
/// that pass, go straight to merging.
pub fn run_simpc(
    series: ArrayView2<'_, f64>,
    seeds: Vec<Array2<f64>>,
    cfg: &SimpcConfig,
    rng: &mut StageRng,
) -> Result<SimpcOutcome> {
    cfg.validate()?;
    let dim = series.ncols();
    if let Some(bad) = seeds.iter().find(|s| s.ncols() != dim) {
        return Err(domain(format!(
            "seed has {} channels, series has {dim}",
            bad.ncols()
        )));
    }
    let seeds: Vec<Array2<f64>> = seeds.into_iter().take(cfg.m).collect();
    let mut centroids = init_centroids(series, seeds, &BTreeSet::new(), cfg, rng)?.centroids;
    let mut iterations = Vec::new();
    let mut survivors = Vec::new();

    for it in 0..cfg.iterations {
        let assignments = greedy_assign_pass(series, &centroids, cfg)?;
        let mut sizes = vec![0; centroids.len()];
        for a in &assignments {
            sizes[a.cluster] += 1;
        }
        let (kept, dropped) = update_centroids(series, &assignments, centroids.len(), cfg)?;
        let mut replenished = 0;
        let last = it + 1 == cfg.iterations;
        if !last {
            let fixed: Vec<Array2<f64>> = kept.iter().map(|c| c.centroid.clone()).collect();
            let n_fixed = fixed.len();
            centroids = if n_fixed < cfg.p {
                let used: BTreeSet<usize> = assignments.iter().map(|a| a.start).collect();
                init_centroids(series, fixed, &used, cfg, rng)?.centroids
            } else {
                fixed
            };
            replenished = centroids.len() - n_fixed;
        }
        log::info!(
            "iteration {}: {} assigned, sizes {:?}, {} dropped, {} replenished",
            it + 1,
            assignments.len(),
            sizes,
            dropped,
            replenished
        );
        iterations.push(IterationDiagnostics {
            iteration: it + 1,
            assigned: assignments.len(),
            cluster_sizes: sizes,
            dropped,
            replenished,
        });
        survivors = kept;
    }

    let pre_merge = separation(&survivors, dim, cfg)?;
    let clusters = merge_centroids(survivors, cfg)?;
    Ok(SimpcOutcome {
        clusters,
        iterations,
        pre_merge,
    })
}

fn separation(clusters: &[SurvivingCluster], dim: usize, cfg: &SimpcConfig) -> Result<SeparationReport> {
    let cents: Vec<Array2<f64>> = clusters.iter().map(|c| c.centroid.clone()).collect();
    let scale = (dim as f64).sqrt();
    let pairs: Vec<(usize, usize, f64)> = pairwise_distances(&cents, cfg)?
        .into_iter()
        .map(|(i, j, d)| (i, j, d / scale))
        .collect();
    let (avg, min) = if pairs.is_empty() {
        (0.0, 0.0)
    } else {
        (
            pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64,
            pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min),
        )
    };
    Ok(SeparationReport {
        n_subsequences: clusters.iter().map(|c| c.members.len()).sum(),
        avg_distance: avg,
        min_distance: min,
        pairs,
    })
}
