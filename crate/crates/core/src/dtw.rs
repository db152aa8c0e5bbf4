//! Dependent multivariate DTW and DTW barycenter averaging.
//!
//! The local cost between frames is the Euclidean norm over all channels (the
//! channels warp together) and the reported cost is the raw accumulated sum
//! along the optimal path, with no square root over the total and no
//! path-length normalization.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::series::resample_linear_matrix;

/// Optimal warping path and its accumulated cost.
///
/// `path` runs from `(0, 0)` to `(len_a - 1, len_b - 1)` with steps drawn from
/// `(+1, 0)`, `(0, +1)` and `(+1, +1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

#[inline]
pub(crate) fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_shapes(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(domain("DTW needs non-empty sequences"));
    }
    if a.ncols() != b.ncols() {
        return Err(domain(format!(
            "DTW dimension mismatch: {} vs {} channels",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

fn rows(m: &ArrayView2<'_, f64>) -> Vec<f64> {
    match m.as_slice() {
        Some(s) => s.to_vec(),
        None => m.iter().copied().collect(),
    }
}

/// Full dynamic program with backtracking.
///
/// Backtracking prefers the diagonal predecessor, then vertical `(i-1, j)`,
/// then horizontal `(i, j-1)` when accumulated costs tie.
pub fn dtw_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Alignment> {
    check_shapes(&a, &b)?;
    let (n, m, d) = (a.nrows(), b.nrows(), a.ncols());
    let (av, bv) = (rows(&a), rows(&b));
    let frame_a = |i: usize| &av[i * d..(i + 1) * d];
    let frame_b = |j: usize| &bv[j * d..(j + 1) * d];

    let mut acc = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = frame_distance(frame_a(i), frame_b(j));
            acc[i * m + j] = match (i, j) {
                (0, 0) => c,
                (0, _) => c + acc[j - 1],
                (_, 0) => c + acc[(i - 1) * m],
                _ => {
                    let best = acc[(i - 1) * m + j - 1]
                        .min(acc[(i - 1) * m + j])
                        .min(acc[i * m + j - 1]);
                    c + best
                }
            };
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        path,
        cost: acc[n * m - 1],
    })
}

/// Cost-only DTW with two rolling rows. Same arithmetic as [`dtw_distance`],
/// so the two agree bit for bit.
pub fn dtw_cost(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(&a, &b)?;
    let d = a.ncols();
    match (a.as_slice(), b.as_slice()) {
        (Some(av), Some(bv)) => Ok(dtw_cost_slices(av, bv, d)),
        _ => Ok(dtw_cost_slices(&rows(&a), &rows(&b), d)),
    }
}

/// Row-major frames of width `d`; both inputs non-empty.
pub(crate) fn dtw_cost_slices(av: &[f64], bv: &[f64], d: usize) -> f64 {
    let n = av.len() / d;
    let m = bv.len() / d;
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for i in 0..n {
        let fa = &av[i * d..(i + 1) * d];
        for j in 0..m {
            let c = frame_distance(fa, &bv[j * d..(j + 1) * d]);
            cur[j] = match (i, j) {
                (0, 0) => c,
                (0, _) => c + cur[j - 1],
                (_, 0) => c + prev[0],
                _ => c + prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// DBA stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbaConfig {
    pub ref_len: usize,
    pub max_iter: usize,
    /// Relative objective improvement below which iteration stops.
    pub tol: f64,
}

impl Default for DbaConfig {
    fn default() -> Self {
        Self {
            ref_len: 20,
            max_iter: 10,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barycenter {
    pub values: Array2<f64>,
    /// Sum of member DTW costs to `values`.
    pub objective: f64,
    pub iterations_used: usize,
    /// Objective of the initial guess followed by every accepted update.
    pub trace: Vec<f64>,
}

/// Index of the member with the smallest summed DTW cost to all others
/// (lowest index on ties).
pub fn medoid_index(members: &[ArrayView2<'_, f64>]) -> Result<usize> {
    if members.is_empty() {
        return Err(domain("medoid of an empty set"));
    }
    let n = members.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let costs = pairs
        .par_iter()
        .map(|&(i, j)| dtw_cost(members[i], members[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; n];
    for (&(i, j), c) in pairs.iter().zip(costs) {
        sums[i] += c;
        sums[j] += c;
    }
    Ok(argmin(&sums))
}

pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn align_all(
    members: &[ArrayView2<'_, f64>],
    center: &Array2<f64>,
) -> Result<(Vec<Alignment>, f64)> {
    let aligns = members
        .par_iter()
        .map(|m| dtw_distance(*m, center.view()))
        .collect::<Result<Vec<_>>>()?;
    let total = aligns.iter().map(|a| a.cost).sum();
    Ok((aligns, total))
}

fn average_along(
    members: &[ArrayView2<'_, f64>],
    aligns: &[Alignment],
    ref_len: usize,
    dim: usize,
) -> Result<Array2<f64>> {
    let mut sum = Array2::<f64>::zeros((ref_len, dim));
    let mut count = vec![0usize; ref_len];
    for (m, al) in members.iter().zip(aligns) {
        for &(i, j) in &al.path {
            let mut row = sum.row_mut(j);
            row += &m.row(i);
            count[j] += 1;
        }
    }
    for (j, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(Error::Internal(format!(
                "barycenter frame {j} received no aligned member frames"
            )));
        }
        sum.row_mut(j).mapv_inplace(|v| v / c as f64);
    }
    Ok(sum)
}

/// DTW barycenter averaging.
///
/// Starts from the medoid resampled to `ref_len`. Each round aligns every
/// member to the current center and replaces each center frame with the mean
/// of the member frames mapped onto it. A round is accepted only if it does
/// not raise the objective; iteration stops on rejection, when the relative
/// improvement falls below `tol`, or after `max_iter` rounds.
pub fn dba_barycenter(members: &[ArrayView2<'_, f64>], cfg: DbaConfig) -> Result<Barycenter> {
    if members.is_empty() {
        return Err(domain("DBA needs at least one member"));
    }
    let dim = members[0].ncols();
    if let Some(bad) = members.iter().find(|m| m.ncols() != dim) {
        return Err(domain(format!(
            "DBA members disagree on channel count ({} vs {dim})",
            bad.ncols()
        )));
    }
    if members.iter().any(|m| m.nrows() == 0) {
        return Err(domain("DBA member with no frames"));
    }

    let start = medoid_index(members)?;
    let mut center = resample_linear_matrix(members[start], cfg.ref_len)?;
    let (mut aligns, mut objective) = align_all(members, &center)?;
    let mut trace = vec![objective];
    let mut iterations_used = 0;

    for _ in 0..cfg.max_iter {
        if objective <= 0.0 {
            break;
        }
        let candidate = average_along(members, &aligns, cfg.ref_len, dim)?;
        let (cand_aligns, cand_obj) = align_all(members, &candidate)?;
        if cand_obj > objective {
            break;
        }
        let improvement = (objective - cand_obj) / objective;
        center = candidate;
        aligns = cand_aligns;
        objective = cand_obj;
        trace.push(objective);
        iterations_used += 1;
        if improvement <= cfg.tol {
            break;
        }
    }

    Ok(Barycenter {
        values: center,
        objective,
        iterations_used,
        trace,
    })
}

/// Row-normalized warping-matrix product: reference frame `j` receives the
/// mean of the companion rows `i` with `(i, j)` on the path.
///
/// `alignment` must come from `dtw_distance(member_price, reference)`.
pub fn warp_align_companions(
    alignment: &Alignment,
    companions: ArrayView2<'_, f64>,
    ref_len: usize,
) -> Result<Array2<f64>> {
    let len = companions.nrows();
    if let Some(&(i, j)) = alignment
        .path
        .iter()
        .find(|&&(i, j)| i >= len || j >= ref_len)
    {
        return Err(domain(format!(
            "path pair ({i}, {j}) outside {len} x {ref_len}"
        )));
    }
    let mut sum = Array2::<f64>::zeros((ref_len, companions.ncols()));
    let mut count = vec![0usize; ref_len];
    for &(i, j) in &alignment.path {
        let mut row = sum.row_mut(j);
        row += &companions.row(i);
        count[j] += 1;
    }
    for (j, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(Error::Internal(format!("reference frame {j} has no aligned row")));
        }
        sum.row_mut(j).mapv_inplace(|v| v / c as f64);
    }
    Ok(sum)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over every monotone warping path, summed in path order.
    pub(crate) fn brute_force(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        fn local(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                let d = a[[i, k]] - b[[j, k]];
                s += d * d;
            }
            s.sqrt()
        }
        fn walk(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + local(a, b, i, j);
            if i + 1 == a.nrows() && j + 1 == b.nrows() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.nrows() && j + 1 < b.nrows() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
            if i + 1 < a.nrows() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.nrows() {
                walk(a, b, i, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    fn random_matrix(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, dim), |_| rng.random_range(-1.0..1.0))
    }

    fn check_path(al: &Alignment, n: usize, m: usize) {
        assert_eq!(al.path[0], (0, 0));
        assert_eq!(*al.path.last().unwrap(), (n - 1, m - 1));
        for w in al.path.windows(2) {
            let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!(step, (1, 0) | (0, 1) | (1, 1)), "bad step {step:?}");
        }
    }

    #[test]
    fn identical_sequences_cost_zero_on_diagonal() {
        let a = array![[0.0, 1.0], [2.0, 3.0], [4.0, 1.0]];
        let al = dtw_distance(a.view(), a.view()).unwrap();
        assert_eq!(al.cost, 0.0);
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn single_frames() {
        let a = array![[0.0, 0.0]];
        let b = array![[3.0, 4.0]];
        assert_eq!(dtw_distance(a.view(), b.view()).unwrap().cost, 5.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Array2::<f64>::zeros((3, 2));
        let b = Array2::<f64>::zeros((3, 3));
        assert!(dtw_distance(a.view(), b.view()).is_err());
        assert!(dtw_cost(a.view(), b.view()).is_err());
    }

    #[test]
    fn matches_brute_force_and_path_realizes_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let dim = rng.random_range(1..=3);
            let (n, m) = (rng.random_range(1..=7), rng.random_range(1..=7));
            let a = random_matrix(&mut rng, n, dim);
            let b = random_matrix(&mut rng, m, dim);
            let al = dtw_distance(a.view(), b.view()).unwrap();
            assert_eq!(al.cost, brute_force(&a, &b));
            assert_eq!(al.cost, dtw_cost(a.view(), b.view()).unwrap());
            check_path(&al, a.nrows(), b.nrows());
            let along: f64 = al
                .path
                .iter()
                .map(|&(i, j)| frame_distance(a.row(i).as_slice().unwrap(), b.row(j).as_slice().unwrap()))
                .fold(0.0, |s, c| s + c);
            assert!((along - al.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_diagonal_sums_stepwise_norms() {
        // Off-diagonal frames are far apart, so any non-diagonal step costs more.
        let a = array![[0.0], [10.0], [20.0], [30.0]];
        let b = array![[0.5], [10.5], [19.0], [30.25]];
        let al = dtw_distance(a.view(), b.view()).unwrap();
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert!((al.cost - 2.25).abs() < 1e-12);
    }

    #[test]
    fn dba_single_member_is_resampled_member() {
        let m = array![[0.0], [1.0], [0.0], [2.0]];
        let b = dba_barycenter(&[m.view()], DbaConfig { ref_len: 4, ..Default::default() }).unwrap();
        assert_eq!(b.values, m);
        assert_eq!(b.objective, 0.0);

        let b = dba_barycenter(&[m.view()], DbaConfig { ref_len: 7, ..Default::default() }).unwrap();
        assert_eq!(b.values.nrows(), 7);
        assert!(b.objective <= b.trace[0]);
    }

    #[test]
    fn dba_identical_members() {
        let m = array![[0.0, 1.0], [1.0, 0.5], [0.5, 0.0]];
        let b = dba_barycenter(&[m.view(), m.view()], DbaConfig { ref_len: 3, ..Default::default() }).unwrap();
        assert_eq!(b.values, m);
        assert_eq!(b.objective, 0.0);
    }

    #[test]
    fn dba_rejects_empty() {
        assert!(dba_barycenter(&[], DbaConfig::default()).is_err());
    }

    #[test]
    fn dba_noisy_sines_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let members: Vec<Array2<f64>> = (0..3)
            .map(|k| {
                let len = 18 + 2 * k;
                Array2::from_shape_fn((len, 1), |(i, _)| {
                    let x = i as f64 / (len - 1) as f64 * std::f64::consts::TAU;
                    x.sin() + rng.random_range(-0.15..0.15)
                })
            })
            .collect();
        let views: Vec<_> = members.iter().map(|m| m.view()).collect();
        let b = dba_barycenter(&views, DbaConfig { ref_len: 20, max_iter: 10, tol: 0.0 }).unwrap();
        assert!(b.trace.len() >= 4, "trace {:?}", b.trace);
        for w in b.trace[..4].windows(2) {
            assert!(w[1] < w[0], "trace {:?}", b.trace);
        }
        for w in b.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn warp_identity_and_merge() {
        let comp = array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]];
        let diag = Alignment {
            path: vec![(0, 0), (1, 1), (2, 2)],
            cost: 0.0,
        };
        assert_eq!(warp_align_companions(&diag, comp.view(), 3).unwrap(), comp);

        let merge = Alignment {
            path: vec![(0, 0), (1, 0), (2, 1)],
            cost: 0.0,
        };
        let out = warp_align_companions(&merge, comp.view(), 2).unwrap();
        assert_eq!(out, array![[1.5, 15.0], [3.0, 30.0]]);
    }

    #[test]
    fn warp_equals_explicit_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let src = random_matrix(&mut rng, 5, 1);
            let reference = random_matrix(&mut rng, 6, 1);
            let comp = random_matrix(&mut rng, 5, 2);
            let al = dtw_distance(src.view(), reference.view()).unwrap();
            // W[j][i] = 1 if (i, j) on path, then each row scaled to sum 1.
            let mut w = Array2::<f64>::zeros((6, 5));
            for &(i, j) in &al.path {
                w[[j, i]] = 1.0;
            }
            for mut row in w.rows_mut() {
                let s: f64 = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let expected = w.dot(&comp);
            let got = warp_align_companions(&al, comp.view(), 6).unwrap();
            for (g, e) in got.iter().zip(expected.iter()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_self_zero(
            seed in any::<u64>(),
            n in 1usize..12,
            m in 1usize..12,
            dim in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, dim);
            let b = random_matrix(&mut rng, m, dim);
            let ab = dtw_cost(a.view(), b.view()).unwrap();
            let ba = dtw_cost(b.view(), a.view()).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dtw_cost(a.view(), a.view()).unwrap(), 0.0);
        }

        #[test]
        fn warped_companions_stay_in_range(seed in any::<u64>(), n in 2usize..10, r in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_matrix(&mut rng, n, 1);
            let reference = random_matrix(&mut rng, r, 1);
            let comp = random_matrix(&mut rng, n, 2);
            let al = dtw_distance(src.view(), reference.view()).unwrap();
            let out = warp_align_companions(&al, comp.view(), r).unwrap();
            for c in 0..2 {
                let lo = comp.column(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = comp.column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in out.column(c) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }
}
