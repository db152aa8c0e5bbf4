use ndarray::Array2;
use patternforge::dtw::{dtw_cost, dtw_distance};
use patternforge::rng::substream;
use patternforge::simpc::{greedy_assign_pass, normalized_window, run_simpc, SimpcConfig};
use patternforge::synth::{planted_motif_series, MotifPlan};
use proptest::prelude::*;

fn small_plan() -> MotifPlan {
    MotifPlan {
        length: 600,
        ..MotifPlan::default()
    }
}

fn small_cfg() -> SimpcConfig {
    SimpcConfig {
        kappa: 5,
        iterations: 2,
        ..SimpcConfig::default()
    }
}

#[test]
fn clustering_is_reproducible_for_a_seed() {
    let planted = planted_motif_series(&small_plan(), 3);
    let cfg = small_cfg();
    let a = run_simpc(planted.values.view(), vec![], &cfg, &mut substream(3, "simpc")).unwrap();
    let b = run_simpc(planted.values.view(), vec![], &cfg, &mut substream(3, "simpc")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn members_are_disjoint_and_within_length_bounds() {
    let planted = planted_motif_series(&small_plan(), 11);
    let cfg = small_cfg();
    let out = run_simpc(planted.values.view(), vec![], &cfg, &mut substream(11, "simpc")).unwrap();
    assert!(out.clusters.p_prime() <= cfg.p);
    let mut spans: Vec<(usize, usize)> = out
        .clusters
        .members
        .iter()
        .flatten()
        .map(|m| (m.start, m.start + m.length))
        .collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        assert!(w[0].1 <= w[1].0, "overlap {:?}", w);
    }
    for &(s, e) in &spans {
        assert!((cfg.l_min..=cfg.l_max).contains(&(e - s)));
        assert!(e <= planted.values.nrows());
    }
}

#[test]
fn every_assignment_respects_the_threshold() {
    let planted = planted_motif_series(&small_plan(), 5);
    let cfg = small_cfg();
    let centroid = normalized_window(planted.values.view(), 40, 20);
    let hits = greedy_assign_pass(planted.values.view(), &[centroid.clone()], &cfg).unwrap();
    for h in &hits {
        let w = normalized_window(planted.values.view(), h.start, h.length);
        let d = cfg.distance(w.view(), centroid.view()).unwrap();
        assert_eq!(d, h.distance);
        assert!(d <= cfg.delta);
    }
}

fn matrix(rows: usize, dim: usize, xs: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |(i, c)| xs[(i * dim + c) % xs.len()])
}

proptest! {
    #[test]
    fn dtw_is_symmetric_and_path_cost_matches(
        n in 1usize..12,
        m in 1usize..12,
        xs in prop::collection::vec(-5.0f64..5.0, 4..40),
        ys in prop::collection::vec(-5.0f64..5.0, 4..40),
    ) {
        let a = matrix(n, 2, &xs);
        let b = matrix(m, 2, &ys);
        let ab = dtw_distance(a.view(), b.view()).unwrap();
        let ba = dtw_cost(b.view(), a.view()).unwrap();
        prop_assert!((ab.cost - ba).abs() <= 1e-9 * (1.0 + ab.cost));
        prop_assert_eq!(ab.cost, dtw_cost(a.view(), b.view()).unwrap());
        prop_assert_eq!(ab.path.first().copied(), Some((0, 0)));
        prop_assert_eq!(ab.path.last().copied(), Some((n - 1, m - 1)));
        prop_assert_eq!(dtw_cost(a.view(), a.view()).unwrap(), 0.0);
    }
}
