//! Log-ratio triplet loss on embeddings.
//!
//! `loss = ln((d_ap + d_intra+ + d_intra-) / (d_an + eps) + margin)` where
//! `d_ap` and `d_an` are mean Euclidean distances from the anchor to the
//! positives and negatives and `d_intra` is the mean over all ordered pairs
//! within a set.

use crate::error::{domain, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unit vector `(a - b)/|a - b|`, zero when the points coincide.
fn unit(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = dist(a, b);
    if n == 0.0 {
        vec![0.0; a.len()]
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y) / n).collect()
    }
}

fn mean_to(a: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter().map(|z| dist(a, z)).sum::<f64>() / set.len() as f64
}

fn intra(set: &[Vec<f64>]) -> f64 {
    let n = set.len() as f64;
    let mut s = 0.0;
    for a in set {
        for b in set {
            s += dist(a, b);
        }
    }
    s / (n * n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub d_ap: f64,
    pub d_an: f64,
    pub d_intra_pos: f64,
    pub d_intra_neg: f64,
    pub loss: f64,
}

pub fn triplet_terms(
    anchor: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    epsilon: f64,
    margin: f64,
) -> Result<LossTerms> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(domain("triplet loss needs at least one positive and one negative"));
    }
    let d_ap = mean_to(anchor, positives);
    let d_an = mean_to(anchor, negatives);
    let d_intra_pos = intra(positives);
    let d_intra_neg = intra(negatives);
    let loss = ((d_ap + d_intra_pos + d_intra_neg) / (d_an + epsilon) + margin).ln();
    Ok(LossTerms {
        d_ap,
        d_an,
        d_intra_pos,
        d_intra_neg,
        loss,
    })
}

pub fn triplet_loss(anchor: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], epsilon: f64, margin: f64) -> Result<f64> {
    Ok(triplet_terms(anchor, positives, negatives, epsilon, margin)?.loss)
}

/// Loss and its gradient with respect to every embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Gradient of the mean ordered-pair distance with respect to each member.
fn intra_grad(set: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    let n = set.len() as f64;
    let mut g = vec![vec![0.0; set[0].len()]; set.len()];
    for i in 0..set.len() {
        for j in 0..set.len() {
            if i != j {
                add_scaled(&mut g[i], &unit(&set[i], &set[j]), 2.0 * scale / (n * n));
            }
        }
    }
    g
}

pub fn triplet_loss_grad(
    anchor: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    epsilon: f64,
    margin: f64,
) -> Result<LossGrad> {
    let t = triplet_terms(anchor, positives, negatives, epsilon, margin)?;
    let num = t.d_ap + t.d_intra_pos + t.d_intra_neg;
    let den = t.d_an + epsilon;
    let inner = num / den + margin;
    let d_num = 1.0 / (inner * den);
    let d_den = -num / (den * den * inner);

    let mut ga = vec![0.0; anchor.len()];
    let mut gp = intra_grad(positives, d_num);
    let mut gn = intra_grad(negatives, d_num);
    let np = positives.len() as f64;
    for (p, g) in positives.iter().zip(gp.iter_mut()) {
        let u = unit(anchor, p);
        add_scaled(&mut ga, &u, d_num / np);
        add_scaled(g, &u, -d_num / np);
    }
    let nn = negatives.len() as f64;
    for (n, g) in negatives.iter().zip(gn.iter_mut()) {
        let u = unit(anchor, n);
        add_scaled(&mut ga, &u, d_den / nn);
        add_scaled(g, &u, -d_den / nn);
    }
    Ok(LossGrad {
        loss: t.loss,
        anchor: ga,
        positives: gp,
        negatives: gn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_numerator_cases() {
        let a = vec![0.0, 0.0];
        let l = triplet_loss(&a, &[a.clone(), a.clone()], &[vec![1.0, 0.0], vec![1.0, 0.0]], 1e-6, 0.2).unwrap();
        assert!((l - 0.2f64.ln()).abs() < 1e-12);
        let l = triplet_loss(&[0.0], &[vec![0.0]], &[vec![2.0]], 1e-6, 0.2).unwrap();
        assert!((l - 0.2f64.ln()).abs() < 1e-12);
        assert!((0.2f64.ln() + 1.6094).abs() < 1e-4);
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(triplet_loss(&[0.0], &[], &[vec![1.0]], 1e-6, 0.2).is_err());
        assert!(triplet_loss(&[0.0], &[vec![1.0]], &[], 1e-6, 0.2).is_err());
    }

    /// Scalar restatement of the formula with explicit loops.
    fn scalar_oracle(a: &[f64], p: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
        let d = |x: &[f64], y: &[f64]| -> f64 {
            let mut s = 0.0;
            for k in 0..x.len() {
                s += (x[k] - y[k]).powi(2);
            }
            s.sqrt()
        };
        let mut dap = 0.0;
        for q in p {
            dap += d(a, q);
        }
        dap /= p.len() as f64;
        let mut dan = 0.0;
        for q in n {
            dan += d(a, q);
        }
        dan /= n.len() as f64;
        let mut ip = 0.0;
        for x in p {
            for y in p {
                ip += d(x, y);
            }
        }
        ip /= (p.len() * p.len()) as f64;
        let mut inn = 0.0;
        for x in n {
            for y in n {
                inn += d(x, y);
            }
        }
        inn /= (n.len() * n.len()) as f64;
        ((dap + ip + inn) / (dan + 1e-6) + 0.2).ln()
    }

    #[test]
    fn matches_scalar_oracle_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..4).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let a = v(&mut rng);
            let p: Vec<Vec<f64>> = (0..3).map(|_| v(&mut rng)).collect();
            let n: Vec<Vec<f64>> = (0..2).map(|_| v(&mut rng)).collect();
            let g = triplet_loss_grad(&a, &p, &n, 1e-6, 0.2).unwrap();
            assert!((g.loss - scalar_oracle(&a, &p, &n)).abs() < 1e-12);
            let h = 1e-6;
            let fd = |a: &[f64], p: &[Vec<f64>], n: &[Vec<f64>]| triplet_loss(a, p, n, 1e-6, 0.2).unwrap();
            for k in 0..4 {
                let mut ap = a.clone();
                ap[k] += h;
                let mut am = a.clone();
                am[k] -= h;
                let num = (fd(&ap, &p, &n) - fd(&am, &p, &n)) / (2.0 * h);
                assert!((num - g.anchor[k]).abs() < 1e-6);
                let mut pp = p.clone();
                pp[1][k] += h;
                let mut pm = p.clone();
                pm[1][k] -= h;
                let num = (fd(&a, &pp, &n) - fd(&a, &pm, &n)) / (2.0 * h);
                assert!((num - g.positives[1][k]).abs() < 1e-6);
                let mut np_ = n.clone();
                np_[0][k] += h;
                let mut nm = n.clone();
                nm[0][k] -= h;
                let num = (fd(&a, &p, &np_) - fd(&a, &p, &nm)) / (2.0 * h);
                assert!((num - g.negatives[0][k]).abs() < 1e-6);
            }
        }
    }

    fn rotate(v: &[f64], th: f64) -> Vec<f64> {
        vec![v[0] * th.cos() - v[1] * th.sin(), v[0] * th.sin() + v[1] * th.cos()]
    }

    proptest! {
        #[test]
        fn rotation_invariant(th in -3.0f64..3.0, pts in proptest::collection::vec(-2.0f64..2.0, 10)) {
            let a = vec![pts[0], pts[1]];
            let p = vec![vec![pts[2], pts[3]], vec![pts[4], pts[5]]];
            let n = vec![vec![pts[6], pts[7]], vec![pts[8], pts[9]]];
            let l0 = triplet_loss(&a, &p, &n, 1e-6, 0.2).unwrap();
            let r = |s: &Vec<Vec<f64>>| s.iter().map(|v| rotate(v, th)).collect::<Vec<_>>();
            let l1 = triplet_loss(&rotate(&a, th), &r(&p), &r(&n), 1e-6, 0.2).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_ap_and_an(x in 0.1f64..3.0, dx in 0.01f64..1.0) {
            let a = vec![0.0];
            let n = vec![vec![2.0]];
            let l = |px: f64, nx: f64| triplet_loss(&a, &[vec![px]], &[vec![nx]], 1e-6, 0.2).unwrap();
            prop_assert!(l(x + dx, 2.0) > l(x, 2.0));
            prop_assert!(l(x, 2.0 + dx) < l(x, 2.0));
            let t = triplet_terms(&a, &[vec![x]], &n, 1e-6, 0.2).unwrap();
            prop_assert!(t.d_ap >= 0.0 && t.d_an >= 0.0 && t.d_intra_pos >= 0.0 && t.d_intra_neg >= 0.0);
        }
    }
}
