//! Shapelet-distance features, a calibrated one-vs-rest linear SVM, and the
//! two prediction filters: the Kolmogorov-Smirnov label filter fitted on
//! training data and the top-x% confidence filter applied at inference.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::dtw_cost;
use crate::error::{domain, Error, Result};
use crate::shapelets::Shapelet;

/// Label of a prediction treated as a non-pattern.
pub const NOISE: i64 = -1;

/// Minimum sliding DTW distance from a time-major `L x D` prefix to each
/// shapelet, stride 1.
pub fn featurize(prefix: ArrayView2<'_, f64>, shapelets: &[Shapelet]) -> Result<Vec<f64>> {
    let len = prefix.nrows();
    shapelets
        .iter()
        .map(|s| {
            let shp = s.values.t();
            let lc = shp.nrows();
            if lc > len {
                return Err(domain(format!("shapelet length {lc} exceeds prefix length {len}")));
            }
            let mut best = f64::INFINITY;
            for t in 0..=len - lc {
                best = best.min(dtw_cost(prefix.slice(ndarray::s![t..t + lc, ..]), shp)?);
            }
            Ok(best)
        })
        .collect()
}

pub fn featurize_all(prefixes: &[ArrayView2<'_, f64>], shapelets: &[Shapelet]) -> Result<Vec<Vec<f64>>> {
    prefixes.par_iter().map(|p| featurize(*p, shapelets)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    Platt,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMode {
    /// Empirical CDFs on 100 equal bins over `[0, 1]`.
    Binned,
    /// Exact empirical CDFs of the raw samples.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub c: f64,
    pub iterations: usize,
    pub probability: ProbabilityMode,
    pub ks_alpha: f64,
    pub ks_mode: KsMode,
    /// Share of training subsequences held out to fit the label filter;
    /// 0 fits it in-sample on the classifier's own training data.
    pub ks_holdout: f64,
    pub ks_filter: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            iterations: 2000,
            probability: ProbabilityMode::Platt,
            ks_alpha: 0.05,
            ks_mode: KsMode::Binned,
            ks_holdout: 0.0,
            ks_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternClassifier {
    /// Trained labels in ascending order.
    pub labels: Vec<usize>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Platt `(A, B)`: `P(label | f) = 1 / (1 + exp(A f + B))`.
    pub platt: Vec<(f64, f64)>,
    pub probability: ProbabilityMode,
    pub discarded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probabilities over `PatternClassifier::labels`.
    pub probs: Vec<f64>,
    pub p_max: f64,
    /// Pattern label, or [`NOISE`].
    pub label: i64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `0.5 |w|^2 + c * mean(hinge)` by full-batch subgradient descent
/// with step `1/t`; the bias is unregularized. Returns the best iterate.
pub fn train_binary_svm(x: &[Vec<f64>], y: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let dim = x[0].len();
    let objective = |w: &[f64], b: f64| -> f64 {
        let hinge: f64 = x.iter().zip(y).map(|(xi, yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0)).sum();
        0.5 * dot(w, w) + c * hinge / n
    };
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = (w.clone(), b, objective(&w, b));
    for t in 1..=iterations {
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            if yi * (dot(&w, xi) + b) < 1.0 {
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g -= c * yi * v / n;
                }
                gb -= c * yi / n;
            }
        }
        let eta = 1.0 / t as f64;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= eta * g;
        }
        b -= eta * gb;
        let obj = objective(&w, b);
        if obj < best.2 {
            best = (w.clone(), b, obj);
        }
    }
    (best.0, best.1)
}

/// Platt scaling by Newton's method with regularized targets.
pub fn fit_platt(decision: &[f64], positive: &[bool]) -> (f64, f64) {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let fval = |a: f64, b: f64| -> f64 {
        decision
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut fv = fval(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in decision.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = fval(na, nb);
            if nf < fv + 1e-4 * step * gd {
                a = na;
                b = nb;
                fv = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

fn sigmoid_platt(f: f64, (a, b): (f64, f64)) -> f64 {
    let z = a * f + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl PatternClassifier {
    pub fn train(features: &[Vec<f64>], labels: &[usize], cfg: &ClassifierConfig) -> Result<Self> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(domain("features and labels must be non-empty and aligned"));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(domain("feature vectors must share a non-zero dimension"));
        }
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(domain("classifier needs at least two labels"));
        }
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..dim)
            .map(|j| {
                let v = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let x: Vec<Vec<f64>> = features
            .iter()
            .map(|f| f.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let fits: Vec<(Vec<f64>, f64, (f64, f64))> = classes
            .par_iter()
            .map(|&k| {
                let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
                let (w, b) = train_binary_svm(&x, &y, cfg.c, cfg.iterations);
                let dec: Vec<f64> = x.iter().map(|xi| dot(&w, xi) + b).collect();
                let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
                let platt = fit_platt(&dec, &pos);
                (w, b, platt)
            })
            .collect();
        Ok(Self {
            labels: classes,
            feature_mean: mean,
            feature_std: std,
            weights: fits.iter().map(|f| f.0.clone()).collect(),
            bias: fits.iter().map(|f| f.1).collect(),
            platt: fits.iter().map(|f| f.2).collect(),
            probability: cfg.probability,
            discarded: Vec::new(),
        })
    }

    pub fn decision(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.feature_mean.len() {
            return Err(domain(format!(
                "feature vector has {} entries, classifier expects {}",
                phi.len(),
                self.feature_mean.len()
            )));
        }
        let x: Vec<f64> = phi
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Ok(self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, &x) + b).collect())
    }

    /// Labels not discarded by the K-S filter.
    pub fn active_labels(&self) -> Vec<usize> {
        self.labels.iter().copied().filter(|l| !self.discarded.contains(l)).collect()
    }

    /// Probabilities over all trained labels; the argmax (lowest label on
    /// ties) maps to [`NOISE`] when that label is discarded.
    pub fn predict_proba(&self, phi: &[f64]) -> Result<Prediction> {
        let dec = self.decision(phi)?;
        let raw: Vec<f64> = match self.probability {
            ProbabilityMode::Platt => dec.iter().zip(&self.platt).map(|(&f, &p)| sigmoid_platt(f, p)).collect(),
            ProbabilityMode::Softmax => {
                let m = dec.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                dec.iter().map(|d| (d - m).exp()).collect()
            }
        };
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = if total > 0.0 {
            raw.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        let mut best = 0;
        for k in 1..probs.len() {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        let lab = self.labels[best];
        Ok(Prediction {
            p_max: probs[best],
            probs,
            label: if self.discarded.contains(&lab) { NOISE } else { lab as i64 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Kolmogorov survival function `Q(lambda) = P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Complementary theta-function form converges fast for small lambda.
        let c = -PI2 / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2)).map(|m| (c * m).exp()).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

fn ecdf_at(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Two-sample K-S statistic with the asymptotic p-value at
/// `lambda = sqrt(n_a n_b / (n_a + n_b)) * D`.
pub fn ks_two_sample(a: &[f64], b: &[f64], mode: KsMode) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(domain("K-S test needs two non-empty samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let points: Vec<f64> = match mode {
        KsMode::Binned => (1..=100).map(|k| k as f64 / 100.0).collect(),
        KsMode::Raw => sa.iter().chain(&sb).copied().collect(),
    };
    let d = points
        .iter()
        .map(|&x| (ecdf_at(&sa, x) - ecdf_at(&sb, x)).abs())
        .fold(0.0, f64::max);
    let n_eff = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let p = if d == 0.0 { 1.0 } else { kolmogorov_q(n_eff.sqrt() * d) };
    Ok(KsResult { d, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub label: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub d: Option<f64>,
    pub p: Option<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub alpha: f64,
    pub entries: Vec<KsEntry>,
}

/// Discards every label whose correct and incorrect `p_max` distributions
/// are indistinguishable (`p > alpha`) or for which one side is empty.
pub fn ks_label_filter(
    mut clf: PatternClassifier,
    eval: &[(Prediction, usize)],
    alpha: f64,
    mode: KsMode,
) -> Result<(PatternClassifier, KsReport)> {
    let mut entries = Vec::new();
    let mut discarded = Vec::new();
    for (k, &label) in clf.labels.iter().enumerate() {
        let (mut good, mut bad) = (Vec::new(), Vec::new());
        for (pred, truth) in eval {
            let argmax = (0..pred.probs.len())
                .fold(0, |b, i| if pred.probs[i] > pred.probs[b] { i } else { b });
            if argmax == k {
                if *truth == label {
                    good.push(pred.p_max);
                } else {
                    bad.push(pred.p_max);
                }
            }
        }
        let (d, p, kept) = if good.is_empty() || bad.is_empty() {
            log::warn!(
                "label {label}: {} correct and {} incorrect held-out predictions; discarded",
                good.len(),
                bad.len()
            );
            (None, None, false)
        } else {
            let r = ks_two_sample(&good, &bad, mode)?;
            (Some(r.d), Some(r.p), r.p <= alpha)
        };
        if !kept {
            discarded.push(label);
        }
        entries.push(KsEntry {
            label,
            n_correct: good.len(),
            n_incorrect: bad.len(),
            d,
            p,
            kept,
        });
    }
    clf.discarded = discarded;
    Ok((clf, KsReport { alpha, entries }))
}

/// Keeps the `ceil(x/100 * N)` non-noise predictions of highest `p_max`
/// (earlier index first on ties) and relabels the rest as noise.
pub fn apply_confidence_threshold(preds: &[Prediction], x_percent: f64) -> Result<Vec<Prediction>> {
    if !(x_percent > 0.0 && x_percent <= 100.0) {
        return Err(Error::Config(format!("top-x percentage must lie in (0, 100], got {x_percent}")));
    }
    let mut idx: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].label != NOISE).collect();
    let keep = ((x_percent / 100.0 * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    idx.sort_by(|&a, &b| preds[b].p_max.total_cmp(&preds[a].p_max).then(a.cmp(&b)));
    let retained: std::collections::BTreeSet<usize> = idx.into_iter().take(keep).collect();
    Ok(preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut q = p.clone();
            if !retained.contains(&i) {
                q.label = NOISE;
            }
            q
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapelets::SegmentRef;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn shp(values: Array2<f64>) -> Shapelet {
        Shapelet {
            values,
            source: SegmentRef { subsequence: 0, alpha: 0.2, start: 0 },
            cluster_size: 1,
            purity: 1.0,
            majority_label: 0,
            utility: 0.0,
        }
    }

    #[test]
    fn featurize_exact_and_constant() {
        let prefix = Array2::from_shape_fn((12, 2), |(t, c)| ((t * 3 + c) % 5) as f64);
        let cut = prefix.slice(ndarray::s![5..9, ..]).t().to_owned();
        assert_eq!(featurize(prefix.view(), &[shp(cut)]).unwrap(), vec![0.0]);
        let flat = Array2::from_elem((12, 2), 0.5);
        assert_eq!(featurize(flat.view(), &[shp(Array2::from_elem((2, 4), 0.5))]).unwrap(), vec![0.0]);
        assert!(featurize(flat.view(), &[shp(Array2::from_elem((2, 13), 0.5))]).is_err());
    }

    #[test]
    fn featurize_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let prefix = Array2::from_shape_fn((12, 3), |_| rng.random_range(0.0..1.0));
            let s = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.0..1.0));
            let mut best = f64::INFINITY;
            for t in 0..=8 {
                let w = prefix.slice(ndarray::s![t..t + 4, ..]).to_owned();
                best = best.min(crate::dtw::tests::brute_force(&w, &s.t().to_owned()));
            }
            assert_eq!(featurize(prefix.view(), &[shp(s)]).unwrap()[0], best);
        }
    }

    fn blobs(n_per: usize, centers: &[[f64; 2]], sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, sigma).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n_per * centers.len() {
            let k = i % centers.len();
            x.push(vec![centers[k][0] + z.sample(&mut rng), centers[k][1] + z.sample(&mut rng)]);
            y.push(k);
        }
        (x, y)
    }

    fn accuracy(clf: &PatternClassifier, x: &[Vec<f64>], y: &[usize]) -> f64 {
        x.iter().zip(y).filter(|(xi, &yi)| clf.predict_proba(xi).unwrap().label == yi as i64).count() as f64 / x.len() as f64
    }

    #[test]
    fn separable_two_label() {
        let (x, y) = blobs(30, &[[0.0, 0.0], [5.0, 5.0]], 0.5, 1);
        let clf = PatternClassifier::train(&x, &y, &ClassifierConfig::default()).unwrap();
        assert_eq!(accuracy(&clf, &x, &y), 1.0);
        let far = clf.predict_proba(&[-2.0, -2.0]).unwrap();
        assert_eq!(far.label, 0);
        assert!(far.p_max > 0.9, "{far:?}");
        assert!(PatternClassifier::train(&x, &vec![0; x.len()], &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn duplicated_data_same_direction() {
        let (x, y) = blobs(20, &[[0.0, 0.0], [3.0, 1.0]], 1.0, 2);
        let cfg = ClassifierConfig::default();
        let a = PatternClassifier::train(&x, &y, &cfg).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let b = PatternClassifier::train(&x2, &y2, &cfg).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            let na = dot(wa, wa).sqrt();
            let nb = dot(wb, wb).sqrt();
            for (u, v) in wa.iter().zip(wb) {
                assert!((u / na - v / nb).abs() < 1e-6);
            }
        }
    }

    /// Stochastic Pegasos, written independently of the batch trainer.
    fn pegasos_accuracy(x: &[Vec<f64>], y: &[usize], classes: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let lambda = 0.01;
        let mut models = Vec::new();
        for k in 0..classes {
            let mut w = [0.0; 3];
            for t in 1..=20000 {
                let i = rng.random_range(0..x.len());
                let xi = [x[i][0], x[i][1], 1.0];
                let yi = if y[i] == k { 1.0 } else { -1.0 };
                let eta = 1.0 / (lambda * t as f64);
                let margin = yi * (w[0] * xi[0] + w[1] * xi[1] + w[2] * xi[2]);
                for j in 0..3 {
                    w[j] *= 1.0 - eta * lambda;
                    if margin < 1.0 {
                        w[j] += eta * yi * xi[j];
                    }
                }
            }
            models.push(w);
        }
        let correct = x
            .iter()
            .zip(y)
            .filter(|(xi, &yi)| {
                let s: Vec<f64> = models.iter().map(|w| w[0] * xi[0] + w[1] * xi[1] + w[2]).collect();
                (0..classes).fold(0, |b, k| if s[k] > s[b] { k } else { b }) == yi
            })
            .count();
        correct as f64 / x.len() as f64
    }

    #[test]
    fn three_blobs_against_reference() {
        let (x, y) = blobs(40, &[[0.0, 0.0], [4.0, 0.0], [2.0, 4.0]], 0.6, 5);
        let clf = PatternClassifier::train(&x, &y, &ClassifierConfig::default()).unwrap();
        let acc = accuracy(&clf, &x, &y);
        assert!(acc >= 0.95, "{acc}");
        assert!((acc - pegasos_accuracy(&x, &y, 3)).abs() <= 0.02);
    }

    #[test]
    fn symmetric_input_ties_to_lower_label() {
        let clf = PatternClassifier {
            labels: vec![0, 1],
            feature_mean: vec![0.0],
            feature_std: vec![1.0],
            weights: vec![vec![1.0], vec![-1.0]],
            bias: vec![0.0, 0.0],
            platt: vec![(-1.0, 0.0), (-1.0, 0.0)],
            probability: ProbabilityMode::Platt,
            discarded: vec![],
        };
        let p = clf.predict_proba(&[0.0]).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
        assert_eq!(p.label, 0);
        let d = PatternClassifier { discarded: vec![1], ..clf.clone() };
        assert_eq!(d.predict_proba(&[-3.0]).unwrap().label, NOISE);
        assert_eq!(d.active_labels(), vec![0]);
        assert!(clf.predict_proba(&[0.0, 1.0]).is_err());
    }

    /// Direct CDF sweep and the 1000-term alternating series.
    fn ks_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
        let mut d: f64 = 0.0;
        for k in 1..=100 {
            let x = k as f64 / 100.0;
            let fa = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
            d = d.max((fa - fb).abs());
        }
        let lam = ((a.len() * b.len()) as f64 / (a.len() + b.len()) as f64).sqrt() * d;
        let mut s = 0.0;
        for k in 1..=1000 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            s += sign * (-2.0 * (k as f64).powi(2) * lam * lam).exp();
        }
        (d, if d == 0.0 { 1.0 } else { (2.0 * s).clamp(0.0, 1.0) })
    }

    #[test]
    fn ks_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let shift = rng.random_range(0.0..0.3);
            let b: Vec<f64> = (0..50).map(|_| (rng.random_range(0.0f64..1.0) + shift).min(1.0)).collect();
            let r = ks_two_sample(&a, &b, KsMode::Binned).unwrap();
            let (d, p) = ks_oracle(&a, &b);
            assert_eq!(r.d, d);
            assert!((r.p - p).abs() < 1e-3, "{} vs {p}", r.p);
        }
    }

    #[test]
    fn ks_degenerate_cases() {
        let a = vec![0.2, 0.4, 0.9];
        assert_eq!(ks_two_sample(&a, &a, KsMode::Binned).unwrap(), KsResult { d: 0.0, p: 1.0 });
        let lo: Vec<f64> = (0..500).map(|i| i as f64 / 1000.0).collect();
        let hi: Vec<f64> = (0..500).map(|i| 0.5 + 0.001 + i as f64 / 1000.0).collect();
        let r = ks_two_sample(&lo, &hi, KsMode::Binned).unwrap();
        assert!(r.d > 0.98 && r.p < 1e-10);
        assert!(ks_two_sample(&[], &a, KsMode::Raw).is_err());
    }

    proptest! {
        #[test]
        fn ks_raw_invariant_under_monotone_maps(a in proptest::collection::vec(0.0f64..1.0, 1..30), b in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let f = |v: &f64| v.powi(3) * 2.0 + 0.1;
            let r0 = ks_two_sample(&a, &b, KsMode::Raw).unwrap();
            let r1 = ks_two_sample(&a.iter().map(f).collect::<Vec<_>>(), &b.iter().map(f).collect::<Vec<_>>(), KsMode::Raw).unwrap();
            prop_assert_eq!(r0.d, r1.d);
            prop_assert!((0.0..=1.0).contains(&r0.d) && (0.0..=1.0).contains(&r0.p));
        }

        #[test]
        fn confidence_filter_nests(ps in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 0..40)) {
            let preds: Vec<Prediction> = ps.iter().map(|&(p, noise)| Prediction { probs: vec![p], p_max: p, label: if noise { NOISE } else { 0 } }).collect();
            let kept = |x: f64| -> Vec<bool> { apply_confidence_threshold(&preds, x).unwrap().iter().map(|p| p.label != NOISE).collect() };
            let levels = [20.0, 60.0, 80.0, 100.0];
            for w in levels.windows(2) {
                let (a, b) = (kept(w[0]), kept(w[1]));
                prop_assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
            }
            let full = kept(100.0);
            prop_assert_eq!(full, preds.iter().map(|p| p.label != NOISE).collect::<Vec<_>>());
        }
    }

    #[test]
    fn confidence_filter_counts() {
        let preds: Vec<Prediction> = (0..10).map(|i| Prediction { probs: vec![], p_max: i as f64 / 10.0, label: 0 }).collect();
        let out = apply_confidence_threshold(&preds, 20.0).unwrap();
        let kept: Vec<usize> = (0..10).filter(|&i| out[i].label != NOISE).collect();
        assert_eq!(kept, vec![8, 9]);
        assert!(apply_confidence_threshold(&preds, 0.0).is_err());
        assert!(apply_confidence_threshold(&preds, 101.0).is_err());
    }

    #[test]
    fn label_filter_decisions() {
        let clf = PatternClassifier {
            labels: vec![0, 1],
            feature_mean: vec![0.0],
            feature_std: vec![1.0],
            weights: vec![vec![1.0], vec![-1.0]],
            bias: vec![0.0, 0.0],
            platt: vec![(-1.0, 0.0), (-1.0, 0.0)],
            probability: ProbabilityMode::Platt,
            discarded: vec![],
        };
        let pred = |k: usize, p: f64| {
            let mut probs = vec![1.0 - p, 1.0 - p];
            probs[k] = p;
            Prediction { probs, p_max: p, label: k as i64 }
        };
        let mut eval = Vec::new();
        for _ in 0..30 {
            eval.push((pred(0, 0.9), 0));
            eval.push((pred(0, 0.55), 1));
            eval.push((pred(1, 0.7), 1));
            eval.push((pred(1, 0.7), 0));
        }
        let (clf, rep) = ks_label_filter(clf, &eval, 0.05, KsMode::Binned).unwrap();
        assert!(rep.entries[0].kept && rep.entries[0].p.unwrap() < 1e-6);
        assert!(!rep.entries[1].kept && rep.entries[1].p == Some(1.0));
        assert_eq!(clf.discarded, vec![1]);
        let (_, rep) = ks_label_filter(clf, &eval[..1], 0.05, KsMode::Binned).unwrap();
        assert!(rep.entries.iter().all(|e| !e.kept));
    }
}
