//! Contrastive encoder for pattern prefixes.
//!
//! Each training subsequence is cut to its leading `gamma` fraction,
//! resampled to `interp_len` steps and normalized, then sliced into windows
//! of length `alpha * interp_len` for every `alpha`. Within one
//! (subsequence, alpha) pair the windows are split by DTW 2-means and one
//! triplet is mined per cluster. The network is trained with Adam on the
//! log-ratio triplet loss; mining happens once, before training.

pub mod loss;
pub mod mining;
pub mod network;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StageRng;

pub use loss::{triplet_loss, triplet_loss_grad, triplet_terms, LossGrad, LossTerms};
pub use mining::{dtw_kmeans2, prefix_and_interpolate, prefix_len, select_triplets, slice_multiscale, window_len, Triplet};
pub use network::{backward, Architecture, EncoderParams, Forward, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub gamma: f64,
    pub interp_len: usize,
    pub alphas: Vec<f64>,
    pub slice_stride: usize,
    pub emb_dim: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub epsilon: f64,
    pub soft_margin: f64,
    pub lr: f64,
    pub epochs: usize,
    /// (subsequence, alpha) pairs per optimizer step.
    pub batch_size: usize,
    pub kmeans_max_iter: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            interp_len: 100,
            alphas: vec![0.2, 0.4, 0.6],
            slice_stride: 5,
            emb_dim: 64,
            conv_channels: 32,
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            epsilon: 1e-6,
            soft_margin: 0.2,
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            kmeans_max_iter: 10,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("encoder.gamma must lie in (0, 1)");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return bad("every encoder.alphas entry must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.soft_margin > 0.0) {
            return bad("encoder.epsilon and encoder.soft_margin must be > 0");
        }
        if self.interp_len < 2 || self.slice_stride == 0 || self.batch_size == 0 {
            return bad("encoder.interp_len >= 2, encoder.slice_stride >= 1 and encoder.batch_size >= 1 required");
        }
        if !(self.lr > 0.0) {
            return bad("encoder.lr must be > 0");
        }
        for &a in &self.alphas {
            if window_len(a, self.interp_len) < self.kernel_size.max(2) {
                return bad("encoder window alpha * interp_len is shorter than the kernel");
            }
        }
        Ok(())
    }

    pub fn architecture(&self, in_channels: usize) -> Architecture {
        Architecture {
            in_channels,
            conv_channels: self.conv_channels,
            kernel_size: self.kernel_size,
            dilations: self.dilations.clone(),
            emb_dim: self.emb_dim,
        }
    }
}

/// Mined windows of one (subsequence, alpha) pair with their triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub subsequence: usize,
    pub alpha: f64,
    pub windows: Vec<Array2<f64>>,
    pub triplets: Vec<Triplet>,
}

/// Builds the training samples. Pairs without a usable triplet are dropped.
pub fn prepare_samples(subsequences: &[ArrayView2<'_, f64>], cfg: &EncoderConfig, rng: &mut StageRng) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (si, sub) in subsequences.iter().enumerate() {
        let prefix = prefix_and_interpolate(*sub, cfg.gamma, cfg.interp_len)?;
        for &alpha in &cfg.alphas {
            let windows = slice_multiscale(prefix.view(), alpha, cfg.slice_stride)?;
            if windows.len() < 2 {
                continue;
            }
            let labels = dtw_kmeans2(&windows, cfg.kmeans_max_iter, rng)?;
            let triplets = select_triplets(&windows, &labels)?;
            if !triplets.is_empty() {
                out.push(TrainingSample {
                    subsequence: si,
                    alpha,
                    windows,
                    triplets,
                });
            }
        }
    }
    Ok(out)
}

/// Mean triplet loss of one sample and its parameter gradient.
pub fn sample_loss_grad(params: &EncoderParams, sample: &TrainingSample, cfg: &EncoderConfig) -> Result<(f64, Vec<f64>)> {
    let fwd: Vec<Forward> = sample
        .windows
        .iter()
        .map(|w| params.forward(w.view()))
        .collect::<Result<_>>()?;
    let mut d_emb = vec![vec![0.0; params.arch.emb_dim]; sample.windows.len()];
    let mut total = 0.0;
    let scale = 1.0 / sample.triplets.len() as f64;
    for t in &sample.triplets {
        let pick = |ix: &[usize]| ix.iter().map(|&i| fwd[i].emb.clone()).collect::<Vec<_>>();
        let g = triplet_loss_grad(&fwd[t.anchor].emb, &pick(&t.positives), &pick(&t.negatives), cfg.epsilon, cfg.soft_margin)?;
        total += g.loss * scale;
        let mut add = |i: usize, v: &[f64]| {
            for (a, b) in d_emb[i].iter_mut().zip(v) {
                *a += scale * b;
            }
        };
        add(t.anchor, &g.anchor);
        for (&i, v) in t.positives.iter().zip(&g.positives) {
            add(i, v);
        }
        for (&i, v) in t.negatives.iter().zip(&g.negatives) {
            add(i, v);
        }
    }
    let mut grad = vec![0.0; params.theta.len()];
    for (f, d) in fwd.iter().zip(&d_emb) {
        if d.iter().any(|&v| v != 0.0) {
            backward(params, f, d, &mut grad)?;
        }
    }
    Ok((total, grad))
}

/// Mean loss over `samples` (no gradient).
pub fn mean_loss(params: &EncoderParams, samples: &[TrainingSample], cfg: &EncoderConfig) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| sample_loss_grad(params, s, cfg).map(|x| x.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean loss and gradient over a batch, summed in sample order.
pub fn batch_loss_grad(params: &EncoderParams, batch: &[&TrainingSample], cfg: &EncoderConfig) -> Result<(f64, Vec<f64>)> {
    let parts = batch
        .par_iter()
        .map(|s| sample_loss_grad(params, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut grad = vec![0.0; params.theta.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub n_samples: usize,
}

/// Trains from time-major `len x D` subsequences.
pub fn train_encoder(subsequences: &[ArrayView2<'_, f64>], cfg: &EncoderConfig, rng: &mut StageRng) -> Result<TrainedEncoder> {
    cfg.validate()?;
    let dim = subsequences
        .first()
        .ok_or_else(|| Error::Pipeline("encoder training needs at least one subsequence".into()))?
        .ncols();
    let samples = prepare_samples(subsequences, cfg, rng)?;
    if samples.is_empty() {
        return Err(Error::Pipeline("no valid triplets could be mined".into()));
    }
    let mut params = EncoderParams::init(cfg.architecture(dim), rng)?;
    train_on_samples(&mut params, &samples, cfg, rng).map(|loss_trace| TrainedEncoder {
        params,
        loss_trace,
        n_samples: samples.len(),
    })
}

/// Runs `cfg.epochs` of shuffled mini-batch Adam; returns per-epoch loss.
pub fn train_on_samples(params: &mut EncoderParams, samples: &[TrainingSample], cfg: &EncoderConfig, rng: &mut StageRng) -> Result<Vec<f64>> {
    let mut adam = Adam::new(params.theta.len(), cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (l, g) = batch_loss_grad(params, &batch, cfg)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Pipeline(format!("non-finite loss or gradient in epoch {}", epoch + 1)));
            }
            adam.step(&mut params.theta, &g);
            sum += l;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::info!("encoder epoch {}: loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    Ok(trace)
}
