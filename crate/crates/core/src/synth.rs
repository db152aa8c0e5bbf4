//! Synthetic data generators with known ground truth.
//!
//! [`planted_motif_series`] builds a multivariate series of motif
//! occurrences separated by random-walk background, recording where each
//! occurrence sits. [`synthetic_market`] produces a daily OHLCV calendar with
//! planted chart shapes and motifs, used as the bundled desk-scale dataset.

use std::f64::consts::PI;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::series::OhlcvRow;

/// Number of built-in motif families.
pub const N_FAMILIES: usize = 3;

/// Value of channel `c` of family `f` at phase `u` in `[0, 1]`.
pub fn family_template(f: usize, c: usize, u: f64) -> f64 {
    match (f % N_FAMILIES, c % 3) {
        (0, 0) => (2.0 * PI * u).sin(),
        (0, 1) => u,
        (0, _) => (2.0 * u - 1.0).powi(2),
        (1, 0) => -(2.0 * PI * u).sin(),
        (1, 1) => 1.0 - u,
        (1, _) => (PI * u).sin(),
        (_, 0) => (4.0 * PI * u).sin(),
        (_, 1) => (2.0 * PI * u).cos(),
        (_, _) => u.powi(3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifPlan {
    pub length: usize,
    pub dim: usize,
    pub families: usize,
    pub base_len: usize,
    /// Relative amplitude jitter, per channel and occurrence.
    pub amp_jitter: f64,
    /// Relative length jitter; the phase is also warped by `u^p` with
    /// `p` in `[1 - warp, 1 + warp]`.
    pub warp_jitter: f64,
    pub noise_sigma: f64,
    pub gap_min: usize,
    pub gap_max: usize,
    pub background_step: f64,
}

impl Default for MotifPlan {
    fn default() -> Self {
        Self {
            length: 2000,
            dim: 3,
            families: 3,
            base_len: 20,
            amp_jitter: 0.2,
            warp_jitter: 0.1,
            noise_sigma: 0.05,
            gap_min: 4,
            gap_max: 12,
            background_step: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedOccurrence {
    pub start: usize,
    pub length: usize,
    pub family: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSeries {
    pub values: Array2<f64>,
    pub occurrences: Vec<PlantedOccurrence>,
}

/// One warped, amplitude-jittered occurrence of family `f` starting at
/// level `from` (one entry per channel).
fn occurrence<R: Rng>(rng: &mut R, plan: &MotifPlan, f: usize, from: &[f64]) -> Array2<f64> {
    let w = plan.warp_jitter;
    let len = ((plan.base_len as f64 * (1.0 + rng.random_range(-w..=w))).round() as usize).max(2);
    let power = 1.0 + rng.random_range(-w..=w);
    let amps: Vec<f64> = (0..plan.dim)
        .map(|_| 1.0 + rng.random_range(-plan.amp_jitter..=plan.amp_jitter))
        .collect();
    Array2::from_shape_fn((len, plan.dim), |(i, c)| {
        let u = (i as f64 / (len - 1) as f64).powf(power);
        let v = family_template(f, c, u) - family_template(f, c, 0.0);
        from[c] + amps[c] * v
    })
}

/// Motif occurrences cycling through families in random order, separated by
/// random-walk gaps, plus i.i.d. Gaussian noise.
pub fn planted_motif_series(plan: &MotifPlan, seed: u64) -> PlantedSeries {
    let mut rng = substream(seed, "synth.motifs");
    let step = Normal::new(0.0, plan.background_step.max(0.0)).expect("finite sigma");
    let noise = Normal::new(0.0, plan.noise_sigma.max(0.0)).expect("finite sigma");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(plan.length);
    let mut occurrences = Vec::new();
    let mut level = vec![0.0; plan.dim];
    while rows.len() < plan.length {
        let gap = rng.random_range(plan.gap_min..=plan.gap_max.max(plan.gap_min));
        for _ in 0..gap {
            for l in level.iter_mut() {
                *l += step.sample(&mut rng);
            }
            rows.push(level.clone());
        }
        let f = rng.random_range(0..plan.families.max(1));
        let occ = occurrence(&mut rng, plan, f, &level);
        let start = rows.len();
        if start + occ.nrows() > plan.length {
            break;
        }
        occurrences.push(PlantedOccurrence {
            start,
            length: occ.nrows(),
            family: f,
        });
        for r in occ.rows() {
            rows.push(r.to_vec());
        }
        level = rows.last().cloned().unwrap_or(level);
    }
    while rows.len() < plan.length {
        for l in level.iter_mut() {
            *l += step.sample(&mut rng);
        }
        rows.push(level.clone());
    }
    rows.truncate(plan.length);
    let values = Array2::from_shape_fn((plan.length, plan.dim), |(t, c)| {
        rows[t][c]
    }) + Array2::from_shape_fn((plan.length, plan.dim), |_| noise.sample(&mut rng));
    PlantedSeries {
        values,
        occurrences,
    }
}

/// Planted family covering most of `[start, start + length)`, if any.
pub fn planted_label(occurrences: &[PlantedOccurrence], start: usize, length: usize) -> Option<usize> {
    occurrences
        .iter()
        .map(|o| {
            let lo = o.start.max(start);
            let hi = (o.start + o.length).min(start + length);
            (hi.saturating_sub(lo), o.family)
        })
        .filter(|&(ov, _)| 2 * ov > length)
        .max_by_key(|&(ov, _)| ov)
        .map(|(_, f)| f)
}

/// Fraction of assigned segments carrying their cluster's majority planted
/// label. Background segments form their own label.
pub fn cluster_purity(clusters: &[Vec<(usize, usize)>], occurrences: &[PlantedOccurrence]) -> f64 {
    let mut total = 0usize;
    let mut agree = 0usize;
    for members in clusters {
        let mut counts = std::collections::BTreeMap::<Option<usize>, usize>::new();
        for &(s, l) in members {
            *counts.entry(planted_label(occurrences, s, l)).or_default() += 1;
        }
        total += members.len();
        agree += counts.values().copied().max().unwrap_or(0);
    }
    if total == 0 {
        0.0
    } else {
        agree as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPlan {
    pub days: usize,
    pub start: NaiveDate,
    pub start_price: f64,
    pub daily_vol: f64,
    /// Expected days between planted chart shapes.
    pub chart_every: usize,
    /// Expected days between planted motifs.
    pub motif_every: usize,
}

impl Default for MarketPlan {
    fn default() -> Self {
        Self {
            days: 1500,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            start_price: 100.0,
            daily_vol: 0.015,
            chart_every: 60,
            motif_every: 30,
        }
    }
}

/// Relative log-price knots of a head-and-shoulders (or its inverse) with
/// shoulders at +-`jitter` of each other.
fn hs_knots<R: Rng>(rng: &mut R, inverse: bool) -> [f64; 5] {
    let s = if inverse { -1.0 } else { 1.0 };
    let shoulder = 0.08 + rng.random_range(-0.004..0.004);
    let head = 0.14 + rng.random_range(0.0..0.04);
    let trough = 0.02 + rng.random_range(-0.003..0.003);
    [s * shoulder, s * trough, s * head, s * trough, s * (shoulder + rng.random_range(-0.004..0.004))]
}

/// Daily OHLCV rows: geometric random walk with planted head-and-shoulders
/// shapes and motif-family price/volume excursions. Continuous calendar.
pub fn synthetic_market(plan: &MarketPlan, seed: u64) -> Vec<OhlcvRow> {
    let mut rng = substream(seed, "synth.market");
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut log_p = Vec::with_capacity(plan.days);
    let mut vol_f = Vec::with_capacity(plan.days);
    let mut lp = plan.start_price.ln();
    while log_p.len() < plan.days {
        let roll = rng.random_range(0.0..1.0);
        if roll < 1.0 / plan.chart_every.max(1) as f64 {
            let inverse = rng.random_bool(0.5);
            let knots = hs_knots(&mut rng, inverse);
            let seg = 5;
            let base = lp;
            let mut prev = 0.0;
            for k in knots.iter().chain(std::iter::once(&0.0)) {
                for i in 1..=seg {
                    let v = prev + (k - prev) * i as f64 / seg as f64;
                    log_p.push(base + v + 0.002 * z.sample(&mut rng));
                    vol_f.push(1.0 + 0.3 * (k - prev).abs() * 10.0);
                }
                prev = *k;
            }
            lp = *log_p.last().expect("nonempty");
        } else if roll < 1.0 / plan.chart_every.max(1) as f64 + 1.0 / plan.motif_every.max(1) as f64 {
            let f = rng.random_range(0..N_FAMILIES);
            let len = rng.random_range(18..=22);
            let amp = 0.08 * (1.0 + rng.random_range(-0.2..0.2));
            let base = lp;
            for i in 0..len {
                let u = i as f64 / (len - 1) as f64;
                let v = family_template(f, 0, u) - family_template(f, 0, 0.0);
                log_p.push(base + amp * v + 0.003 * z.sample(&mut rng));
                vol_f.push(1.0 + 0.5 * (family_template(f, 1, u) - family_template(f, 1, 0.0)).abs());
            }
            lp = *log_p.last().expect("nonempty");
        } else {
            lp += plan.daily_vol * z.sample(&mut rng);
            log_p.push(lp);
            vol_f.push(1.0);
        }
    }
    log_p.truncate(plan.days);
    vol_f.truncate(plan.days);

    let mut rows = Vec::with_capacity(plan.days);
    let mut prev_close = log_p[0].exp();
    for (t, (&l, &vf)) in log_p.iter().zip(&vol_f).enumerate() {
        let close = l.exp();
        let open = prev_close * (1.0 + 0.002 * z.sample(&mut rng));
        let high = open.max(close) * (1.0 + 0.004 * z.sample(&mut rng).abs());
        let low = open.min(close) * (1.0 - 0.004 * z.sample(&mut rng).abs());
        let volume = (1.0e6 * vf * (0.25 * z.sample(&mut rng)).exp()).round();
        rows.push(OhlcvRow {
            date: plan.start + chrono::Days::new(t as u64),
            open,
            high,
            low,
            close,
            volume,
        });
        prev_close = close;
    }
    rows
}
