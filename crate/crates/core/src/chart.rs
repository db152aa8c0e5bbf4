//! Rule-based chart-pattern detection and multivariate prototype building.
//!
//! Extremum detection follows a two-bandwidth scheme: candidate turning
//! points come from a heavily smoothed close (`h = 0.8`) and are then moved to
//! the true max/min of the lightly smoothed close (`h = 0.3`) within
//! `+-2` steps.
//!
//! Five-extremum rules (`E1..E5` in time order, `tol = 3%`):
//!
//! | pattern | starts with | constraints |
//! |---------|-------------|-------------|
//! | HS   | peak   | `E3 > E1`, `E3 > E5`; `|E1 - E5|` and `|E2 - E4|` both `<= tol * mean(E1, E5)` |
//! | IHS  | trough | mirror of HS |
//! | BTOP | peak   | `E1 < E3 < E5`, `E2 > E4` (widening) |
//! | BBOT | trough | `E1 > E3 > E5`, `E2 < E4` (widening) |
//! | TTOP | peak   | `E1 > E3 > E5`, `E2 < E4` (narrowing) |
//! | TBOT | trough | `E1 < E3 < E5`, `E2 > E4` (narrowing) |
//!
//! The broadening and triangle rules are numeric restatements of the
//! classical Lo-Mamaysky-Wang definitions without their tolerance bands.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dtw::{dba_barycenter, dtw_distance, warp_align_companions, DbaConfig};
use crate::error::{domain, Result};
use crate::series::{
    kernel_smooth_matrix, minmax_normalize_matrix, resample_linear_matrix, MultivariateSeries,
    SmoothingConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Peak,
    Trough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
    /// Lightly smoothed price at `index`.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum PatternName {
    IHS,
    HS,
    TBOT,
    BTOP,
    TTOP,
    BBOT,
}

impl PatternName {
    pub const ALL: [PatternName; 6] = [
        PatternName::IHS,
        PatternName::HS,
        PatternName::TBOT,
        PatternName::BTOP,
        PatternName::TTOP,
        PatternName::BBOT,
    ];

    fn opens_with(self) -> ExtremumKind {
        match self {
            PatternName::HS | PatternName::BTOP | PatternName::TTOP => ExtremumKind::Peak,
            PatternName::IHS | PatternName::BBOT | PatternName::TBOT => ExtremumKind::Trough,
        }
    }
}

impl fmt::Display for PatternName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartConfig {
    pub smooth_bandwidth: f64,
    pub extrema_bandwidth: f64,
    pub refine_radius: usize,
    pub tolerance: f64,
    pub min_window: usize,
    pub max_window: usize,
    /// Same-pattern detections overlapping more than this fraction of the
    /// shorter window are collapsed onto the earliest.
    pub max_overlap: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self {
            smooth_bandwidth: 0.3,
            extrema_bandwidth: 0.8,
            refine_radius: 2,
            tolerance: 0.03,
            min_window: 15,
            max_window: 35,
            max_overlap: 0.5,
        }
    }
}

fn smooth_1d(xs: &[f64], h: f64) -> Result<Vec<f64>> {
    let m = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).map_err(|e| domain(e.to_string()))?;
    Ok(kernel_smooth_matrix(m.view(), SmoothingConfig::new(h)?)?
        .column(0)
        .to_vec())
}

/// Alternating peaks and troughs of a raw close series.
pub fn detect_extrema(close: &[f64], cfg: &ChartConfig) -> Result<Vec<Extremum>> {
    if close.len() < 5 {
        return Ok(Vec::new());
    }
    let coarse = smooth_1d(close, cfg.extrema_bandwidth)?;
    let fine = smooth_1d(close, cfg.smooth_bandwidth)?;
    let last = close.len() - 1;

    let mut found: Vec<Extremum> = Vec::new();
    for i in 1..last {
        let kind = if coarse[i] > coarse[i - 1] && coarse[i] >= coarse[i + 1] {
            ExtremumKind::Peak
        } else if coarse[i] < coarse[i - 1] && coarse[i] <= coarse[i + 1] {
            ExtremumKind::Trough
        } else {
            continue;
        };
        let lo = i.saturating_sub(cfg.refine_radius);
        let hi = (i + cfg.refine_radius).min(last);
        let mut best = lo;
        for k in lo..=hi {
            let better = match kind {
                ExtremumKind::Peak => fine[k] > fine[best],
                ExtremumKind::Trough => fine[k] < fine[best],
            };
            if better {
                best = k;
            }
        }
        push_alternating(
            &mut found,
            Extremum {
                index: best,
                kind,
                value: fine[best],
            },
        );
    }
    Ok(found)
}

fn push_alternating(out: &mut Vec<Extremum>, e: Extremum) {
    let Some(prev) = out.last_mut() else {
        out.push(e);
        return;
    };
    if e.index <= prev.index && e.kind != prev.kind {
        // Refinement collided with the previous turning point.
        return;
    }
    if e.kind == prev.kind {
        let stronger = match e.kind {
            ExtremumKind::Peak => e.value > prev.value,
            ExtremumKind::Trough => e.value < prev.value,
        };
        if stronger {
            *prev = e;
        }
        return;
    }
    out.push(e);
}

/// Checks one five-extremum window against `rule`.
pub fn match_pattern(window: &[Extremum], rule: PatternName, tolerance: f64) -> Result<bool> {
    if window.len() != 5 {
        return Err(domain(format!(
            "pattern rules take exactly 5 extrema, got {}",
            window.len()
        )));
    }
    let opens = rule.opens_with();
    let alternates = window.iter().enumerate().all(|(k, e)| {
        let expect_open = k % 2 == 0;
        (e.kind == opens) == expect_open
    });
    if !alternates {
        return Ok(false);
    }
    let [e1, e2, e3, e4, e5] = [0, 1, 2, 3, 4].map(|k| window[k].value);
    let shoulders = (e1 + e5) / 2.0;
    let symmetric = (e1 - e5).abs() <= tolerance * shoulders.abs()
        && (e2 - e4).abs() <= tolerance * shoulders.abs();
    Ok(match rule {
        PatternName::HS => e3 > e1 && e3 > e5 && symmetric,
        PatternName::IHS => e3 < e1 && e3 < e5 && symmetric,
        PatternName::BTOP => e1 < e3 && e3 < e5 && e2 > e4,
        PatternName::BBOT => e1 > e3 && e3 > e5 && e2 < e4,
        PatternName::TTOP => e1 > e3 && e3 > e5 && e2 < e4,
        PatternName::TBOT => e1 < e3 && e3 < e5 && e2 > e4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub pattern: PatternName,
    pub start: usize,
    pub length: usize,
}

impl Detection {
    fn overlap_fraction(&self, other: &Detection) -> f64 {
        let lo = self.start.max(other.start);
        let hi = (self.start + self.length).min(other.start + other.length);
        if hi <= lo {
            return 0.0;
        }
        (hi - lo) as f64 / self.length.min(other.length) as f64
    }
}

/// Slides every window length in `[min_window, max_window]` over a series of
/// length `len`. A window matches a rule when the last five extrema inside it
/// do. Overlapping same-pattern hits keep the earliest (then shortest).
pub fn scan_windows(extrema: &[Extremum], len: usize, cfg: &ChartConfig) -> Result<Vec<Detection>> {
    let mut raw = Vec::new();
    for start in 0..len {
        for width in cfg.min_window..=cfg.max_window {
            let end = start + width;
            if end > len {
                break;
            }
            let lo = extrema.partition_point(|e| e.index < start);
            let hi = extrema.partition_point(|e| e.index < end);
            if hi - lo < 5 {
                continue;
            }
            let last5 = &extrema[hi - 5..hi];
            for rule in PatternName::ALL {
                if match_pattern(last5, rule, cfg.tolerance)? {
                    raw.push(Detection {
                        pattern: rule,
                        start,
                        length: width,
                    });
                }
            }
        }
    }
    Ok(resolve_overlaps(raw, cfg.max_overlap))
}

pub(crate) fn resolve_overlaps(mut raw: Vec<Detection>, max_overlap: f64) -> Vec<Detection> {
    raw.sort_by_key(|d| (d.start, d.length, d.pattern));
    let mut kept: Vec<Detection> = Vec::new();
    for d in raw {
        let clashes = kept
            .iter()
            .any(|k| k.pattern == d.pattern && k.overlap_fraction(&d) > max_overlap);
        if !clashes {
            kept.push(d);
        }
    }
    kept
}

/// Multivariate seed centroid for one chart pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternPrototype {
    pub pattern_name: PatternName,
    /// `L x D`, each column Min-Max normalized.
    pub values: Array2<f64>,
    pub instance_count: usize,
}

/// Raw pattern spans grouped by rule; each entry is a `len x D` slice.
pub type InstanceGroups = BTreeMap<PatternName, Vec<Array2<f64>>>;

/// Cuts each detection out of `series` into its pattern group.
pub fn collect_instances(series: ArrayView2<'_, f64>, detections: &[Detection], groups: &mut InstanceGroups) {
    for d in detections {
        let seg = series.slice(s![d.start..d.start + d.length, ..]).to_owned();
        groups.entry(d.pattern).or_default().push(seg);
    }
}

/// Builds one prototype per non-empty group.
///
/// Instances are Min-Max normalized per channel and resampled to `ref_len`.
/// The price channel is averaged with DBA; every other channel is warped
/// through its instance's alignment to the price barycenter and then averaged
/// element-wise. The stacked result is re-normalized per channel.
pub fn build_prototypes(
    groups: &InstanceGroups,
    price_col: usize,
    ref_len: usize,
    dba: DbaConfig,
) -> Result<Vec<PatternPrototype>> {
    let mut out = Vec::new();
    for pattern in PatternName::ALL {
        let Some(instances) = groups.get(&pattern).filter(|g| !g.is_empty()) else {
            log::warn!("no {pattern} instances; prototype skipped");
            continue;
        };
        let dim = instances[0].ncols();
        if price_col >= dim {
            return Err(domain(format!("price column {price_col} outside {dim} channels")));
        }
        let prepared = instances
            .iter()
            .map(|m| resample_linear_matrix(minmax_normalize_matrix(m.view()).view(), ref_len))
            .collect::<Result<Vec<_>>>()?;
        let prices: Vec<Array2<f64>> = prepared
            .iter()
            .map(|m| m.slice(s![.., price_col..price_col + 1]).to_owned())
            .collect();
        let views: Vec<_> = prices.iter().map(|p| p.view()).collect();
        let bary = dba_barycenter(&views, DbaConfig { ref_len, ..dba })?;

        let comp_cols: Vec<usize> = (0..dim).filter(|&c| c != price_col).collect();
        let mut comp_mean = Array2::<f64>::zeros((ref_len, comp_cols.len()));
        if !comp_cols.is_empty() {
            for (inst, price) in prepared.iter().zip(&prices) {
                let al = dtw_distance(price.view(), bary.values.view())?;
                let comps = inst.select(ndarray::Axis(1), &comp_cols);
                comp_mean += &warp_align_companions(&al, comps.view(), ref_len)?;
            }
            comp_mean.mapv_inplace(|v| v / prepared.len() as f64);
        }

        let mut values = Array2::<f64>::zeros((ref_len, dim));
        values.column_mut(price_col).assign(&bary.values.column(0));
        for (k, &c) in comp_cols.iter().enumerate() {
            values.column_mut(c).assign(&comp_mean.column(k));
        }
        out.push(PatternPrototype {
            pattern_name: pattern,
            values: minmax_normalize_matrix(values.view()),
            instance_count: instances.len(),
        });
    }
    Ok(out)
}

/// Full extraction over a seed universe: smooth, find extrema on the close,
/// scan, cut spans from the smoothed channels, then build prototypes.
pub fn extract_prototypes(
    universe: &[MultivariateSeries],
    price_channel: &str,
    ref_len: usize,
    cfg: &ChartConfig,
    dba: DbaConfig,
) -> Result<Vec<PatternPrototype>> {
    let mut groups = InstanceGroups::new();
    let mut price_col = 0;
    for series in universe {
        price_col = series
            .channel_index(price_channel)
            .ok_or_else(|| domain(format!("seed series lacks channel {price_channel:?}")))?;
        let close = series.values().column(price_col).to_vec();
        let extrema = detect_extrema(&close, cfg)?;
        let detections = scan_windows(&extrema, series.len(), cfg)?;
        if series.is_empty() {
            continue;
        }
        let smoothed = kernel_smooth_matrix(series.values(), SmoothingConfig::new(cfg.smooth_bandwidth)?)?;
        collect_instances(smoothed.view(), &detections, &mut groups);
    }
    for (p, g) in &groups {
        log::info!("{p}: {} instances", g.len());
    }
    build_prototypes(&groups, price_col, ref_len, dba)
}
