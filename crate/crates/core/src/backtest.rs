//! Trading protocol and evaluation.
//!
//! Every `interval` days a unit-notional position is opened at the close of
//! day `t` in the direction implied by the predicted pattern and closed at
//! the close of day `t + interval`. Fees are charged at entry and exit.

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::classifier::NOISE;
use crate::error::{domain, Error, Result};
use crate::simpc::SimpcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Long => 1.0,
            Direction::Short => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub interval: usize,
    pub window: usize,
    pub fee: f64,
    /// Charge fees multiplicatively: `(1 + gross)(1 - fee)^2 - 1`.
    pub multiplicative_fee: bool,
    /// Length the inference window is resampled to; 0 uses the encoder's.
    pub infer_len: usize,
    /// Smooth each inference window on its own before normalizing.
    pub smooth_window: bool,
    /// Confidence levels (top-x%) evaluated in the report.
    pub top_x: Vec<f64>,
    pub random_runs: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            interval: 4,
            window: 16,
            fee: 0.001,
            multiplicative_fee: false,
            infer_len: 0,
            smooth_window: true,
            top_x: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            random_runs: 100,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.window < 2 {
            return Err(Error::Config("backtest.interval >= 1 and backtest.window >= 2 required".into()));
        }
        if !(0.0..1.0).contains(&self.fee) {
            return Err(Error::Config(format!("backtest.fee must lie in [0, 1), got {}", self.fee)));
        }
        if self.top_x.iter().any(|&x| !(x > 0.0 && x <= 100.0)) {
            return Err(Error::Config("every backtest.top_x entry must lie in (0, 100]".into()));
        }
        Ok(())
    }
}

/// Long iff the last close of the centroid exceeds its close at the
/// `gamma` point; ties are short.
pub fn infer_direction(centroid: ArrayView2<'_, f64>, close_col: usize, gamma: f64) -> Result<Direction> {
    let n = centroid.nrows();
    if n == 0 || close_col >= centroid.ncols() {
        return Err(domain("centroid has no close channel"));
    }
    let cut = (gamma * (n - 1) as f64).round() as usize;
    Ok(if centroid[[n - 1, close_col]] > centroid[[cut.min(n - 1), close_col]] {
        Direction::Long
    } else {
        Direction::Short
    })
}

/// Decision days: `window - 1, window - 1 + interval, ..` while the exit
/// day exists.
pub fn grid_points(len: usize, window: usize, interval: usize) -> Vec<usize> {
    if window == 0 || interval == 0 {
        return Vec::new();
    }
    (window - 1..)
        .step_by(interval)
        .take_while(|t| t + interval < len)
        .collect()
}

/// Direction of the close change over `[t, t + interval]`; no change is down.
pub fn truth_direction(close: &[f64], t: usize, interval: usize) -> Direction {
    if close[t + interval] > close[t] {
        Direction::Long
    } else {
        Direction::Short
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub open_index: usize,
    pub open_date: NaiveDate,
    pub exit_date: NaiveDate,
    pub direction: Direction,
    pub entry_price: f64,
    pub exit_price: f64,
    pub gross_return: f64,
    pub net_return: f64,
    pub pattern_label: i64,
    pub p_max: f64,
}

pub fn open_trade(
    close: &[f64],
    dates: &[NaiveDate],
    t: usize,
    direction: Direction,
    pattern_label: i64,
    p_max: f64,
    cfg: &BacktestConfig,
) -> Result<TradeRecord> {
    let exit = t + cfg.interval;
    if exit >= close.len() || close.len() != dates.len() {
        return Err(domain(format!("no exit day for a trade opened at {t}")));
    }
    let (entry_price, exit_price) = (close[t], close[exit]);
    let gross = direction.sign() * (exit_price - entry_price) / entry_price;
    let net = if cfg.multiplicative_fee {
        (1.0 + gross) * (1.0 - cfg.fee).powi(2) - 1.0
    } else {
        gross - 2.0 * cfg.fee
    };
    Ok(TradeRecord {
        open_index: t,
        open_date: dates[t],
        exit_date: dates[exit],
        direction,
        entry_price,
        exit_price,
        gross_return: gross,
        net_return: net,
        pattern_label,
        p_max,
    })
}

/// A prediction at a grid point after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub t: usize,
    pub label: i64,
    pub p_max: f64,
}

/// Trades every signal that is not noise, in the direction of its pattern.
pub fn run_protocol(
    close: &[f64],
    dates: &[NaiveDate],
    signals: &[Signal],
    direction_of: impl Fn(usize) -> Direction,
    cfg: &BacktestConfig,
) -> Result<Vec<TradeRecord>> {
    signals
        .iter()
        .filter(|s| s.label != NOISE)
        .map(|s| open_trade(close, dates, s.t, direction_of(s.label as usize), s.label, s.p_max, cfg))
        .collect()
}

/// `k` grid points without replacement, coin-flip directions, in time order.
pub fn random_baseline<R: Rng>(
    close: &[f64],
    dates: &[NaiveDate],
    grid: &[usize],
    k: usize,
    cfg: &BacktestConfig,
    rng: &mut R,
) -> Result<Vec<TradeRecord>> {
    if k > grid.len() {
        return Err(domain(format!("cannot sample {k} of {} grid points", grid.len())));
    }
    let mut picks: Vec<usize> = sample(rng, grid.len(), k).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let dir = if rng.random_bool(0.5) { Direction::Long } else { Direction::Short };
            open_trade(close, dates, grid[i], dir, NOISE, 0.0, cfg)
        })
        .collect()
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_ratio<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum R {
        N(f64),
        S(String),
    }
    match R::deserialize(d)? {
        R::N(v) => Ok(v),
        R::S(s) if s == "inf" => Ok(f64::INFINITY),
        R::S(s) => Err(serde::de::Error::custom(format!("bad ratio {s}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_trades: usize,
    pub f1: f64,
    /// Serialized as `"inf"` when there are wins and no losses.
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub wlr: f64,
    pub wlr_infinite: bool,
    pub ar: f64,
    pub trwf: f64,
    pub no_trades: bool,
}

/// Macro F1 over the directions present, win-loss ratio (zero gross is a
/// loss), mean gross return and summed net return.
pub fn compute_metrics(trades: &[TradeRecord], truth: &[Direction]) -> Result<MetricsReport> {
    if trades.len() != truth.len() {
        return Err(domain("one truth direction per trade required"));
    }
    if trades.is_empty() {
        return Ok(MetricsReport {
            n_trades: 0,
            f1: 0.0,
            wlr: 0.0,
            wlr_infinite: false,
            ar: 0.0,
            trwf: 0.0,
            no_trades: true,
        });
    }
    let mut f1s = Vec::new();
    for class in [Direction::Long, Direction::Short] {
        let tp = trades.iter().zip(truth).filter(|(t, &y)| t.direction == class && y == class).count() as f64;
        let fp = trades.iter().zip(truth).filter(|(t, &y)| t.direction == class && y != class).count() as f64;
        let fnn = trades.iter().zip(truth).filter(|(t, &y)| t.direction != class && y == class).count() as f64;
        if tp + fp + fnn == 0.0 {
            continue;
        }
        f1s.push(if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) });
    }
    let wins = trades.iter().filter(|t| t.gross_return > 0.0).count();
    let losses = trades.len() - wins;
    let wlr = if losses == 0 { f64::INFINITY } else { wins as f64 / losses as f64 };
    Ok(MetricsReport {
        n_trades: trades.len(),
        f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        wlr,
        wlr_infinite: losses == 0,
        ar: trades.iter().map(|t| t.gross_return).sum::<f64>() / trades.len() as f64,
        trwf: trades.iter().map(|t| t.net_return).sum(),
        no_trades: false,
    })
}

/// Label of a normalized window under the clustering rule: nearest centroid
/// (lowest index on ties) when within `delta`, else noise.
pub fn assign_label(window: ArrayView2<'_, f64>, centroids: &[Array2<f64>], cfg: &SimpcConfig) -> Result<i64> {
    let mut best = (NOISE, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = cfg.distance(window, c.view())?;
        if d < best.1 {
            best = (k as i64, d);
        }
    }
    Ok(if best.1 <= cfg.delta { best.0 } else { NOISE })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<i64>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
    /// Each non-empty predicted column sums to one.
    pub column_normalized: Vec<Vec<f64>>,
}

pub fn build_confusion(truth: &[i64], predicted: &[i64], labels: &[i64]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(domain("truth and predictions differ in length"));
    }
    let mut labels = labels.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let idx = |l: i64| {
        labels
            .binary_search(&l)
            .map_err(|_| domain(format!("label {l} outside the label universe")))
    };
    let n = labels.len();
    let mut counts = vec![vec![0usize; n]; n];
    for (&t, &p) in truth.iter().zip(predicted) {
        counts[idx(t)?][idx(p)?] += 1;
    }
    let mut norm = vec![vec![0.0; n]; n];
    for j in 0..n {
        let col: usize = (0..n).map(|i| counts[i][j]).sum();
        if col > 0 {
            for i in 0..n {
                norm[i][j] = counts[i][j] as f64 / col as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        labels,
        counts,
        column_normalized: norm,
    })
}
