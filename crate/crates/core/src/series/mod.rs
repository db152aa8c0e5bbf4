//! Multivariate series container and the per-channel transforms everything
//! downstream depends on: Nadaraya-Watson smoothing, Min-Max scaling,
//! linear resampling, RSI and calendar splitting.

mod csv;
mod rsi;

pub use self::csv::{ingest_csv, read_ohlcv, write_ohlcv, Ingested, OhlcvRow, CHANNELS};
pub use self::rsi::{compute_rsi, Rsi, DEFAULT_RSI_PERIOD};

use chrono::NaiveDate;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Timestamped `T x D` matrix of channel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSeries {
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
    channels: Vec<String>,
}

impl MultivariateSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Array2<f64>, channels: Vec<String>) -> Result<Self> {
        if channels.is_empty() {
            return Err(domain("series needs at least one channel"));
        }
        if values.ncols() != channels.len() {
            return Err(domain(format!(
                "{} value columns but {} channel names",
                values.ncols(),
                channels.len()
            )));
        }
        if values.nrows() != dates.len() {
            return Err(domain(format!(
                "{} value rows but {} dates",
                values.nrows(),
                dates.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(domain(format!(
                "dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("series contains non-finite values"));
        }
        Ok(Self {
            dates,
            values,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Column by channel name.
    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        self.channel_index(name)
            .map(|i| self.values.column(i).to_vec())
    }

    /// Contiguous rows `[start, start + len)`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Segment> {
        if len == 0 || start + len > self.len() {
            return Err(domain(format!(
                "segment [{start}, {}) outside series of length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Segment::new(
            start,
            self.values.slice(s![start..start + len, ..]).to_owned(),
        ))
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.channel_index(n)
                    .ok_or_else(|| domain(format!("unknown channel {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select(Axis(1), &idx);
        Self::new(
            self.dates.clone(),
            values,
            names.iter().map(|n| n.to_string()).collect(),
        )
    }

    fn rows_where(&self, keep: impl Fn(NaiveDate) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.dates[i])).collect();
        Self {
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            values: self.values.select(Axis(0), &idx),
            channels: self.channels.clone(),
        }
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            dates: self.dates.clone(),
            values,
            channels: self.channels.clone(),
        }
    }

    /// Drops the first `n` rows.
    pub fn skip_rows(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dates: self.dates[n..].to_vec(),
            values: self.values.slice(s![n.., ..]).to_owned(),
            channels: self.channels.clone(),
        }
    }
}

/// Contiguous `len x D` slice cut from a parent series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub source_start: usize,
    pub values: Array2<f64>,
    pub normalized: bool,
}

impl Segment {
    pub fn new(source_start: usize, values: Array2<f64>) -> Self {
        Self {
            source_start,
            values,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Gaussian Nadaraya-Watson bandwidth, in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub bandwidth: f64,
}

impl SmoothingConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(domain(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }
}

/// Smooths every column with a Gaussian Nadaraya-Watson estimator.
///
/// Weights beyond `6h` steps are dropped; the discarded mass is below 1e-7 of
/// the total.
pub fn kernel_smooth_matrix(values: ArrayView2<'_, f64>, cfg: SmoothingConfig) -> Result<Array2<f64>> {
    let h = cfg.bandwidth;
    if !(h > 0.0) {
        return Err(domain(format!("bandwidth must be > 0, got {h}")));
    }
    let t_len = values.nrows();
    if t_len == 0 {
        return Err(domain("cannot smooth an empty series"));
    }
    let radius = (6.0 * h).floor() as usize;
    let weights: Vec<f64> = (0..=radius)
        .map(|u| {
            let z = u as f64 / h;
            (-0.5 * z * z).exp()
        })
        .collect();

    let mut out = Array2::zeros(values.raw_dim());
    for t in 0..t_len {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(t_len - 1);
        let mut den = 0.0;
        for s in lo..=hi {
            let w = weights[t.abs_diff(s)];
            den += w;
            for (o, &x) in out.row_mut(t).iter_mut().zip(values.row(s)) {
                *o += w * x;
            }
        }
        out.row_mut(t).mapv_inplace(|v| v / den);
    }
    Ok(out)
}

pub fn kernel_smooth(series: &MultivariateSeries, cfg: SmoothingConfig) -> Result<MultivariateSeries> {
    let smoothed = kernel_smooth_matrix(series.values(), cfg)?;
    Ok(series.with_values(smoothed))
}

/// Per-column Min-Max scaling into `[0, 1]`; constant columns become 0.5.
pub fn minmax_normalize_matrix(values: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = values.to_owned();
    for mut col in out.columns_mut() {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        if span > 0.0 {
            col.mapv_inplace(|v| (v - lo) / span);
        } else {
            col.fill(0.5);
        }
    }
    out
}

pub fn minmax_normalize(segment: &Segment) -> Segment {
    Segment {
        source_start: segment.source_start,
        values: minmax_normalize_matrix(segment.values.view()),
        normalized: true,
    }
}

/// Piecewise-linear resampling of every column onto `target_len` equally
/// spaced positions spanning `[0, len - 1]`. Endpoints are reproduced exactly.
pub fn resample_linear_matrix(values: ArrayView2<'_, f64>, target_len: usize) -> Result<Array2<f64>> {
    let len = values.nrows();
    if len < 2 {
        return Err(domain(format!("resampling needs at least 2 rows, got {len}")));
    }
    if target_len < 2 {
        return Err(domain(format!(
            "resample target must be at least 2, got {target_len}"
        )));
    }
    if target_len == len {
        return Ok(values.to_owned());
    }
    let mut out = Array2::zeros((target_len, values.ncols()));
    let scale = (len - 1) as f64 / (target_len - 1) as f64;
    for k in 0..target_len {
        if k == target_len - 1 {
            out.row_mut(k).assign(&values.row(len - 1));
            continue;
        }
        let pos = k as f64 * scale;
        let i = (pos.floor() as usize).min(len - 2);
        let frac = pos - i as f64;
        for c in 0..values.ncols() {
            let a = values[[i, c]];
            let b = values[[i + 1, c]];
            out[[k, c]] = if frac == 0.0 { a } else { a + (b - a) * frac };
        }
    }
    Ok(out)
}

pub fn resample_linear(segment: &Segment, target_len: usize) -> Result<Segment> {
    Ok(Segment {
        source_start: segment.source_start,
        values: resample_linear_matrix(segment.values.view(), target_len)?,
        normalized: segment.normalized,
    })
}

/// Inclusive calendar interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::Config(format!("date range {start}..{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSeries {
    pub train: MultivariateSeries,
    pub valid: MultivariateSeries,
    pub test: MultivariateSeries,
}

/// Cuts the rows falling into each of three ordered, disjoint date ranges.
/// Rows outside every range are dropped.
pub fn split_by_dates(series: &MultivariateSeries, ranges: [DateRange; 3]) -> Result<SplitSeries> {
    for r in &ranges {
        if r.start > r.end {
            return Err(Error::Config(format!(
                "date range {}..{} is reversed",
                r.start, r.end
            )));
        }
    }
    for w in ranges.windows(2) {
        if w[0].end >= w[1].start {
            return Err(Error::Config(format!(
                "date ranges overlap or are out of order: {}..{} and {}..{}",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    let [train, valid, test] = ranges.map(|r| {
        let part = series.rows_where(|d| r.contains(d));
        if part.is_empty() {
            log::warn!("no rows fall within {}..{}", r.start, r.end);
        }
        part
    });
    Ok(SplitSeries { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    fn daily(n: usize, start: NaiveDate) -> Vec<NaiveDate> {
        start.iter_days().take(n).collect()
    }

    #[test]
    fn smoothing_constant_channel() {
        let out = kernel_smooth_matrix(col(&[5.0; 4]).view(), SmoothingConfig::new(2.0).unwrap()).unwrap();
        for v in out.iter() {
            assert_abs_diff_eq!(*v, 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn narrow_bandwidth_is_nearly_identity() {
        let out = kernel_smooth_matrix(col(&[0.0, 10.0, 0.0]).view(), SmoothingConfig::new(0.3).unwrap()).unwrap();
        // K(1/0.3) relative weight is e^{-5.56} ~ 3.9e-3, so the peak keeps
        // ~99.2% of its value; spread is symmetric.
        assert!(out[[1, 0]] > 9.9);
        assert_abs_diff_eq!(out[[0, 0]], out[[2, 0]], epsilon = 1e-12);
    }

    #[test]
    fn smoothing_matches_direct_evaluation() {
        // Untruncated sums over all five points, evaluated independently.
        let expected = [
            1.5200847865911324,
            2.1288395145961965,
            3.0,
            3.8711604854038026,
            4.479915213408868,
        ];
        let out = kernel_smooth_matrix(
            col(&[1.0, 2.0, 3.0, 4.0, 5.0]).view(),
            SmoothingConfig::new(1.0).unwrap(),
        )
        .unwrap();
        for (o, e) in out.column(0).iter().zip(expected) {
            assert_abs_diff_eq!(*o, e, epsilon = 1e-7);
        }
    }

    #[test]
    fn smoothing_rejects_empty_and_bad_bandwidth() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(kernel_smooth_matrix(empty.view(), SmoothingConfig { bandwidth: 1.0 }).is_err());
        assert!(SmoothingConfig::new(0.0).is_err());
        assert!(SmoothingConfig::new(-1.0).is_err());
    }

    #[test]
    fn minmax_examples() {
        let out = minmax_normalize_matrix(col(&[2.0, 4.0, 6.0]).view());
        assert_eq!(out.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        let out = minmax_normalize_matrix(col(&[7.0, 7.0, 7.0]).view());
        assert_eq!(out.column(0).to_vec(), vec![0.5, 0.5, 0.5]);
        let seg = Segment::new(3, array![[0.0, 100.0], [10.0, 50.0], [5.0, 0.0]]);
        let out = minmax_normalize(&seg);
        assert!(out.normalized);
        assert_eq!(out.source_start, 3);
        assert_eq!(out.values, array![[0.0, 1.0], [1.0, 0.5], [0.5, 0.0]]);
    }

    #[test]
    fn resample_examples() {
        let r = resample_linear_matrix(col(&[0.0, 2.0]).view(), 3).unwrap();
        assert_eq!(r.column(0).to_vec(), vec![0.0, 1.0, 2.0]);
        let r = resample_linear_matrix(col(&[1.0, 3.0, 5.0, 7.0]).view(), 4).unwrap();
        assert_eq!(r.column(0).to_vec(), vec![1.0, 3.0, 5.0, 7.0]);
        let r = resample_linear_matrix(col(&[0.0, 1.0, 0.0]).view(), 5).unwrap();
        assert_eq!(r.column(0).to_vec(), vec![0.0, 0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn resample_rejects_short_input() {
        assert!(resample_linear_matrix(col(&[1.0]).view(), 5).is_err());
        assert!(resample_linear_matrix(col(&[1.0, 2.0]).view(), 1).is_err());
    }

    #[test]
    fn split_counts_rows() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = daily(10, start);
        let s = MultivariateSeries::new(
            dates.clone(),
            Array2::zeros((10, 1)),
            vec!["close".into()],
        )
        .unwrap();
        let r = |a: usize, b: usize| DateRange::new(dates[a], dates[b]).unwrap();
        let parts = split_by_dates(&s, [r(0, 5), r(6, 7), r(8, 9)]).unwrap();
        assert_eq!(
            (parts.train.len(), parts.valid.len(), parts.test.len()),
            (6, 2, 2)
        );

        let late = DateRange::new(
            NaiveDate::from_ymd_opt(2030, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2030, 2, 1).unwrap(),
        )
        .unwrap();
        let parts = split_by_dates(&s, [r(0, 5), r(6, 9), late]).unwrap();
        assert!(parts.test.is_empty());

        assert!(matches!(
            split_by_dates(&s, [r(0, 5), r(5, 7), r(8, 9)]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn btc_ranges_partition_calendar() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let ranges = [
            DateRange::new(d(2014, 1, 1), d(2021, 12, 31)).unwrap(),
            DateRange::new(d(2022, 1, 1), d(2023, 1, 31)).unwrap(),
            DateRange::new(d(2024, 2, 1), d(2025, 5, 13)).unwrap(),
        ];
        let dates: Vec<NaiveDate> = d(2013, 6, 1).iter_days().take_while(|x| *x <= d(2025, 12, 31)).collect();
        let n = dates.len();
        let s = MultivariateSeries::new(dates.clone(), Array2::zeros((n, 1)), vec!["close".into()]).unwrap();
        let parts = split_by_dates(&s, ranges).unwrap();
        let expect = |r: &DateRange| dates.iter().filter(|x| r.contains(**x)).count();
        assert_eq!(parts.train.len(), expect(&ranges[0]));
        assert_eq!(parts.valid.len(), expect(&ranges[1]));
        assert_eq!(parts.test.len(), expect(&ranges[2]));
        // Each part is gap-free and duplicate-free day by day.
        for p in [&parts.train, &parts.valid, &parts.test] {
            assert!(p.dates().windows(2).all(|w| w[1] == w[0].succ_opt().unwrap()));
        }
        assert_eq!(parts.train.dates()[0], d(2014, 1, 1));
        assert_eq!(*parts.test.dates().last().unwrap(), d(2025, 5, 13));
    }

    #[test]
    fn series_rejects_duplicate_dates() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let err = MultivariateSeries::new(vec![d, d], Array2::zeros((2, 1)), vec!["close".into()]);
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn smoothing_stays_within_channel_range(
            xs in proptest::collection::vec(-100.0f64..100.0, 1..40),
            h in 0.2f64..5.0,
        ) {
            let out = kernel_smooth_matrix(col(&xs).view(), SmoothingConfig::new(h).unwrap()).unwrap();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out.iter() {
                prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
            }
        }

        #[test]
        fn minmax_is_idempotent(xs in proptest::collection::vec(-50.0f64..50.0, 2..30)) {
            let once = minmax_normalize_matrix(col(&xs).view());
            let twice = minmax_normalize_matrix(once.view());
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn resample_identity_and_monotone_range(
            xs in proptest::collection::vec(-10.0f64..10.0, 2..30),
            target in 2usize..80,
        ) {
            let m = col(&xs);
            prop_assert_eq!(resample_linear_matrix(m.view(), xs.len()).unwrap(), m.clone());
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let r = resample_linear_matrix(col(&sorted).view(), target).unwrap();
            prop_assert_eq!(r[[0, 0]], sorted[0]);
            prop_assert_eq!(r[[target - 1, 0]], *sorted.last().unwrap());
            for v in r.iter() {
                prop_assert!(*v >= sorted[0] && *v <= *sorted.last().unwrap());
            }
        }
    }
}
