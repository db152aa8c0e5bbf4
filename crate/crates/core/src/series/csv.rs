//! OHLCV CSV ingestion (`date,open,high,low,close,volume`).

use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{compute_rsi, MultivariateSeries};
use crate::error::{domain, Error, Result};

/// Channels a CSV can yield; `rsi` is derived from `close`.
pub const CHANNELS: [&str; 3] = ["close", "volume", "rsi"];

const HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvRow {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// Reads and validates every row. Errors name the offending line.
pub fn read_ohlcv(path: &Path) -> Result<Vec<OhlcvRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if headers.iter().all(|h| h.is_empty()) {
        return Err(perr(1, "empty file".into()));
    }
    let idx: Vec<usize> = HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| perr(1, format!("missing column {name:?} in header")))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<OhlcvRow> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<&str> {
            match record.get(idx[k]) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(perr(line, format!("missing {:?}", HEADER[k]))),
            }
        };
        let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d")
            .map_err(|e| perr(line, format!("bad date {:?}: {e}", field(0).unwrap_or(""))))?;
        let mut nums = [0.0; 5];
        for (k, slot) in nums.iter_mut().enumerate() {
            let raw = field(k + 1)?;
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("non-numeric {} {raw:?}", HEADER[k + 1])))?;
        }
        if let Some(prev) = rows.last() {
            if date <= prev.date {
                return Err(perr(
                    line,
                    format!("date {date} does not follow {} (dates must strictly increase)", prev.date),
                ));
            }
        }
        let [open, high, low, close, volume] = nums;
        rows.push(OhlcvRow {
            date,
            open,
            high,
            low,
            close,
            volume,
        });
    }
    if rows.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }
    Ok(rows)
}

pub fn write_ohlcv(path: &Path, rows: &[OhlcvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Ingested series with the number of leading RSI warm-up rows.
///
/// Warm-up rows carry a back-filled RSI and must be skipped before any window
/// is cut from the series.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: MultivariateSeries,
    pub warmup_rows: usize,
}

/// Parses an OHLCV file and assembles the requested channels (any of
/// [`CHANNELS`], in the order given).
pub fn ingest_csv(path: &Path, channels: &[&str], rsi_period: usize) -> Result<Ingested> {
    if channels.is_empty() {
        return Err(domain("no channels requested"));
    }
    let rows = read_ohlcv(path)?;
    let close: Vec<f64> = rows.iter().map(|r| r.close).collect();
    let wants_rsi = channels.contains(&"rsi");
    let rsi = if wants_rsi {
        let mut rsi = compute_rsi(&close, rsi_period)?;
        let first = rsi.values[rsi.warmup];
        rsi.values[..rsi.warmup].fill(first);
        Some(rsi)
    } else {
        None
    };

    let mut values = Array2::zeros((rows.len(), channels.len()));
    for (c, name) in channels.iter().enumerate() {
        let column: Vec<f64> = match *name {
            "close" => close.clone(),
            "volume" => rows.iter().map(|r| r.volume).collect(),
            "rsi" => rsi.as_ref().map(|r| r.values.clone()).unwrap_or_default(),
            other => return Err(domain(format!("unknown channel {other:?}"))),
        };
        values.column_mut(c).assign(&ndarray::Array1::from(column));
    }
    let series = MultivariateSeries::new(
        rows.iter().map(|r| r.date).collect(),
        values,
        channels.iter().map(|c| c.to_string()).collect(),
    )?;
    Ok(Ingested {
        series,
        warmup_rows: rsi.map_or(0, |r| r.warmup),
    })
}
