//! Bundled synthetic dataset: one traded series plus a small seed universe
//! for chart-pattern prototypes.

use std::path::{Path, PathBuf};

use patternforge::series::write_ohlcv;
use patternforge::synth::{synthetic_market, MarketPlan};

use crate::error::{CliError, CliResult};

pub const SEED_TICKERS: usize = 4;

/// Traded series: about eleven years of daily bars.
pub fn market_plan() -> MarketPlan {
    MarketPlan {
        days: 4000,
        start: chrono::NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
        ..MarketPlan::default()
    }
}

/// Writes `market.csv` and `seeds/SYN{i}.csv` under `dir`; returns the
/// files written.
pub fn write_dataset(dir: &Path, seed: u64) -> CliResult<Vec<PathBuf>> {
    let seeds_dir = dir.join("seeds");
    std::fs::create_dir_all(&seeds_dir).map_err(|e| CliError::io(&seeds_dir, e))?;
    let mut written = Vec::new();
    let market = dir.join("market.csv");
    write_ohlcv(&market, &synthetic_market(&market_plan(), seed))?;
    written.push(market);
    let seed_plan = MarketPlan {
        chart_every: 40,
        ..MarketPlan::default()
    };
    for i in 0..SEED_TICKERS {
        let path = seeds_dir.join(format!("SYN{i}.csv"));
        write_ohlcv(&path, &synthetic_market(&seed_plan, seed.wrapping_add(1 + i as u64)))?;
        written.push(path);
    }
    Ok(written)
}
