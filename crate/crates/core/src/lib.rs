//! Recurring-pattern mining and shapelet-based directional forecasting for
//! multivariate market series.
//!
//! The pipeline runs in two stages. [`simpc`] cuts a smoothed series into
//! variable-length segments and clusters them under dependent DTW, optionally
//! seeded with chart-pattern prototypes from [`chart`]. The resulting pattern
//! set labels a shapelet classifier ([`encoder`], [`shapelets`],
//! [`classifier`]) that recognizes a pattern from its first fraction and
//! trades the remainder ([`backtest`]).

pub mod backtest;
pub mod chart;
pub mod classifier;
pub mod dtw;
pub mod encoder;
pub mod error;
pub mod rng;
pub mod series;
pub mod shapelets;
pub mod simpc;
pub mod synth;

pub use error::{Error, Result};
