use crate::error::{domain, Result};

/// Conventional Wilder look-back.
pub const DEFAULT_RSI_PERIOD: usize = 14;

/// Relative strength index aligned with its input prices.
///
/// The first `warmup` entries have no defined value and hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsi {
    pub values: Vec<f64>,
    pub warmup: usize,
}

impl Rsi {
    pub fn valid(&self) -> &[f64] {
        &self.values[self.warmup..]
    }
}

/// Wilder-smoothed RSI in `[0, 100]`.
///
/// Seeds the average gain/loss with the simple mean of the first `period`
/// changes, then applies `avg = (avg * (period - 1) + x) / period`. A window
/// with neither gains nor losses reads 50.
pub fn compute_rsi(close: &[f64], period: usize) -> Result<Rsi> {
    if period == 0 {
        return Err(domain("RSI period must be positive"));
    }
    if close.len() <= period {
        return Err(domain(format!(
            "RSI({period}) needs more than {period} prices, got {}",
            close.len()
        )));
    }
    let p = period as f64;
    let changes: Vec<f64> = close.windows(2).map(|w| w[1] - w[0]).collect();
    let (mut gain, mut loss) = changes[..period]
        .iter()
        .fold((0.0, 0.0), |(g, l), &d| (g + d.max(0.0), l + (-d).max(0.0)));
    gain /= p;
    loss /= p;

    let mut values = vec![f64::NAN; close.len()];
    values[period] = rsi_from(gain, loss);
    for i in period + 1..close.len() {
        let d = changes[i - 1];
        gain = (gain * (p - 1.0) + d.max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-d).max(0.0)) / p;
        values[i] = rsi_from(gain, loss);
    }
    Ok(Rsi {
        values,
        warmup: period,
    })
}

fn rsi_from(gain: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        if gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monotone_prices_saturate() {
        let up: Vec<f64> = (0..30).map(|i| 10.0 + i as f64).collect();
        let rsi = compute_rsi(&up, 14).unwrap();
        assert!(rsi.valid().iter().all(|&v| v == 100.0));
        assert!(rsi.values[..14].iter().all(|v| v.is_nan()));

        let down: Vec<f64> = up.iter().rev().copied().collect();
        let rsi = compute_rsi(&down, 14).unwrap();
        assert!(rsi.valid().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_wilder_recursion() {
        // Reference computed with a standalone Wilder recursion.
        let close = [
            44.34, 44.09, 44.15, 43.61, 44.33, 44.83, 45.10, 45.42, 45.84, 46.08, 45.89, 46.03,
            45.61, 46.28, 46.28, 46.00, 46.03, 46.41, 46.22, 45.64,
        ];
        let expected = [
            70.46413502109705,
            66.24961855355505,
            66.48094183471265,
            69.34685316290866,
            66.29471265892624,
            57.91502067008556,
        ];
        let rsi = compute_rsi(&close, 14).unwrap();
        assert_eq!(rsi.valid().len(), expected.len());
        for (a, b) in rsi.valid().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn too_short() {
        assert!(compute_rsi(&[1.0; 14], 14).is_err());
        assert!(compute_rsi(&[1.0; 15], 14).is_ok());
    }

    proptest! {
        #[test]
        fn bounded(close in proptest::collection::vec(1.0f64..1000.0, 16..80)) {
            let rsi = compute_rsi(&close, 14).unwrap();
            for v in rsi.valid() {
                prop_assert!((0.0..=100.0).contains(v));
            }
        }
    }
}
