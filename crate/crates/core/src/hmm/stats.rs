use serde::{Deserialize, Serialize};

use super::ProbabilitySeries;
use crate::error::{Error, Result};
use crate::model::LogPriceSeries;

/// Trailing moving average of log prices (a geometric average of prices).
/// Output timestamps are the right edges of the windows.
pub fn geometric_average_filter(series: &LogPriceSeries, window: usize) -> Result<LogPriceSeries> {
    if window == 0 {
        return Err(Error::invalid("averaging window must be positive"));
    }
    let ys = series.log_prices();
    if ys.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: ys.len(),
        });
    }
    // Summing each window directly keeps constant inputs exactly constant.
    let averaged: Vec<f64> = ys
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    LogPriceSeries::new(
        series.asset_id(),
        series.timestamps()[window - 1..].to_vec(),
        averaged,
    )
}

/// Percentage of time spent in the bubble state: `100 * mean(probabilities)`.
pub fn bubble_time_fraction(probs: &ProbabilitySeries) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(100.0 * probs.values.iter().sum::<f64>() / probs.len() as f64)
}

/// Percentages of observations above `hi` and below `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFractions {
    pub high: f64,
    pub low: f64,
}

pub fn threshold_fractions(probs: &ProbabilitySeries, hi: f64, lo: f64) -> Result<ThresholdFractions> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::invalid(format!("need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")));
    }
    if probs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = probs.len() as f64;
    let high = probs.values.iter().filter(|&&p| p > hi).count() as f64;
    let low = probs.values.iter().filter(|&&p| p < lo).count() as f64;
    Ok(ThresholdFractions {
        high: 100.0 * high / n,
        low: 100.0 * low / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testutil::series;

    fn probs(values: &[f64]) -> ProbabilitySeries {
        let s = series(&vec![0.0; values.len().max(2)]);
        ProbabilitySeries::new("p", s.timestamps()[..values.len()].to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn averaging_constant_and_linear() {
        let s = series(&[2.5; 150]);
        let out = geometric_average_filter(&s, 100).unwrap();
        assert_eq!(out.len(), 51);
        assert!(out.log_prices().iter().all(|&y| y == 2.5));
        assert_eq!(out.timestamps()[0], s.timestamps()[99]);

        let lin: Vec<f64> = (0..30).map(|i| 0.1 + 0.03 * i as f64).collect();
        let out = geometric_average_filter(&series(&lin), 7).unwrap();
        for w in out.log_prices().windows(2) {
            assert!((w[1] - w[0] - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_needs_a_full_window() {
        let s = series(&[0.0; 99]);
        assert!(matches!(
            geometric_average_filter(&s, 100),
            Err(Error::InsufficientData { needed: 100, got: 99 })
        ));
    }

    #[test]
    fn fractions() {
        assert_eq!(bubble_time_fraction(&probs(&[1.0, 1.0, 1.0])).unwrap(), 100.0);
        assert_eq!(bubble_time_fraction(&probs(&[0.0, 0.0])).unwrap(), 0.0);
        let t = threshold_fractions(&probs(&[0.95; 4]), 0.9, 0.1).unwrap();
        assert_eq!((t.high, t.low), (100.0, 0.0));
        let t = threshold_fractions(&probs(&[0.5; 4]), 0.9, 0.1).unwrap();
        assert_eq!((t.high, t.low), (0.0, 0.0));
        let t = threshold_fractions(&probs(&[0.95, 0.05, 0.5, 0.95]), 0.9, 0.1).unwrap();
        assert_eq!((t.high, t.low), (50.0, 25.0));
        assert!(bubble_time_fraction(&probs(&[])).is_err());
        assert!(threshold_fractions(&probs(&[0.5]), 0.1, 0.9).is_err());
    }
}
