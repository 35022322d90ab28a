//! Seeded synthetic price series built from normal and bubble segments.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogPriceSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    /// Geometric random walk: `y_t = y_{t-1} + mu0 + sigma0 z`.
    Normal { len: usize, mu0: f64, sigma0: f64 },
    /// Discretized bubble: `x_t = x_{t-1} - n mu1 - n sigma1 z` with `x = e^(-n y)`.
    Bubble { len: usize, mu1: f64, sigma1: f64, n: f64 },
}

impl Segment {
    pub fn len(&self) -> usize {
        match self {
            Segment::Normal { len, .. } | Segment::Bubble { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bubble(&self) -> bool {
        matches!(self, Segment::Bubble { .. })
    }
}

/// Generates `1 + sum(len)` log prices starting at `y0`. Segment `k` covers
/// the transitions into observations `start_k + 1 ..= start_k + len_k`.
pub fn generate_log_prices(y0: f64, segments: &[Segment], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = segments.iter().map(Segment::len).sum();
    let mut ys = Vec::with_capacity(total + 1);
    ys.push(y0);
    for seg in segments {
        match *seg {
            Segment::Normal { len, mu0, sigma0 } => {
                for _ in 0..len {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = ys.last().unwrap() + mu0 + sigma0 * z;
                    ys.push(y);
                }
            }
            Segment::Bubble { len, mu1, sigma1, n } => {
                if !(n > 0.0) {
                    return Err(Error::invalid("bubble segment needs n > 0"));
                }
                for _ in 0..len {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let x = (-n * ys.last().unwrap()).exp() - n * mu1 - n * sigma1 * z;
                    if !(x > 0.0) {
                        return Err(Error::invalid(format!(
                            "bubble segment reached its singularity at observation {}",
                            ys.len()
                        )));
                    }
                    ys.push(-x.ln() / n);
                }
            }
        }
    }
    Ok(ys)
}

/// [`generate_log_prices`] wrapped in a daily-dated series.
pub fn generate_series(
    asset_id: &str,
    start: NaiveDate,
    y0: f64,
    segments: &[Segment],
    seed: u64,
) -> Result<LogPriceSeries> {
    LogPriceSeries::with_daily_dates(asset_id, start, generate_log_prices(y0, segments, seed)?)
}

/// Observations in each corpus series.
pub const CORPUS_LEN: usize = 1461;

/// Five assets over 2005-01-01..=2008-12-31 (daily calendar dates, log
/// prices starting at 0). Bubble episodes are staggered so that some assets
/// lead others, and every asset crashes in 2008 by a different amount.
///
/// Returns `(asset id, group label, series)`.
pub fn synthetic_corpus(seed: u64) -> Result<Vec<(String, &'static str, LogPriceSeries)>> {
    use Segment::{Bubble, Normal};
    let quiet = |len| Normal { len, mu0: 0.0002, sigma0: 0.01 };
    let dip = |len| Normal { len, mu0: -0.002, sigma0: 0.012 };
    let boom = |len| Bubble { len, mu1: 0.0014, sigma1: 0.003, n: 0.5 };
    let crash = |len, mu0| Normal { len, mu0, sigma0: 0.02 };
    // 2005-2007 is 1095 transitions, 2008 is 366 (including the first day's
    // transition from 2007-12-31).
    let plans: [(&str, &str, Vec<Segment>); 5] = [
        ("alpha", "industrial", vec![quiet(200), boom(250), dip(120), boom(280), quiet(245), crash(365, -0.0025)]),
        ("beta", "industrial", vec![quiet(230), boom(240), dip(130), boom(270), quiet(225), crash(365, -0.0015)]),
        ("gamma", "industrial", vec![quiet(400), boom(300), dip(100), quiet(295), crash(365, -0.0008)]),
        ("delta", "financial/bank", vec![quiet(260), boom(230), dip(120), boom(260), quiet(225), crash(365, -0.002)]),
        ("epsilon", "financial/insurance", vec![quiet(1095), crash(365, -0.0004)]),
    ];
    let start = NaiveDate::from_ymd_opt(2005, 1, 1).expect("valid date");
    plans
        .into_iter()
        .enumerate()
        .map(|(k, (id, group, segs))| {
            debug_assert_eq!(segs.iter().map(Segment::len).sum::<usize>() + 1, CORPUS_LEN);
            Ok((id.to_string(), group, generate_series(id, start, 0.0, &segs, seed.wrapping_add(k as u64))?))
        })
        .collect()
}
