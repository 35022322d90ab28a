use serde::{Deserialize, Serialize};

use super::{FilterOutput, Pair, ProbabilitySeries};
use crate::error::{Error, Result};

/// Backward-smoother output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherOutput {
    /// `P(s_t = 1 | y_0..y_T)` for `t = 0..=T`.
    pub smoothing: ProbabilitySeries,
    /// `omega_t[i][j] = P(s_{t-1} = i, s_t = j | y_0..y_T)` for `t = 1..=T`,
    /// stored at index `t - 1`.
    pub pairwise: Vec<Pair>,
}

impl SmootherOutput {
    pub fn marginal(&self, t: usize) -> [f64; 2] {
        let p = self.smoothing.values[t];
        [1.0 - p, p]
    }

    /// `sum_t omega_t[i][j]`.
    pub fn pair_totals(&self) -> Pair {
        let mut acc = [[0.0; 2]; 2];
        for w in &self.pairwise {
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += w[i][j];
                }
            }
        }
        acc
    }
}

/// Backward pass over the filter output.
///
/// Because the density of `y_{t+1}` depends on both `s_t` and `s_{t+1}`, the
/// conditional `P(s_t | s_{t+1}, y_0..y_T)` equals
/// `P(s_t | s_{t+1}, y_0..y_{t+1})`, not `P(s_t | s_{t+1}, y_0..y_t)`. The
/// recursion therefore rescales the filter's pairwise law:
///
/// `P(s_t, s_{t+1} | y_..T) = P(s_t, s_{t+1} | y_..t+1) P(s_{t+1} | y_..T) / P(s_{t+1} | y_..t+1)`
///
/// and marginalizes `P(s_t | y_..T) = sum_{s_{t+1}} P(s_t, s_{t+1} | y_..T)`.
/// Smoothing at `T` starts from the filtering law.
pub fn kim_smoother(filter: &FilterOutput) -> Result<SmootherOutput> {
    let len = filter.filtering.len();
    let mut smoothing = vec![0.0; len];
    let mut pairwise = vec![[[0.0; 2]; 2]; len - 1];
    let mut next = match filter.pairwise.last() {
        Some(j) => [j[0][0] + j[1][0], j[0][1] + j[1][1]],
        None => filter.marginal(len - 1),
    };
    smoothing[len - 1] = filter.filtering.values[len - 1];

    for t in (1..len).rev() {
        let joint = &filter.pairwise[t - 1];
        let filt = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
        let mut w = [[0.0; 2]; 2];
        for j in 0..2 {
            if filt[j] > 0.0 {
                let ratio = next[j] / filt[j];
                w[0][j] = joint[0][j] * ratio;
                w[1][j] = joint[1][j] * ratio;
            } else if next[j] > 1e-12 {
                return Err(Error::NumericalFailure {
                    step: t,
                    reason: format!("smoothed mass {} on a state with zero filtered mass", next[j]),
                });
            }
        }
        let p0 = w[0][0] + w[0][1];
        let p1 = w[1][0] + w[1][1];
        let total = p0 + p1;
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::NumericalFailure {
                step: t,
                reason: format!("smoothed pair mass is {total}"),
            });
        }
        pairwise[t - 1] = w;
        next = [p0, p1];
        smoothing[t - 1] = p1.clamp(0.0, 1.0);
    }

    Ok(SmootherOutput {
        smoothing: ProbabilitySeries::new(
            filter.filtering.asset_id.clone(),
            filter.filtering.timestamps.clone(),
            smoothing,
        )?,
        pairwise,
    })
}
