//! Two-state regime-switching calibration: forward filter, backward smoother,
//! M-step updates, the feedback-exponent solve and the EM driver.
//!
//! State `0` is the normal (geometric random walk) regime and state `1` the
//! super-exponential bubble regime. Pairwise arrays are indexed
//! `[previous][current]`, so `pair[i][j] = P(s_{t-1} = i, s_t = j | ...)`.

mod em;
mod filter;
mod mstep;
mod smoother;
mod stats;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bubble_logdensity_unchecked, gbm_logdensity_unchecked, switch_logdensity_unchecked, RegimeParams,
    SwitchDirection,
};

pub use em::{block_initial_params, em_fit, initial_params, EmConfig, EmFit, EmIteration, EmTrace, InitialDistribution};
pub use filter::{hamilton_filter, hamilton_filter_with, FilterOutput};
pub use mstep::{
    expected_complete_loglik, feedback_exponent_residual, m_step, m_step_partial, solve_feedback_exponent,
    solve_feedback_exponent_profiled, MStepUpdate, NSearch, PartialParams,
};
pub use smoother::{kim_smoother, SmootherOutput};
pub use stats::{bubble_time_fraction, geometric_average_filter, threshold_fractions, ThresholdFractions};

/// 2x2 array indexed `[previous state][current state]`.
pub type Pair = [[f64; 2]; 2];

/// Floor applied to every transition density inside the filter.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Full parameter vector of the switching model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub regime: RegimeParams,
    /// `q[i][j] = P(s_t = j | s_{t-1} = i)`.
    pub q: Pair,
    #[serde(default)]
    pub switch_density: SwitchDensity,
}

/// Density of `y_t` on the two regime-switch transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchDensity {
    /// Uniform on the bounded move: `1/kappa` on `[y_{t-1} - kappa, y_{t-1})`
    /// when a bubble ends and on `[y_{t-1}, y_{t-1} + kappa]` when one starts.
    /// Parameter-free apart from `kappa`, so the closed-form M-step is exact.
    #[default]
    UniformMove,
    /// Height `|1/mu0|` (`|1/mu1|`) on the level bounds, as in
    /// [`switch_logdensity`](crate::model::switch_logdensity).
    DriftHeight,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        for (i, row) in self.q.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("transition row {i} has entries outside [0,1]: {row:?}")));
            }
            if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("transition row {i} does not sum to 1: {row:?}")));
            }
        }
        if self.switch_density == SwitchDensity::DriftHeight && (self.regime.mu0 == 0.0 || self.regime.mu1 == 0.0) {
            return Err(Error::invalid("switch densities need nonzero mu0 and mu1"));
        }
        Ok(())
    }

    /// Stationary distribution of the transition matrix. When both states are
    /// absorbing the chain has no unique stationary law and the uniform
    /// distribution is returned.
    pub fn stationary(&self) -> [f64; 2] {
        let leave0 = self.q[0][1];
        let leave1 = self.q[1][0];
        let total = leave0 + leave1;
        if total <= 0.0 {
            return [0.5, 0.5];
        }
        [leave1 / total, leave0 / total]
    }
}

/// Transition densities of `y_t` given `y_{t-1}` for each state pair.
pub trait TransitionDensities {
    /// Densities (not logs) indexed `[previous][current]`, before flooring.
    fn densities(&self, y_t: f64, y_prev: f64) -> Pair;
}

impl TransitionDensities for ModelParams {
    fn densities(&self, y_t: f64, y_prev: f64) -> Pair {
        let r = &self.regime;
        if self.switch_density == SwitchDensity::UniformMove {
            let (end, start) = uniform_move_densities(y_t, y_prev, r.kappa);
            return [
                [gbm_logdensity_unchecked(y_t, y_prev, r.mu0, r.sigma0).exp(), start],
                [end, bubble_logdensity_unchecked(y_t, y_prev, r.mu1, r.sigma1, r.n).exp()],
            ];
        }
        [
            [
                gbm_logdensity_unchecked(y_t, y_prev, r.mu0, r.sigma0).exp(),
                switch_logdensity_unchecked(y_t, y_prev, SwitchDirection::BubbleStart, r).exp(),
            ],
            [
                switch_logdensity_unchecked(y_t, y_prev, SwitchDirection::BubbleEnd, r).exp(),
                bubble_logdensity_unchecked(y_t, y_prev, r.mu1, r.sigma1, r.n).exp(),
            ],
        ]
    }
}

#[inline]
fn uniform_move_densities(y_t: f64, y_prev: f64, kappa: f64) -> (f64, f64) {
    let step = y_t - y_prev;
    let h = 1.0 / kappa;
    let end = if -kappa <= step && step < 0.0 { h } else { 0.0 };
    let start = if 0.0 <= step && step <= kappa { h } else { 0.0 };
    (end, start)
}

/// Per-time probabilities of the bubble state, aligned with a price series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySeries {
    pub asset_id: String,
    pub timestamps: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ProbabilitySeries {
    pub fn new(asset_id: impl Into<String>, timestamps: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        let asset_id = asset_id.into();
        if timestamps.len() != values.len() {
            return Err(Error::invalid(format!(
                "{asset_id}: {} timestamps but {} probabilities",
                timestamps.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "{asset_id}: probability {} at index {i} outside [0,1]",
                values[i]
            )));
        }
        Ok(Self {
            asset_id,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps only the given dates (which must all be present).
    pub fn restrict_to(&self, dates: &[NaiveDate]) -> Result<Self> {
        let mut values = Vec::with_capacity(dates.len());
        let mut cursor = 0;
        for d in dates {
            while cursor < self.timestamps.len() && self.timestamps[cursor] < *d {
                cursor += 1;
            }
            if cursor == self.timestamps.len() || self.timestamps[cursor] != *d {
                return Err(Error::invalid(format!("{}: no probability for {d}", self.asset_id)));
            }
            values.push(self.values[cursor]);
        }
        Self::new(self.asset_id.clone(), dates.to_vec(), values)
    }
}

#[inline]
pub(crate) fn floored(d: f64) -> f64 {
    if d > DENSITY_FLOOR {
        d
    } else {
        DENSITY_FLOOR
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;

    #[test]
    fn stationary_distribution() {
        let p = params(0.9, 0.8);
        let pi = p.stationary();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-15);
        let next1 = pi[0] * p.q[0][1] + pi[1] * p.q[1][1];
        assert!((next1 - pi[1]).abs() < 1e-15);
        assert_eq!(params(1.0, 1.0).stationary(), [0.5, 0.5]);
    }

    #[test]
    fn params_validation() {
        assert!(params(0.95, 0.95).validate().is_ok());
        let mut p = params(0.95, 0.95);
        p.q[0][1] = 0.06;
        assert!(p.validate().is_err());
        let mut p = params(0.95, 0.95);
        p.regime.mu0 = 0.0;
        assert!(p.validate().is_err());
    }
}
