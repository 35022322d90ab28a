use serde::{Deserialize, Serialize};

use super::{floored, ModelParams, Pair, ProbabilitySeries, TransitionDensities};
use crate::error::{Error, Result};
use crate::model::LogPriceSeries;

/// Forward-filter output for a series `y_0..y_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// `P(s_t = 1 | y_0..y_t)` for `t = 0..=T`; entry 0 is the initial law.
    pub filtering: ProbabilitySeries,
    /// `P(s_{t-1} = i, s_t = j | y_0..y_t)` for `t = 1..=T`, stored at index `t - 1`.
    pub pairwise: Vec<Pair>,
    /// `ln p(y_1..y_T | y_0)`.
    pub loglik: f64,
}

impl FilterOutput {
    /// Filtering law `[P(s_t=0), P(s_t=1)]` at time `t`.
    pub fn marginal(&self, t: usize) -> [f64; 2] {
        let p = self.filtering.values[t];
        [1.0 - p, p]
    }
}

/// Forward filter with the model's transition densities.
pub fn hamilton_filter(series: &LogPriceSeries, params: &ModelParams, initial: [f64; 2]) -> Result<FilterOutput> {
    params.validate()?;
    hamilton_filter_with(series, &params.q, initial, params)
}

/// Forward filter with arbitrary transition densities.
///
/// Each step predicts `P(s_{t-1}, s_t | y_..t-1) = q[s_{t-1}][s_t] P(s_{t-1} | y_..t-1)`,
/// weights it by the floored density of `y_t`, normalizes over the four
/// state pairs and marginalizes. The log-likelihood accumulates the log of
/// each normalizer.
pub fn hamilton_filter_with<D: TransitionDensities + ?Sized>(
    series: &LogPriceSeries,
    q: &Pair,
    initial: [f64; 2],
    densities: &D,
) -> Result<FilterOutput> {
    if initial.iter().any(|p| !(0.0..=1.0).contains(p)) || (initial[0] + initial[1] - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("initial distribution {initial:?} is not a probability vector")));
    }
    let ys = series.log_prices();
    let mut filtering = Vec::with_capacity(ys.len());
    let mut pairwise = Vec::with_capacity(ys.len() - 1);
    let mut prev = initial;
    filtering.push(prev[1]);
    let mut loglik = 0.0;

    for t in 1..ys.len() {
        let f = densities.densities(ys[t], ys[t - 1]);
        let mut joint = [[0.0; 2]; 2];
        let mut norm = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let w = q[i][j] * prev[i] * floored(f[i][j]);
                joint[i][j] = w;
                norm += w;
            }
        }
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NumericalFailure {
                step: t,
                reason: format!("filter normalizer is {norm}"),
            });
        }
        for row in joint.iter_mut() {
            for w in row.iter_mut() {
                *w /= norm;
            }
        }
        loglik += norm.ln();
        // Column sums keep full relative precision on a state with tiny mass,
        // which `1 - p` would not.
        prev = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
        filtering.push(prev[1].clamp(0.0, 1.0));
        pairwise.push(joint);
    }

    Ok(FilterOutput {
        filtering: ProbabilitySeries::new(series.asset_id(), series.timestamps().to_vec(), filtering)?,
        pairwise,
        loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testutil::*;

    struct Flat;

    impl TransitionDensities for Flat {
        fn densities(&self, _: f64, _: f64) -> Pair {
            [[0.7, 0.7], [0.7, 0.7]]
        }
    }

    #[test]
    fn absorbing_normal_state_stays_normal() {
        let s = series(&[0.0, 0.01, 0.03, 0.02, 0.05, 0.09, 0.1]);
        let p = params(1.0, 1.0);
        let out = hamilton_filter(&s, &p, [1.0, 0.0]).unwrap();
        assert!(out.filtering.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_emissions_reduce_to_chain_prediction() {
        let s = series(&[0.0, 0.3, -0.1, 0.2, 0.25, 0.1]);
        let p = params(0.9, 0.7);
        let out = hamilton_filter_with(&s, &p.q, [0.2, 0.8], &Flat).unwrap();
        let mut law = [0.2, 0.8];
        for t in 1..s.len() {
            law = [
                law[0] * p.q[0][0] + law[1] * p.q[1][0],
                law[0] * p.q[0][1] + law[1] * p.q[1][1],
            ];
            assert!((out.filtering.values[t] - law[1]).abs() < 1e-14);
        }
        // likelihood is the constant density raised to T
        assert!((out.loglik - 5.0 * 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pairwise_is_normalized_and_consistent() {
        let s = series(&[0.0, 0.02, 0.05, 0.04, 0.08, 0.15, 0.13, 0.2]);
        let p = params(0.9, 0.9);
        let out = hamilton_filter(&s, &p, p.stationary()).unwrap();
        for (k, pair) in out.pairwise.iter().enumerate() {
            let total: f64 = pair.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-10);
            let m1 = pair[0][1] + pair[1][1];
            assert!((m1 - out.filtering.values[k + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_initial_law() {
        let s = series(&[0.0, 0.1]);
        let p = params(0.9, 0.9);
        assert!(hamilton_filter(&s, &p, [0.6, 0.6]).is_err());
    }
}
