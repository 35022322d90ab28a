use serde::{Deserialize, Serialize};

use super::{floored, ModelParams, Pair, SmootherOutput, TransitionDensities};
use crate::error::{Error, Regime, Result};
use crate::model::{LogPriceSeries, EXP_CLAMP};

/// Search interval for the feedback exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NSearch {
    pub min: f64,
    pub max: f64,
}

impl Default for NSearch {
    fn default() -> Self {
        Self { min: 1e-4, max: 10.0 }
    }
}

impl NSearch {
    fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) {
            return Err(Error::invalid(format!("bad n search interval [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

/// Closed-form updates with one entry per regime; `None` marks a regime (or a
/// transition row) whose smoothed weight vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepUpdate {
    pub normal: Option<(f64, f64)>,
    pub bubble: Option<(f64, f64)>,
    pub q_rows: [Option<[f64; 2]>; 2],
}

/// The non-`n` part of the parameter vector produced by one M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialParams {
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub q: Pair,
}

fn check_lengths(smoother: &SmootherOutput, series: &LogPriceSeries) -> Result<()> {
    if smoother.pairwise.len() + 1 != series.len() {
        return Err(Error::invalid(format!(
            "smoother covers {} transitions but the series has {} points",
            smoother.pairwise.len(),
            series.len()
        )));
    }
    Ok(())
}

/// Expected complete-data log-likelihood under the smoothed pair weights:
/// `sum_t sum_ij omega_t[i][j] (ln f_ij(y_t | y_{t-1}) + ln q_ij)`, with the
/// same density floor as the filter. Terms with zero weight are skipped.
pub fn expected_complete_loglik(smoother: &SmootherOutput, series: &LogPriceSeries, params: &ModelParams) -> f64 {
    let ys = series.log_prices();
    let mut total = 0.0;
    for (k, w) in smoother.pairwise.iter().enumerate() {
        let f = params.densities(ys[k + 1], ys[k]);
        for i in 0..2 {
            for j in 0..2 {
                if w[i][j] != 0.0 {
                    total += w[i][j] * (floored(f[i][j]).ln() + params.q[i][j].ln());
                }
            }
        }
    }
    total
}

/// Closed-form M-step at the given feedback exponent.
///
/// Normal regime: weighted mean and (population) standard deviation of log
/// returns under `omega[0][0]`. Bubble regime: the same for the increments of
/// `x_t = p_t^-n` under `omega[1][1]`, scaled by `1/n`. Transition rows are
/// expected pair counts over expected origin counts.
pub fn m_step_partial(smoother: &SmootherOutput, series: &LogPriceSeries, current_n: f64) -> Result<MStepUpdate> {
    check_lengths(smoother, series)?;
    if !(current_n > 0.0) {
        return Err(Error::invalid("current n must be positive"));
    }
    let ys = series.log_prices();
    let omega = &smoother.pairwise;

    let mut w00 = 0.0;
    let mut r_sum = 0.0;
    let mut w11 = 0.0;
    let mut d_sum = 0.0;
    for (k, w) in omega.iter().enumerate() {
        let r = ys[k + 1] - ys[k];
        w00 += w[0][0];
        r_sum += w[0][0] * r;
        if w[1][1] != 0.0 {
            let d = x_increment(ys[k + 1], ys[k], current_n);
            w11 += w[1][1];
            d_sum += w[1][1] * d;
        }
    }

    let normal = (w00 > 0.0)
        .then(|| {
            let mu0 = r_sum / w00;
            let var = omega
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let e = ys[k + 1] - ys[k] - mu0;
                    w[0][0] * e * e
                })
                .sum::<f64>()
                / w00;
            (mu0, var.sqrt())
        })
        .filter(|(mu, s)| mu.is_finite() && s.is_finite() && *s > 0.0);

    let bubble = (w11 > 0.0 && d_sum.is_finite())
        .then(|| {
            let n = current_n;
            let mu1 = -d_sum / (n * w11);
            let ss = omega
                .iter()
                .enumerate()
                .filter(|(_, w)| w[1][1] != 0.0)
                .map(|(k, w)| {
                    let e = x_increment(ys[k + 1], ys[k], n) + n * mu1;
                    w[1][1] * e * e
                })
                .sum::<f64>();
            (mu1, (ss / (n * n * w11)).sqrt())
        })
        .filter(|(mu, s)| mu.is_finite() && s.is_finite() && *s > 0.0);

    let totals = smoother.pair_totals();
    let q_rows = [0, 1].map(|i| {
        let from = totals[i][0] + totals[i][1];
        (from > 0.0).then(|| {
            let stay = (totals[i][i] / from).clamp(0.0, 1.0);
            let mut row = [0.0; 2];
            row[i] = stay;
            row[1 - i] = 1.0 - stay;
            row
        })
    });

    Ok(MStepUpdate {
        normal,
        bubble,
        q_rows,
    })
}

/// [`m_step_partial`] that fails when either regime is degenerate.
pub fn m_step(smoother: &SmootherOutput, series: &LogPriceSeries, current_n: f64) -> Result<PartialParams> {
    let u = m_step_partial(smoother, series, current_n)?;
    let (mu0, sigma0) = u.normal.ok_or(Error::DegenerateRegime(Regime::Normal))?;
    let (mu1, sigma1) = u.bubble.ok_or(Error::DegenerateRegime(Regime::Bubble))?;
    let row = |i: usize| {
        u.q_rows[i].ok_or(Error::DegenerateRegime(if i == 0 { Regime::Normal } else { Regime::Bubble }))
    };
    Ok(PartialParams {
        mu0,
        sigma0,
        mu1,
        sigma1,
        q: [row(0)?, row(1)?],
    })
}

/// `p_t^-n - p_{t-1}^-n` computed without cancellation for small `n`.
#[inline]
fn x_increment(y_t: f64, y_prev: f64, n: f64) -> f64 {
    (-n * y_t).exp_m1() - (-n * y_prev).exp_m1()
}

fn bubble_weights(smoother: &SmootherOutput) -> Result<f64> {
    let total: f64 = smoother.pairwise.iter().map(|w| w[1][1]).sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::DegenerateRegime(Regime::Bubble))
    }
}

/// Left-hand side of the first-order condition for `n` with `mu1`, `sigma1`
/// held fixed:
///
/// `sum_t omega11_t [ -(x_t - x_{t-1} + n mu1)(-x_t ln p_t + x_{t-1} ln p_{t-1} + mu1) / (n sigma1)^2 + 1/n - ln p_t ]`
///
/// with `x = p^-n`. Returns NaN where `e^(-n y)` would leave the clamp range.
pub fn feedback_exponent_residual(
    smoother: &SmootherOutput,
    series: &LogPriceSeries,
    mu1: f64,
    sigma1: f64,
    n: f64,
) -> f64 {
    let ys = series.log_prices();
    let mut total = 0.0;
    for (k, w) in smoother.pairwise.iter().enumerate() {
        let weight = w[1][1];
        if weight == 0.0 {
            continue;
        }
        let (y, y_prev) = (ys[k + 1], ys[k]);
        if (n * y).abs() > EXP_CLAMP || (n * y_prev).abs() > EXP_CLAMP {
            return f64::NAN;
        }
        let x = (-n * y).exp();
        let x_prev = (-n * y_prev).exp();
        let a = x_increment(y, y_prev, n) + n * mu1;
        let b = -x * y + x_prev * y_prev + mu1;
        total += weight * (-a * b / (n * n * sigma1 * sigma1) + 1.0 / n - y);
    }
    total
}

/// Bubble-pair part of the expected log-likelihood as a function of `n`.
fn bubble_objective(smoother: &SmootherOutput, series: &LogPriceSeries, mu1: f64, sigma1: f64, n: f64) -> f64 {
    let ys = series.log_prices();
    smoother
        .pairwise
        .iter()
        .enumerate()
        .filter(|(_, w)| w[1][1] != 0.0)
        .map(|(k, w)| {
            let ld = crate::model::bubble_logdensity_unchecked(ys[k + 1], ys[k], mu1, sigma1, n);
            w[1][1] * ld.max(super::DENSITY_FLOOR.ln())
        })
        .sum()
}

/// Closed-form bubble drift and scale at `n`.
fn bubble_closed_form(smoother: &SmootherOutput, series: &LogPriceSeries, n: f64, w11: f64) -> Option<(f64, f64)> {
    let ys = series.log_prices();
    let mut d_sum = 0.0;
    for (k, w) in smoother.pairwise.iter().enumerate() {
        if w[1][1] != 0.0 {
            d_sum += w[1][1] * x_increment(ys[k + 1], ys[k], n);
        }
    }
    let mu1 = -d_sum / (n * w11);
    let mut ss = 0.0;
    for (k, w) in smoother.pairwise.iter().enumerate() {
        if w[1][1] != 0.0 {
            let e = x_increment(ys[k + 1], ys[k], n) + n * mu1;
            ss += w[1][1] * e * e;
        }
    }
    let sigma1 = (ss / (n * n * w11)).sqrt();
    (mu1.is_finite() && sigma1.is_finite() && sigma1 > 0.0).then_some((mu1, sigma1))
}

const GRID_POINTS: usize = 160;

/// Maximizes `objective` over `[lo, hi]` using `derivative` to locate
/// stationary points: every downward sign change on a log-spaced grid is
/// refined by bisection and the best root wins. Without a downward sign change
/// the best grid cell is refined by golden-section search.
fn maximize_on_interval(
    lo: f64,
    hi: f64,
    objective: impl Fn(f64) -> f64,
    derivative: impl Fn(f64) -> f64,
) -> Option<f64> {
    let ratio = (hi / lo).ln();
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| {
            if k + 1 == GRID_POINTS {
                hi
            } else {
                lo * (ratio * k as f64 / (GRID_POINTS - 1) as f64).exp()
            }
        })
        .collect();
    let slopes: Vec<f64> = grid.iter().map(|&n| derivative(n)).collect();

    let mut best: Option<(f64, f64)> = None;
    let consider = |n: f64, best: &mut Option<(f64, f64)>| {
        let v = objective(n);
        if v.is_finite() && best.is_none_or(|(_, bv)| v > bv) {
            *best = Some((n, v));
        }
    };

    for k in 0..GRID_POINTS - 1 {
        let (ga, gb) = (slopes[k], slopes[k + 1]);
        if ga.is_finite() && gb.is_finite() && ga > 0.0 && gb <= 0.0 {
            let root = bisect(grid[k], grid[k + 1], &derivative);
            consider(root, &mut best);
        }
    }
    if let Some((n, _)) = best {
        return Some(n);
    }

    let values: Vec<f64> = grid.iter().map(|&n| objective(n)).collect();
    let k = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))?
        .0;
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(GRID_POINTS - 1)];
    Some(golden_section(a, b, &objective))
}

fn bisect(mut lo: f64, mut hi: f64, g: &impl Fn(f64) -> f64) -> f64 {
    // invariant: g(lo) > 0 >= g(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = g(mid);
        if v.abs() < 1e-12 {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

fn golden_section(mut a: f64, mut b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Solves the first-order condition for `n` with `mu1`, `sigma1` held fixed.
///
/// The condition uses `1/n` where the exact partial derivative of the
/// expected log-likelihood has `z^2 / n`; the two agree in sum only when
/// `sigma1` is the closed-form scale at that `n`. For other `sigma1` the root
/// need not maximize the objective; [`solve_feedback_exponent_profiled`] is
/// what EM uses.
///
/// Uses bisection on a downward sign change of
/// [`feedback_exponent_residual`] inside `search`; when there is none, falls
/// back to golden-section maximization of the bubble part of the expected
/// log-likelihood.
pub fn solve_feedback_exponent(
    smoother: &SmootherOutput,
    series: &LogPriceSeries,
    mu1: f64,
    sigma1: f64,
    search: NSearch,
) -> Result<f64> {
    check_lengths(smoother, series)?;
    search.validate()?;
    bubble_weights(smoother)?;
    if !(sigma1 > 0.0) || !mu1.is_finite() {
        return Err(Error::invalid("need finite mu1 and positive sigma1"));
    }
    maximize_on_interval(
        search.min,
        search.max,
        |n| bubble_objective(smoother, series, mu1, sigma1, n),
        |n| feedback_exponent_residual(smoother, series, mu1, sigma1, n),
    )
    .ok_or_else(|| Error::NumericalFailure {
        step: 0,
        reason: "bubble objective is not finite anywhere in the n search interval".into(),
    })
}

/// Solves for `n` with the bubble drift and scale re-optimized in closed form
/// at every candidate `n`.
///
/// At the closed-form scale the fixed-parameter condition coincides with the
/// derivative of the profile objective, so the returned `n` together with the
/// closed forms at that `n` is a joint stationary point of the bubble part of
/// the expected log-likelihood.
pub fn solve_feedback_exponent_profiled(
    smoother: &SmootherOutput,
    series: &LogPriceSeries,
    search: NSearch,
) -> Result<f64> {
    check_lengths(smoother, series)?;
    search.validate()?;
    let w11 = bubble_weights(smoother)?;
    maximize_on_interval(
        search.min,
        search.max,
        |n| match bubble_closed_form(smoother, series, n, w11) {
            Some((mu1, sigma1)) => bubble_objective(smoother, series, mu1, sigma1, n),
            None => f64::NAN,
        },
        |n| match bubble_closed_form(smoother, series, n, w11) {
            Some((mu1, sigma1)) => feedback_exponent_residual(smoother, series, mu1, sigma1, n),
            None => f64::NAN,
        },
    )
    .ok_or_else(|| Error::NumericalFailure {
        step: 0,
        reason: "profile objective is not finite anywhere in the n search interval".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testutil::*;
    use crate::hmm::ProbabilitySeries;

    fn uniform_on(len: usize, cell: (usize, usize)) -> SmootherOutput {
        let mut w = [[0.0; 2]; 2];
        w[cell.0][cell.1] = 1.0;
        SmootherOutput {
            smoothing: ProbabilitySeries::new("t", series(&vec![0.0; len]).timestamps().to_vec(), vec![
                cell.1 as f64;
                len
            ])
            .unwrap(),
            pairwise: vec![w; len - 1],
        }
    }

    #[test]
    fn uniform_normal_weights_give_return_moments() {
        let ys = [0.0, 0.01, 0.03, 0.02, 0.05, 0.04];
        let s = series(&ys);
        let sm = uniform_on(ys.len(), (0, 0));
        let u = m_step_partial(&sm, &s, 0.5).unwrap();
        let r: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64;
        let (mu0, sigma0) = u.normal.unwrap();
        assert!((mu0 - mean).abs() < 1e-15);
        assert!((sigma0 - var.sqrt()).abs() < 1e-15);
        assert!(u.bubble.is_none());
        assert!(matches!(m_step(&sm, &s, 0.5), Err(Error::DegenerateRegime(Regime::Bubble))));
    }

    #[test]
    fn symmetric_counts_give_half() {
        let ys = [0.0, 0.01, 0.03, 0.02, 0.05];
        let s = series(&ys);
        let mut sm = uniform_on(ys.len(), (0, 0));
        for w in sm.pairwise.iter_mut() {
            *w = [[0.2, 0.2], [0.3, 0.3]];
        }
        let u = m_step_partial(&sm, &s, 0.5).unwrap();
        assert_eq!(u.q_rows[0].unwrap(), [0.5, 0.5]);
        assert_eq!(u.q_rows[1].unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn zero_bubble_weight_is_degenerate_for_n() {
        let s = series(&[0.0, 0.01, 0.03]);
        let sm = uniform_on(3, (0, 0));
        assert!(matches!(
            solve_feedback_exponent(&sm, &s, 0.01, 0.01, NSearch::default()),
            Err(Error::DegenerateRegime(Regime::Bubble))
        ));
    }

    #[test]
    fn golden_section_finds_quadratic_peak() {
        let x = golden_section(0.0, 3.0, &|x: f64| -(x - 1.234).powi(2));
        assert!((x - 1.234).abs() < 1e-7);
    }
}
