use serde::{Deserialize, Serialize};

use super::mstep::{m_step_partial, solve_feedback_exponent_profiled, NSearch};
use super::{hamilton_filter, SwitchDensity, kim_smoother, FilterOutput, ModelParams, SmootherOutput};
use crate::error::{Error, Result};
use crate::model::{LogPriceSeries, RegimeParams, DEFAULT_KAPPA};

/// Law of the hidden state at the first observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialDistribution {
    /// Stationary law of the starting transition matrix, then re-estimated
    /// each iteration as the smoothed law at the first observation.
    #[default]
    Estimated,
    /// Stationary law of the current transition matrix.
    Stationary,
    /// A fixed `[P(normal), P(bubble)]`.
    Fixed([f64; 2]),
}

/// EM calibration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once `|lnL_k - lnL_{k-1}| / |lnL_{k-1}|` falls to this value.
    pub tolerance: f64,
    pub n_search: NSearch,
    pub n_init: f64,
    pub kappa: f64,
    pub q00_init: f64,
    pub q11_init: f64,
    pub initial: InitialDistribution,
    pub switch_density: SwitchDensity,
    /// Starting point; derived from the data when absent.
    pub start: Option<ModelParams>,
    /// Without an explicit start, also run from [`block_initial_params`] and
    /// keep the fit with the higher final log-likelihood.
    pub multi_start: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-4,
            n_search: NSearch::default(),
            n_init: 0.5,
            kappa: DEFAULT_KAPPA,
            q00_init: 0.95,
            q11_init: 0.95,
            initial: InitialDistribution::default(),
            switch_density: SwitchDensity::default(),
            start: None,
            multi_start: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("em max_iterations must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("em tolerance must be nonnegative".into()));
        }
        if !(self.n_search.min > 0.0 && self.n_search.max > self.n_search.min) {
            return Err(Error::Config("n search interval must satisfy 0 < min < max".into()));
        }
        if !(self.n_init > 0.0) || !(self.kappa > 0.0) {
            return Err(Error::Config("n_init and kappa must be positive".into()));
        }
        if let InitialDistribution::Fixed(law) = self.initial {
            if law.iter().any(|p| !(0.0..=1.0).contains(p)) || (law[0] + law[1] - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("initial law {law:?} is not a distribution")));
            }
        }
        for q in [self.q00_init, self.q11_init] {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("initial stay probability {q} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub params: ModelParams,
    pub loglik: f64,
    /// Relative log-likelihood change from the previous iteration.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EmTrace {
    pub records: Vec<EmIteration>,
    pub converged: bool,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Largest drop of the log-likelihood between consecutive iterations (0 when monotone).
    pub fn max_loglik_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].loglik - w[1].loglik)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub params: ModelParams,
    pub trace: EmTrace,
    pub filter: FilterOutput,
    pub smoother: SmootherOutput,
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Data-driven starting point: normal-regime moments from all log returns,
/// bubble-regime moments from the top decile of returns mapped through
/// `p^-n` at `n_init`, and stay probabilities from the config.
pub fn initial_params(series: &LogPriceSeries, config: &EmConfig) -> Result<ModelParams> {
    let ys = series.log_prices();
    let returns: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    let (mu0, mut sigma0) = moments(returns.iter().copied());
    if !(sigma0 > 0.0) {
        sigma0 = 1e-8;
    }
    let mu0 = if mu0 == 0.0 { 1e-8 } else { mu0 };

    let mut sorted = returns.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[((sorted.len() as f64 * 0.9).floor() as usize).min(sorted.len() - 1)];
    let n = config.n_init;
    let increments: Vec<f64> = returns
        .iter()
        .enumerate()
        .filter(|(_, r)| **r >= cut)
        .map(|(k, _)| (-n * ys[k + 1]).exp() - (-n * ys[k]).exp())
        .collect();
    let (d_mean, d_sd) = moments(increments.iter().copied());
    let mut mu1 = -d_mean / n;
    let mut sigma1 = d_sd / n;
    if !(mu1 > 0.0) || !mu1.is_finite() {
        mu1 = mu0.abs().max(1e-8);
    }
    if !(sigma1 > 0.0) || !sigma1.is_finite() {
        sigma1 = sigma0;
    }

    let params = ModelParams {
        regime: RegimeParams {
            mu0,
            sigma0,
            mu1,
            sigma1,
            n,
            kappa: config.kappa,
        },
        q: [
            [config.q00_init, 1.0 - config.q00_init],
            [1.0 - config.q11_init, config.q11_init],
        ],
        switch_density: config.switch_density,
    };
    params.validate()?;
    Ok(params)
}

/// Starting point whose bubble regime is fitted to the contiguous block (one
/// of `blocks`) with the highest mean log return; normal regime as in
/// [`initial_params`].
pub fn block_initial_params(series: &LogPriceSeries, config: &EmConfig, blocks: usize) -> Result<ModelParams> {
    let mut params = initial_params(series, config)?;
    let ys = series.log_prices();
    let steps = ys.len() - 1;
    let blocks = blocks.clamp(1, steps / 2);
    let size = steps / blocks;
    let best = (0..blocks)
        .map(|b| {
            let lo = b * size;
            let hi = if b + 1 == blocks { steps } else { lo + size };
            (lo, hi, (ys[hi] - ys[lo]) / (hi - lo) as f64)
        })
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one block");
    let n = config.n_init;
    let increments = (best.0..best.1).map(|k| (-n * ys[k + 1]).exp() - (-n * ys[k]).exp());
    let (d_mean, d_sd) = moments(increments);
    let mu1 = -d_mean / n;
    let sigma1 = d_sd / n;
    if mu1.is_finite() && mu1 != 0.0 && sigma1.is_finite() && sigma1 > 0.0 {
        params.regime.mu1 = mu1;
        params.regime.sigma1 = sigma1;
    }
    Ok(params)
}


/// One M-step from the smoothed weights. A regime (or transition row) whose
/// weight vanished keeps its previous values.
fn update(params: &ModelParams, smoother: &SmootherOutput, series: &LogPriceSeries, config: &EmConfig) -> Result<ModelParams> {
    let mut next = *params;
    let n = match solve_feedback_exponent_profiled(smoother, series, config.n_search) {
        Ok(n) => n,
        Err(Error::DegenerateRegime(_)) => params.regime.n,
        Err(e) => return Err(e),
    };
    let u = m_step_partial(smoother, series, n)?;
    if let Some((mu0, sigma0)) = u.normal {
        if mu0 != 0.0 {
            next.regime.mu0 = mu0;
            next.regime.sigma0 = sigma0;
        }
    }
    if let Some((mu1, sigma1)) = u.bubble {
        if mu1 != 0.0 {
            next.regime.mu1 = mu1;
            next.regime.sigma1 = sigma1;
            next.regime.n = n;
        }
    }
    for (i, row) in u.q_rows.iter().enumerate() {
        if let Some(row) = row {
            next.q[i] = *row;
        }
    }
    Ok(next)
}

/// Calibrates the switching model by expectation-maximization.
///
/// Each iteration runs the forward filter and backward smoother under the
/// current parameters, then updates `n` (with the bubble drift and scale
/// profiled out), the closed-form regime parameters at that `n`, the
/// transition matrix and, by default, the initial state law. Iteration stops
/// when the relative log-likelihood change reaches `config.tolerance` or after
/// `config.max_iterations` evaluations; non-convergence is reported in the
/// trace, not as an error.
pub fn em_fit(series: &LogPriceSeries, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    if series.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: series.len(),
        });
    }
    if let Some(p) = config.start {
        p.validate()?;
        return em_from(series, config, p);
    }
    let first = em_from(series, config, initial_params(series, config)?);
    if !config.multi_start {
        return first;
    }
    let second = em_from(series, config, block_initial_params(series, config, START_BLOCKS)?);
    match (first, second) {
        (Ok(a), Ok(b)) => Ok(if b.filter.loglik > a.filter.loglik { b } else { a }),
        (Ok(a), Err(e)) | (Err(e), Ok(a)) => {
            log::debug!("{}: one EM start failed: {e}", series.asset_id());
            Ok(a)
        }
        (Err(e), Err(_)) => Err(e),
    }
}

const START_BLOCKS: usize = 8;

fn em_from(series: &LogPriceSeries, config: &EmConfig, mut params: ModelParams) -> Result<EmFit> {
    let wrap = |iteration: usize| move |e: Error| Error::Iteration {
        iteration,
        source: Box::new(e),
    };
    let mut law = match config.initial {
        InitialDistribution::Fixed(law) => law,
        _ => params.stationary(),
    };

    let mut trace = EmTrace::default();
    let mut prev_ll: Option<f64> = None;
    loop {
        let k = trace.records.len();
        if config.initial == InitialDistribution::Stationary {
            law = params.stationary();
        }
        let filter = hamilton_filter(series, &params, law).map_err(wrap(k))?;
        let smoother = kim_smoother(&filter).map_err(wrap(k))?;
        let loglik = filter.loglik;
        let delta = prev_ll.map(|prev| (loglik - prev).abs() / prev.abs().max(f64::MIN_POSITIVE));
        trace.records.push(EmIteration { params, loglik, delta });

        let converged = delta.is_some_and(|d| d <= config.tolerance);
        if converged || trace.records.len() >= config.max_iterations {
            trace.converged = converged;
            log::debug!(
                "{}: EM stopped after {} iterations (converged: {converged}, lnL = {loglik})",
                series.asset_id(),
                trace.records.len()
            );
            return Ok(EmFit {
                params,
                trace,
                filter,
                smoother,
            });
        }
        prev_ll = Some(loglik);
        params = update(&params, &smoother, series, config).map_err(wrap(k))?;
        if config.initial == InitialDistribution::Estimated {
            law = smoother.marginal(0);
        }
    }
}
