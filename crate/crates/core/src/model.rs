//! Bubble model primitives: regime transition densities, the deterministic
//! finite-time-singularity solution and exact-solution path simulation.
//!
//! The bubble regime follows the nonlinear positive-feedback SDE
//! `dp = mu p^n dt + sigma p^n dW` (conditional on no crash), whose solution is
//! `p(t) = [p0^-n - n mu t - n sigma W_t]^(-1/n)`. In log-price `y = ln p` the
//! transformed variable `x = e^(-n y)` is therefore a Brownian motion with
//! drift `-n mu` and volatility `n sigma`, which is what both the density and
//! the simulator exploit.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Exponent bound for `e^(-n y)` terms; beyond it the bubble density is
/// reported as `-inf`.
pub const EXP_CLAMP: f64 = 700.0;

/// Default regime-switch amplitude bound.
pub const DEFAULT_KAPPA: f64 = 0.6;

/// Default termination floor for the simulated denominator.
pub const DEFAULT_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Time-indexed log prices of one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPriceSeries {
    asset_id: String,
    timestamps: Vec<NaiveDate>,
    log_prices: Vec<f64>,
}

impl LogPriceSeries {
    pub fn new(
        asset_id: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        log_prices: Vec<f64>,
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if timestamps.len() != log_prices.len() {
            return Err(Error::invalid(format!(
                "{asset_id}: {} timestamps but {} log prices",
                timestamps.len(),
                log_prices.len()
            )));
        }
        if log_prices.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: log_prices.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "{asset_id}: timestamps not strictly increasing at index {}",
                w + 1
            )));
        }
        if let Some(i) = log_prices.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!(
                "{asset_id}: non-finite log price at index {i}"
            )));
        }
        Ok(Self {
            asset_id,
            timestamps,
            log_prices,
        })
    }

    /// Builds a series from positive prices, taking logs.
    pub fn from_prices(
        asset_id: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        prices: &[f64],
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if let Some(i) = prices.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "{asset_id}: non-positive price at index {i}"
            )));
        }
        Self::new(asset_id, timestamps, prices.iter().map(|p| p.ln()).collect())
    }

    /// Consecutive calendar days starting at `start`; handy for synthetic data.
    pub fn with_daily_dates(
        asset_id: impl Into<String>,
        start: NaiveDate,
        log_prices: Vec<f64>,
    ) -> Result<Self> {
        let timestamps = start.iter_days().take(log_prices.len()).collect();
        Self::new(asset_id, timestamps, log_prices)
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    pub fn len(&self) -> usize {
        self.log_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prices.is_empty()
    }

    /// Restricts to timestamps within `[start, end]` (inclusive, either bound optional).
    pub fn window(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Result<Self> {
        let (ts, ys): (Vec<_>, Vec<_>) = self
            .timestamps
            .iter()
            .zip(&self.log_prices)
            .filter(|(d, _)| start.is_none_or(|s| **d >= s) && end.is_none_or(|e| **d <= e))
            .map(|(d, y)| (*d, *y))
            .unzip();
        Self::new(self.asset_id.clone(), ts, ys)
    }

    /// Shifts log prices so the first observation is zero (price rebased to 1).
    pub fn rebased(&self) -> Self {
        let y0 = self.log_prices[0];
        Self {
            asset_id: self.asset_id.clone(),
            timestamps: self.timestamps.clone(),
            log_prices: self.log_prices.iter().map(|y| y - y0).collect(),
        }
    }
}

/// Per-regime parameters of the switching model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    /// Drift of the normal regime per step.
    pub mu0: f64,
    /// Volatility of the normal regime per step.
    pub sigma0: f64,
    /// Bubble drift coefficient.
    pub mu1: f64,
    /// Bubble noise scale.
    pub sigma1: f64,
    /// Nonlinear feedback exponent.
    pub n: f64,
    /// Regime-switch amplitude bound.
    pub kappa: f64,
}

impl RegimeParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mu0, self.sigma0, self.mu1, self.sigma1, self.n, self.kappa];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite regime parameter: {self:?}")));
        }
        if self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(Error::invalid("volatilities must be positive"));
        }
        if self.n <= 0.0 {
            return Err(Error::invalid("feedback exponent n must be positive"));
        }
        if self.kappa <= 0.0 {
            return Err(Error::invalid("kappa must be positive"));
        }
        Ok(())
    }
}

/// Direction of a regime switch between consecutive observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchDirection {
    /// Bubble at `t-1`, normal at `t`.
    BubbleEnd,
    /// Normal at `t-1`, bubble at `t`.
    BubbleStart,
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite input in {values:?}")))
    }
}

/// Log density of `y_t` given `y_prev` in the normal (geometric random walk) regime.
pub fn gbm_transition_logdensity(y_t: f64, y_prev: f64, mu0: f64, sigma0: f64) -> Result<f64> {
    check_finite(&[y_t, y_prev, mu0, sigma0])?;
    if sigma0 <= 0.0 {
        return Err(Error::invalid("sigma0 must be positive"));
    }
    Ok(gbm_logdensity_unchecked(y_t, y_prev, mu0, sigma0))
}

#[inline]
pub(crate) fn gbm_logdensity_unchecked(y_t: f64, y_prev: f64, mu0: f64, sigma0: f64) -> f64 {
    let z = (y_t - y_prev - mu0) / sigma0;
    -HALF_LN_2PI - sigma0.ln() - 0.5 * z * z
}

/// Log density of `y_t` given `y_prev` while the bubble persists.
///
/// `e^(-n y_t) | e^(-n y_prev) ~ N(e^(-n y_prev) - n mu1, (n sigma1)^2)`, mapped
/// back to `y_t` with the Jacobian `n e^(-n y_t)`. Returns `-inf` when either
/// exponent exceeds [`EXP_CLAMP`] in magnitude or the density underflows.
pub fn bubble_transition_logdensity(
    y_t: f64,
    y_prev: f64,
    mu1: f64,
    sigma1: f64,
    n: f64,
) -> Result<f64> {
    check_finite(&[y_t, y_prev, mu1, sigma1, n])?;
    if n <= 0.0 {
        return Err(Error::invalid("feedback exponent n must be positive"));
    }
    if sigma1 <= 0.0 {
        return Err(Error::invalid("sigma1 must be positive"));
    }
    Ok(bubble_logdensity_unchecked(y_t, y_prev, mu1, sigma1, n))
}

#[inline]
pub(crate) fn bubble_logdensity_unchecked(y_t: f64, y_prev: f64, mu1: f64, sigma1: f64, n: f64) -> f64 {
    let a = -n * y_t;
    let b = -n * y_prev;
    if a.abs() > EXP_CLAMP || b.abs() > EXP_CLAMP {
        return f64::NEG_INFINITY;
    }
    // expm1 keeps the difference accurate when n|y| is tiny.
    let diff = a.exp_m1() - b.exp_m1();
    let scale = n * sigma1;
    let z = (diff + n * mu1) / scale;
    let value = -HALF_LN_2PI - scale.ln() - 0.5 * z * z + n.ln() + a;
    if value.is_nan() {
        f64::NEG_INFINITY
    } else {
        value
    }
}

/// Log "density" of a regime switch. The height `|1/mu|` on the indicator set
/// is used as is, so these are not normalized densities in general.
pub fn switch_logdensity(
    y_t: f64,
    y_prev: f64,
    direction: SwitchDirection,
    params: &RegimeParams,
) -> Result<f64> {
    check_finite(&[y_t, y_prev])?;
    if !(params.kappa > 0.0) {
        return Err(Error::invalid("kappa must be positive"));
    }
    let mu = match direction {
        SwitchDirection::BubbleEnd => params.mu0,
        SwitchDirection::BubbleStart => params.mu1,
    };
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::invalid(format!(
            "{direction:?} switch density needs a finite nonzero drift, got {mu}"
        )));
    }
    Ok(switch_logdensity_unchecked(y_t, y_prev, direction, params))
}

#[inline]
pub(crate) fn switch_logdensity_unchecked(
    y_t: f64,
    y_prev: f64,
    direction: SwitchDirection,
    params: &RegimeParams,
) -> f64 {
    let (inside, mu) = match direction {
        SwitchDirection::BubbleEnd => (-params.kappa <= y_t && y_t < y_prev, params.mu0),
        SwitchDirection::BubbleStart => (y_prev <= y_t && y_t <= params.kappa, params.mu1),
    };
    if inside {
        -mu.abs().ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Critical time `t_c = p0^-n / (n mu)` of the deterministic solution.
pub fn critical_time(p0: f64, mu: f64, n: f64) -> Result<f64> {
    if !(p0 > 0.0 && mu > 0.0 && n > 0.0) || !(p0 * mu * n).is_finite() {
        return Err(Error::invalid("p0, mu and n must be positive and finite"));
    }
    Ok(p0.powf(-n) / (n * mu))
}

/// Noise-free bubble price `(n mu)^(-1/n) (t_c - t)^(-1/n)`.
pub fn deterministic_fts_price(t: f64, p0: f64, mu: f64, n: f64) -> Result<f64> {
    let t_c = critical_time(p0, mu, n)?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("time must be finite and nonnegative, got {t}")));
    }
    if t >= t_c {
        return Err(Error::Singularity { t, t_c });
    }
    if t == 0.0 {
        return Ok(p0);
    }
    Ok((n * mu).powf(-1.0 / n) * (t_c - t).powf(-1.0 / n))
}

/// Mean and shape of the inverse-Gaussian law of the stochastic critical time.
pub fn ig_params(p0: f64, mu: f64, sigma: f64, n: f64) -> (f64, f64) {
    let level = p0.powf(-n);
    let mean = level / (n * mu);
    let shape = (level / (n * sigma)).powi(2);
    (mean, shape)
}

/// Parameters of one exact-solution bubble path simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaPathConfig {
    pub p0: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Feedback exponent; `0` gives geometric Brownian motion.
    pub n: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// The path terminates once the bracketed denominator falls to this value.
    pub denominator_floor: f64,
}

impl SaPathConfig {
    pub fn new(p0: f64, mu: f64, sigma: f64, n: f64, dt: f64, max_steps: usize) -> Self {
        Self {
            p0,
            mu,
            sigma,
            n,
            dt,
            max_steps,
            denominator_floor: DEFAULT_DENOMINATOR_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite(&[self.p0, self.mu, self.sigma, self.n, self.dt, self.denominator_floor])?;
        if self.p0 <= 0.0 {
            return Err(Error::invalid("p0 must be positive"));
        }
        if self.sigma < 0.0 || self.n < 0.0 {
            return Err(Error::invalid("sigma and n must be nonnegative"));
        }
        if self.n > 0.0 && self.mu <= 0.0 {
            return Err(Error::invalid("mu must be positive for a bubble path"));
        }
        if self.dt <= 0.0 {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.max_steps < 1 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if self.denominator_floor <= 0.0 {
            return Err(Error::invalid("denominator floor must be positive"));
        }
        Ok(())
    }
}

/// One simulated path on the grid `t_k = k dt`, `k = 0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub log_prices: Vec<f64>,
    /// Driving Brownian motion on the same grid (`W_0 = 0`).
    pub brownian: Vec<f64>,
    pub hit_critical: bool,
    /// Grid index where the denominator first reached the floor. The stored log
    /// price there uses the floor value.
    pub critical_time_index: Option<usize>,
    pub dt: f64,
}

impl SimulatedPath {
    pub fn critical_time(&self) -> Option<f64> {
        self.critical_time_index.map(|k| k as f64 * self.dt)
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Walks the Brownian grid, calling `visit(k, W_k)` for `k = 0..=max_steps`
/// until it returns `false`.
fn walk_brownian(cfg: &SaPathConfig, rng: &mut ChaCha8Rng, mut visit: impl FnMut(usize, f64) -> bool) {
    let sqrt_dt = cfg.dt.sqrt();
    let mut w = 0.0;
    if !visit(0, w) {
        return;
    }
    for k in 1..=cfg.max_steps {
        let z: f64 = StandardNormal.sample(rng);
        w += sqrt_dt * z;
        if !visit(k, w) {
            return;
        }
    }
}

#[inline]
fn denominator(cfg: &SaPathConfig, t: f64, w: f64) -> f64 {
    cfg.p0.powf(-cfg.n) - cfg.n * cfg.mu * t - cfg.n * cfg.sigma * w
}

fn simulate_stream(cfg: &SaPathConfig, seed: u64, stream: u64) -> SimulatedPath {
    let mut rng = path_rng(seed, stream);
    let mut log_prices = Vec::new();
    let mut brownian = Vec::new();
    let mut critical = None;
    let ln_p0 = cfg.p0.ln();
    walk_brownian(cfg, &mut rng, |k, w| {
        let t = k as f64 * cfg.dt;
        brownian.push(w);
        if cfg.n == 0.0 {
            log_prices.push(ln_p0 + cfg.mu * t + cfg.sigma * w);
            return true;
        }
        let den = denominator(cfg, t, w);
        if den <= cfg.denominator_floor {
            log_prices.push(-cfg.denominator_floor.ln() / cfg.n);
            critical = Some(k);
            return false;
        }
        log_prices.push(-den.ln() / cfg.n);
        true
    });
    SimulatedPath {
        log_prices,
        brownian,
        hit_critical: critical.is_some(),
        critical_time_index: critical,
        dt: cfg.dt,
    }
}

/// Simulates one path from the exact solution on a Brownian grid.
///
/// The log price is `-(1/n) ln[p0^-n - n mu t - n sigma W_t]` (or
/// `ln p0 + mu t + sigma W_t` for `n = 0`). Deterministic for a given seed.
pub fn simulate_sa_path(cfg: &SaPathConfig, seed: u64) -> Result<SimulatedPath> {
    cfg.validate()?;
    Ok(simulate_stream(cfg, seed, 0))
}

/// Critical times of `count` independent paths (`None` when a path survives
/// `max_steps`). Path `i` uses RNG stream `i`, so path 0 matches
/// [`simulate_sa_path`] with the same seed and the output does not depend on
/// the execution strategy.
pub fn simulate_critical_times(
    cfg: &SaPathConfig,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Option<f64>>> {
    cfg.validate()?;
    if cfg.n == 0.0 {
        return Err(Error::invalid("critical times need n > 0"));
    }
    Ok(par::map_range(count, exec, |i| {
        let mut rng = path_rng(seed, i as u64);
        let mut hit = None;
        walk_brownian(cfg, &mut rng, |k, w| {
            if denominator(cfg, k as f64 * cfg.dt, w) <= cfg.denominator_floor {
                hit = Some(k as f64 * cfg.dt);
                false
            } else {
                true
            }
        });
        hit
    }))
}
