//! Drawdowns, ranks, least squares and correlation statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

/// Largest peak-to-trough decline as a percentage of the series maximum.
pub fn max_loss(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let mut peak = f64::NEG_INFINITY;
    let mut drawdown = 0.0_f64;
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("value {v} at index {i} is not a positive number")));
        }
        peak = peak.max(v);
        drawdown = drawdown.max(peak - v);
    }
    Ok(100.0 * drawdown / peak)
}

/// Ascending ranks from 1; tied values share the mean of their ranks.
pub fn rank_transform(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end.
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Two-sided significance level reached by a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Significance {
    None,
    /// p < 0.1
    Weak,
    /// p < 0.05
    Moderate,
    /// p < 0.01
    Strong,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            Significance::Strong
        } else if p < 0.05 {
            Significance::Moderate
        } else if p < 0.1 {
            Significance::Weak
        } else {
            Significance::None
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::Weak => "*",
            Significance::Moderate => "**",
            Significance::Strong => "***",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub name: String,
    pub values: Vec<f64>,
}

impl Regressor {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub significance: Significance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub intercept: Option<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
    pub observations: usize,
    pub df_residual: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Relative size of a QR diagonal entry below which a column counts as
/// linearly dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares of `y` on the regressors via Householder QR.
///
/// Standard errors use the unbiased residual variance. Without an intercept
/// R² is the uncentered one. Rank deficiency is reported against the first
/// column that lies in the span of the preceding ones.
pub fn ols_regress(y: &[f64], regressors: &[Regressor], include_intercept: bool) -> Result<RegressionResult> {
    let n = y.len();
    let k = regressors.len();
    if k == 0 && !include_intercept {
        return Err(Error::invalid("regression needs at least one column"));
    }
    for r in regressors {
        if r.values.len() != n {
            return Err(Error::invalid(format!(
                "regressor `{}` has {} values, response has {n}",
                r.name,
                r.values.len()
            )));
        }
    }
    if n <= k + 1 {
        return Err(Error::InsufficientData { needed: k + 2, got: n });
    }
    if let Some(v) = y
        .iter()
        .chain(regressors.iter().flat_map(|r| r.values.iter()))
        .find(|v| !v.is_finite())
    {
        return Err(Error::invalid(format!("non-finite value {v} in regression data")));
    }

    let mut names: Vec<&str> = Vec::with_capacity(k + 1);
    let mut columns: Vec<&[f64]> = Vec::with_capacity(k + 1);
    let ones = vec![1.0; n];
    if include_intercept {
        names.push("intercept");
        columns.push(&ones);
    }
    for r in regressors {
        names.push(&r.name);
        columns.push(&r.values);
    }
    let p = columns.len();
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(Error::Collinearity {
                column: names[j].to_string(),
            });
        }
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::invalid("singular triangular factor"))?;
    let resid = &yv - &x * &beta;
    let sse = resid.norm_squared();
    let df = n - p;
    let sigma2 = sse / df as f64;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::invalid("singular triangular factor"))?;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let coef = |j: usize| {
        let se = (sigma2 * r_inv.row(j).norm_squared()).sqrt();
        let t = beta[j] / se;
        let p_value = if t.is_nan() {
            1.0
        } else {
            2.0 * (1.0 - t_dist.cdf(t.abs()))
        };
        Coefficient {
            name: names[j].to_string(),
            estimate: beta[j],
            std_error: se,
            t_statistic: t,
            p_value,
            significance: Significance::from_p(p_value),
        }
    };

    let (sst, model_df, total_df) = if include_intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>(), p - 1, n - 1)
    } else {
        (y.iter().map(|v| v * v).sum::<f64>(), p, n)
    };
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * total_df as f64 / df as f64;
    let (f_statistic, f_p_value) = if model_df == 0 {
        (0.0, 1.0)
    } else {
        let f = (r_squared / model_df as f64) / ((1.0 - r_squared) / df as f64);
        let f_dist = FisherSnedecor::new(model_df as f64, df as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let pv = if f.is_finite() { 1.0 - f_dist.cdf(f) } else { 0.0 };
        (f, pv)
    };

    let offset = usize::from(include_intercept);
    Ok(RegressionResult {
        coefficients: (offset..p).map(coef).collect(),
        intercept: include_intercept.then(|| coef(0)),
        r_squared,
        adj_r_squared,
        f_statistic,
        f_p_value,
        observations: n,
        df_residual: df,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `None` when the statistic is undefined for the data.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len() });
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {v}")));
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64], statistic: &'static str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation { statistic });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_unchecked(x, y, "pearson")
}

/// Pearson correlation of the average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_unchecked(&rank_transform(x), &rank_transform(y), "spearman")
}

/// Kendall's tau-b, corrected for ties in either variable.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tied_x += 1,
                (_, 0) => tied_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + tied_x) as f64;
    let n2 = (concordant + discordant + tied_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::UndefinedCorrelation { statistic: "kendall" });
    }
    Ok(((concordant - discordant) as f64 / (n1 * n2).sqrt()).clamp(-1.0, 1.0))
}

/// All three statistics; an undefined one is `None` rather than an error.
pub fn correlations(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    check_pair(x, y)?;
    let opt = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(CorrelationReport {
        pearson: opt(pearson(x, y))?,
        spearman: opt(spearman(x, y))?,
        kendall: opt(kendall_tau_b(x, y))?,
    })
}
