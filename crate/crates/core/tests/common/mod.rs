//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use bubblenet_core::hmm::{ModelParams, SwitchDensity, TransitionDensities, DENSITY_FLOOR};
use bubblenet_core::model::{LogPriceSeries, RegimeParams};
use chrono::NaiveDate;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2001, 1, 1).unwrap()
}

pub fn series(ys: &[f64]) -> LogPriceSeries {
    LogPriceSeries::with_daily_dates("s", day0(), ys.to_vec()).unwrap()
}

/// Random parameters under which both switch densities stay usable.
pub fn random_params(rng: &mut impl Rng) -> ModelParams {
    let sign = |rng: &mut dyn rand::RngCore| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let q00 = rng.gen_range(0.05..0.95);
    let q11 = rng.gen_range(0.05..0.95);
    ModelParams {
        regime: RegimeParams {
            mu0: sign(rng) * rng.gen_range(0.001..0.01),
            sigma0: rng.gen_range(0.005..0.05),
            mu1: rng.gen_range(0.001..0.02),
            sigma1: rng.gen_range(0.005..0.05),
            n: rng.gen_range(0.1..2.0),
            kappa: rng.gen_range(0.02..0.6),
        },
        q: [[q00, 1.0 - q00], [1.0 - q11, q11]],
        switch_density: if rng.gen::<bool>() {
            SwitchDensity::UniformMove
        } else {
            SwitchDensity::DriftHeight
        },
    }
}

/// Posteriors obtained by summing over every hidden path.
pub struct Enumerated {
    /// `P(s_t = 1 | y_0..y_t)`.
    pub filtering: Vec<f64>,
    /// `P(s_t = 1 | y_0..y_T)`.
    pub smoothing: Vec<f64>,
    /// `P(s_{t-1} = i, s_t = j | y_0..y_T)` at index `t - 1`.
    pub pairwise: Vec<[[f64; 2]; 2]>,
    /// `ln p(y_1..y_T | y_0)`.
    pub loglik: f64,
}

fn path_weight(ys: &[f64], params: &ModelParams, law: [f64; 2], path: &[usize]) -> f64 {
    let mut w = law[path[0]];
    for t in 1..path.len() {
        let f = params.densities(ys[t], ys[t - 1]);
        let (i, j) = (path[t - 1], path[t]);
        w *= params.q[i][j] * f[i][j].max(DENSITY_FLOOR);
    }
    w
}

fn paths(len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..1usize << len).map(move |code| (0..len).map(|t| (code >> t) & 1).collect())
}

pub fn enumerate_posteriors(ys: &[f64], params: &ModelParams, law: [f64; 2]) -> Enumerated {
    let len = ys.len();
    let mut filtering = Vec::with_capacity(len);
    for t in 0..len {
        let (mut total, mut bubble) = (0.0, 0.0);
        for p in paths(t + 1) {
            let w = path_weight(&ys[..=t], params, law, &p);
            total += w;
            if p[t] == 1 {
                bubble += w;
            }
        }
        filtering.push(bubble / total);
    }

    let mut total = 0.0;
    let mut smoothing = vec![0.0; len];
    let mut pairwise = vec![[[0.0; 2]; 2]; len - 1];
    for p in paths(len) {
        let w = path_weight(ys, params, law, &p);
        total += w;
        for t in 0..len {
            if p[t] == 1 {
                smoothing[t] += w;
            }
            if t > 0 {
                pairwise[t - 1][p[t - 1]][p[t]] += w;
            }
        }
    }
    smoothing.iter_mut().for_each(|v| *v /= total);
    pairwise.iter_mut().flatten().flatten().for_each(|v| *v /= total);
    Enumerated {
        filtering,
        smoothing,
        pairwise,
        loglik: total.ln(),
    }
}

/// Transfer entropy `source -> target` straight from the definition, with
/// probabilities estimated as relative frequencies of the observed tuples.
pub fn brute_te(target: &[usize], source: &[usize], base: f64) -> f64 {
    let n = target.len() - 1;
    let mut triple: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for t in 1..=n {
        *triple.entry((target[t], target[t - 1], source[t - 1])).or_default() += 1.0 / n as f64;
    }
    let mut te = 0.0;
    for (&(a, b, c), &p_abc) in &triple {
        let p_b: f64 = triple.iter().filter(|(k, _)| k.1 == b).map(|(_, v)| v).sum();
        let p_ab: f64 = triple.iter().filter(|(k, _)| k.0 == a && k.1 == b).map(|(_, v)| v).sum();
        let p_bc: f64 = triple.iter().filter(|(k, _)| k.1 == b && k.2 == c).map(|(_, v)| v).sum();
        te += p_abc * ((p_abc / p_bc) / (p_ab / p_b)).log(base);
    }
    te
}

/// Least squares by Gauss-Jordan elimination on the normal equations.
pub struct NormalEquations {
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub f_statistic: f64,
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let p = a.len();
    let mut inv: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for col in 0..p {
        let pivot = (col..p).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for k in 0..p {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..p {
            if r != col {
                let f = a[r][col];
                for k in 0..p {
                    a[r][k] -= f * a[col][k];
                    inv[r][k] -= f * inv[col][k];
                }
            }
        }
    }
    inv
}

/// `columns` excludes the intercept, which is prepended when requested.
pub fn normal_equations(y: &[f64], columns: &[Vec<f64>], intercept: bool) -> NormalEquations {
    let n = y.len();
    let mut x: Vec<Vec<f64>> = Vec::new();
    if intercept {
        x.push(vec![1.0; n]);
    }
    x.extend(columns.iter().cloned());
    let p = x.len();
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| (0..n).map(|t| x[i][t] * x[j][t]).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..p).map(|i| (0..n).map(|t| x[i][t] * y[t]).sum()).collect();
    let inv = invert(xtx);
    let beta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum()).collect();
    let rss: f64 = (0..n)
        .map(|t| {
            let fit: f64 = (0..p).map(|i| beta[i] * x[i][t]).sum();
            (y[t] - fit).powi(2)
        })
        .sum();
    let tss: f64 = if intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };
    let df = (n - p) as f64;
    let s2 = rss / df;
    let k = if intercept { p - 1 } else { p } as f64;
    NormalEquations {
        std_errors: (0..p).map(|i| (s2 * inv[i][i]).sqrt()).collect(),
        beta,
        r_squared: 1.0 - rss / tss,
        f_statistic: ((tss - rss) / k) / s2,
    }
}

/// CDF of the inverse-Gaussian law with the given mean and shape.
pub fn inverse_gaussian_cdf(t: f64, mean: f64, shape: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t.is_infinite() {
        return 1.0;
    }
    let z = Normal::standard();
    let r = (shape / t).sqrt();
    z.cdf(r * (t / mean - 1.0)) + (2.0 * shape / mean).exp() * z.cdf(-r * (t / mean + 1.0))
}

/// One-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

/// Composite Simpson rule on `[a, b]` with an even number of panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let inner: f64 = (1..panels)
        .map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// The 3-node matrix `x -> y 0.4, x -> z 0.2, y -> x 0.1, z -> y 0.3` with
/// `x`, `y` industrial and `z` financial.
pub fn hand_matrix() -> (bubblenet_core::te::SIIMatrix, bubblenet_core::network::NodeGroups) {
    use bubblenet_core::network::{Group, NodeGroups};
    let m = bubblenet_core::te::SIIMatrix::new(
        vec!["x".into(), "y".into(), "z".into()],
        vec![vec![0.0, 0.4, 0.2], vec![0.1, 0.0, 0.0], vec![0.0, 0.3, 0.0]],
        None,
    )
    .unwrap();
    let g = NodeGroups::new()
        .with("x", Group::Industrial)
        .unwrap()
        .with("y", Group::Industrial)
        .unwrap()
        .with("z", Group::Financial)
        .unwrap();
    (m, g)
}
