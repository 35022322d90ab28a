//! Binned transfer entropy between bubble-probability series, and the
//! speculative influence intensity (SII) matrix built from it.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::ProbabilitySeries;
use crate::par::{map_range, Execution};

pub const DEFAULT_BIN_COUNT: usize = 10;
pub const DEFAULT_BASE: f64 = 10.0;

/// Residue below `-RESIDUE_WARN` before clamping is logged.
const RESIDUE_WARN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedSeries {
    bins: Vec<usize>,
    bin_count: usize,
}

impl BinnedSeries {
    pub fn new(bins: Vec<usize>, bin_count: usize) -> Result<Self> {
        if bin_count < 2 {
            return Err(Error::invalid(format!("bin count must be at least 2, got {bin_count}")));
        }
        if let Some(b) = bins.iter().find(|&&b| b >= bin_count) {
            return Err(Error::invalid(format!("bin {b} outside [0, {}]", bin_count - 1)));
        }
        Ok(Self { bins, bin_count })
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Equal-width bin of a value in `[0, 1]`; `1.0` falls in the last bin.
pub fn bin_of(value: f64, bin_count: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(format!("value {value} outside [0,1]")));
    }
    Ok(((value * bin_count as f64).floor() as usize).min(bin_count - 1))
}

pub fn discretize_values(values: &[f64], bin_count: usize) -> Result<BinnedSeries> {
    if bin_count < 2 {
        return Err(Error::invalid(format!("bin count must be at least 2, got {bin_count}")));
    }
    let bins = values.iter().map(|&v| bin_of(v, bin_count)).collect::<Result<_>>()?;
    Ok(BinnedSeries { bins, bin_count })
}

pub fn discretize(probs: &ProbabilitySeries, bin_count: usize) -> Result<BinnedSeries> {
    discretize_values(&probs.values, bin_count)
}

/// Counts of `(u_t, u_{t-1}, v_{t-1})` and its marginals over the aligned
/// transitions `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    bin_count: usize,
    sample_size: u64,
    /// `[u_{t-1}]`
    past: Vec<u64>,
    /// `[u_t][u_{t-1}]`
    target_past: Vec<u64>,
    /// `[u_{t-1}][v_{t-1}]`
    past_source: Vec<u64>,
    /// `[u_t][u_{t-1}][v_{t-1}]`
    triple: Vec<u64>,
}

impl JointHistogram {
    pub fn new(u: &BinnedSeries, v: &BinnedSeries) -> Result<Self> {
        Self::with_filter(u, v, |_| true)
    }

    /// Histogram over the transitions `t` for which `keep(t)` holds.
    pub fn with_filter(u: &BinnedSeries, v: &BinnedSeries, keep: impl Fn(usize) -> bool) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::invalid(format!("series lengths differ: {} vs {}", u.len(), v.len())));
        }
        if u.len() < 3 {
            return Err(Error::invalid(format!("need at least 3 observations, got {}", u.len())));
        }
        if u.bin_count != v.bin_count {
            return Err(Error::invalid(format!(
                "bin counts differ: {} vs {}",
                u.bin_count, v.bin_count
            )));
        }
        let b = u.bin_count;
        let mut h = Self {
            bin_count: b,
            sample_size: 0,
            past: vec![0; b],
            target_past: vec![0; b * b],
            past_source: vec![0; b * b],
            triple: vec![0; b * b * b],
        };
        let (ub, vb) = (&u.bins, &v.bins);
        for t in (1..ub.len()).filter(|&t| keep(t)) {
            let (ut, up, vp) = (ub[t], ub[t - 1], vb[t - 1]);
            h.sample_size += 1;
            h.past[up] += 1;
            h.target_past[ut * b + up] += 1;
            h.past_source[up * b + vp] += 1;
            h.triple[(ut * b + up) * b + vp] += 1;
        }
        Ok(h)
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    pub fn triple_count(&self, ut: usize, up: usize, vp: usize) -> u64 {
        self.triple[(ut * self.bin_count + up) * self.bin_count + vp]
    }

    pub fn target_past_count(&self, ut: usize, up: usize) -> u64 {
        self.target_past[ut * self.bin_count + up]
    }

    pub fn past_source_count(&self, up: usize, vp: usize) -> u64 {
        self.past_source[up * self.bin_count + vp]
    }

    pub fn past_count(&self, up: usize) -> u64 {
        self.past[up]
    }

    fn freq(&self, c: u64) -> f64 {
        c as f64 / self.sample_size as f64
    }

    pub fn p_triple(&self, ut: usize, up: usize, vp: usize) -> f64 {
        self.freq(self.triple_count(ut, up, vp))
    }

    pub fn p_target_past(&self, ut: usize, up: usize) -> f64 {
        self.freq(self.target_past_count(ut, up))
    }

    pub fn p_past_source(&self, up: usize, vp: usize) -> f64 {
        self.freq(self.past_source_count(up, vp))
    }

    pub fn p_past(&self, up: usize) -> f64 {
        self.freq(self.past[up])
    }

    /// Transfer entropy `V -> U` in the given logarithm base. Unoccupied
    /// cells contribute nothing; a small negative total from rounding is
    /// clamped to 0.
    pub fn transfer_entropy(&self, base: f64) -> Result<f64> {
        check_base(base)?;
        if self.sample_size == 0 {
            return Ok(0.0);
        }
        let b = self.bin_count;
        let n = self.sample_size as f64;
        let mut total = 0.0;
        for ut in 0..b {
            for up in 0..b {
                let tp = self.target_past[ut * b + up];
                if tp == 0 {
                    continue;
                }
                for vp in 0..b {
                    let c = self.triple[(ut * b + up) * b + vp];
                    if c == 0 {
                        continue;
                    }
                    // The sample size cancels inside the log ratio.
                    let ratio = (c as f64 * self.past[up] as f64) / (tp as f64 * self.past_source[up * b + vp] as f64);
                    total += c as f64 / n * ratio.ln();
                }
            }
        }
        let te = total / base.ln();
        if te < -RESIDUE_WARN {
            log::warn!("transfer entropy residue {te:e} clamped to 0");
        }
        Ok(te.max(0.0))
    }
}

fn check_base(base: f64) -> Result<()> {
    if !(base > 0.0) || base == 1.0 || !base.is_finite() {
        return Err(Error::invalid(format!("logarithm base must be positive and not 1, got {base}")));
    }
    Ok(())
}

/// Transfer entropy from `v` (source) to `u` (target) with one lag each.
pub fn transfer_entropy(u: &BinnedSeries, v: &BinnedSeries, base: f64) -> Result<f64> {
    check_base(base)?;
    JointHistogram::new(u, v)?.transfer_entropy(base)
}

/// Settings shared by [`sii`] and [`sii_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeOptions {
    pub bin_count: usize,
    pub base: f64,
    /// When set, only transitions whose previous day has both probabilities
    /// at or above this level enter the histogram.
    pub bubble_days: Option<f64>,
}

impl Default for TeOptions {
    fn default() -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
            base: DEFAULT_BASE,
            bubble_days: None,
        }
    }
}

impl TeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.bin_count < 2 {
            return Err(Error::invalid(format!("bin count must be at least 2, got {}", self.bin_count)));
        }
        check_base(self.base)?;
        if let Some(level) = self.bubble_days {
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::invalid(format!("bubble-day level {level} outside [0,1]")));
            }
        }
        Ok(())
    }
}

fn check_aligned(x: &ProbabilitySeries, y: &ProbabilitySeries) -> Result<()> {
    if x.timestamps != y.timestamps {
        return Err(Error::invalid(format!(
            "probability series `{}` and `{}` are not aligned on the same dates",
            x.asset_id, y.asset_id
        )));
    }
    Ok(())
}

fn sii_binned(
    x: &ProbabilitySeries,
    y: &ProbabilitySeries,
    bx: &BinnedSeries,
    by: &BinnedSeries,
    opts: &TeOptions,
) -> Result<f64> {
    let h = match opts.bubble_days {
        None => JointHistogram::new(by, bx)?,
        Some(level) => JointHistogram::with_filter(by, bx, |t| {
            x.values[t - 1] >= level && y.values[t - 1] >= level
        })?,
    };
    h.transfer_entropy(opts.base)
}

/// Speculative influence intensity of `x` on `y`: the transfer entropy from
/// the binned probabilities of `x` (source) to those of `y` (target).
pub fn sii(x: &ProbabilitySeries, y: &ProbabilitySeries, opts: &TeOptions) -> Result<f64> {
    opts.validate()?;
    check_aligned(x, y)?;
    let bx = discretize(x, opts.bin_count)?;
    let by = discretize(y, opts.bin_count)?;
    sii_binned(x, y, &bx, &by, opts)
}

/// Square matrix of SII values, `values[i][j] = SII(node i -> node j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SIIMatrix {
    nodes: Vec<String>,
    values: Vec<Vec<f64>>,
    /// First and last date the series covered.
    window: Option<(NaiveDate, NaiveDate)>,
}

impl SIIMatrix {
    pub fn new(nodes: Vec<String>, values: Vec<Vec<f64>>, window: Option<(NaiveDate, NaiveDate)>) -> Result<Self> {
        let n = nodes.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(format!("SII matrix must be {n}x{n}")));
        }
        for (i, id) in nodes.iter().enumerate() {
            if nodes[..i].contains(id) {
                return Err(Error::invalid(format!("duplicate node `{id}`")));
            }
            if values[i][i] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal for `{id}`")));
            }
            if let Some(v) = values[i].iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite SII {v} in row `{id}`")));
            }
        }
        Ok(Self { nodes, values, window })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn window(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.window
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, node: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    pub fn get(&self, from: &str, to: &str) -> Result<f64> {
        Ok(self.values[self.index_of(from)?][self.index_of(to)?])
    }

    /// `NSII(i, j) = SII(i -> j) - SII(j -> i)` by index.
    pub fn nsii_at(&self, i: usize, j: usize) -> f64 {
        self.values[i][j] - self.values[j][i]
    }
}

/// Net speculative influence intensity of `x` on `y`.
pub fn nsii(x: &str, y: &str, m: &SIIMatrix) -> Result<f64> {
    Ok(m.nsii_at(m.index_of(x)?, m.index_of(y)?))
}

/// SII between every ordered pair of assets. All series must share the same
/// dates.
pub fn sii_matrix(assets: &[ProbabilitySeries], opts: &TeOptions, exec: Execution) -> Result<SIIMatrix> {
    opts.validate()?;
    if assets.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: assets.len(),
        });
    }
    for a in &assets[1..] {
        check_aligned(&assets[0], a)?;
    }
    let binned = assets
        .iter()
        .map(|a| discretize(a, opts.bin_count))
        .collect::<Result<Vec<_>>>()?;
    let n = assets.len();
    let cells = map_range(n * n, exec, |k| {
        let (i, j) = (k / n, k % n);
        if i == j {
            Ok(0.0)
        } else {
            sii_binned(&assets[i], &assets[j], &binned[i], &binned[j], opts)
        }
    });
    let mut values = vec![vec![0.0; n]; n];
    for (k, cell) in cells.into_iter().enumerate() {
        values[k / n][k % n] = cell?;
    }
    let ts = &assets[0].timestamps;
    let window = ts.first().zip(ts.last()).map(|(a, b)| (*a, *b));
    SIIMatrix::new(assets.iter().map(|a| a.asset_id.clone()).collect(), values, window)
}
