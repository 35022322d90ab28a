use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{parse_date, read_text, sha256_hex, ColumnMap};
use crate::error::{Error, Result};
use crate::hmm::{EmConfig, InitialDistribution, SwitchDensity};
use crate::network::{NodeGroups, NodeIndicators, NodeLabel, DEFAULT_THRESHOLD};
use crate::par::Execution;
use crate::te::TeOptions;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetInput {
    pub id: String,
    /// As written in the config; relative paths resolve against the config's directory.
    pub path: PathBuf,
}

/// Inclusive date range with optional ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DateWindow {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl DateWindow {
    pub fn is_open(&self) -> bool {
        self.start.is_none() && self.end.is_none()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if e < s {
                return Err(Error::Config(format!("{name}.end {e} is before {name}.start {s}")));
            }
        }
        Ok(())
    }
}

/// One regression of %MaxLoss on a set of indicators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegressionSpec {
    pub name: String,
    pub regressors: Vec<String>,
}

/// Settings for a full pipeline run, read from a `key = value` file.
///
/// | key | default |
/// |---|---|
/// | `input_dir` | `.` (every `*.csv`, used when no `asset.<id>` keys are given) |
/// | `asset.<id>` | none; path of one price file |
/// | `column.date` / `column.price` / `column.market_cap` | `date` / `price` / `market_cap` |
/// | `window.start` / `window.end` | open |
/// | `loss_window.start` / `loss_window.end` | open; loss analysis runs only when one is set |
/// | `averaging_window` | `100` (`1` disables averaging) |
/// | `rebase` | `true` |
/// | `em.max_iterations` | `500` |
/// | `em.tolerance` | `1e-4` |
/// | `em.n_min` / `em.n_max` | `1e-4` / `10` |
/// | `em.n_init` | `0.5` |
/// | `em.kappa` | `0.6` |
/// | `em.q00_init` / `em.q11_init` | `0.95` / `0.95` |
/// | `em.initial` | `estimated` (or `stationary`) |
/// | `em.switch_density` | `uniform-move` (or `drift-height`) |
/// | `em.multi_start` | `true` |
/// | `te.bins` / `te.base` | `10` / `10` |
/// | `te.bubble_days` | `off` (or a probability level) |
/// | `nsii_threshold` | `0.3` |
/// | `group.<id>` | none; `industrial` or `financial`, optionally `/subsector` |
/// | `default_group` | none (unlabeled assets are an error) |
/// | `regression.<name>` | `NSII-on-All`, `NSII-on-IX`, `NSII-on-Fin` one at a time |
/// | `rank_regressions` | `true` |
/// | `output_dir` | `output` |
/// | `seed` | `0` |
/// | `execution` | `parallel` (or `sequential`) |
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub base_dir: PathBuf,
    pub input_dir: PathBuf,
    pub assets: Vec<AssetInput>,
    pub columns: ColumnMap,
    pub window: DateWindow,
    pub loss_window: DateWindow,
    pub averaging_window: usize,
    pub rebase: bool,
    pub em: EmConfig,
    pub te: TeOptions,
    pub threshold: f64,
    pub groups: NodeGroups,
    pub default_group: Option<NodeLabel>,
    pub regressions: Vec<RegressionSpec>,
    pub rank_regressions: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            base_dir: PathBuf::from("."),
            input_dir: PathBuf::from("."),
            assets: Vec::new(),
            columns: ColumnMap::default(),
            window: DateWindow::default(),
            loss_window: DateWindow::default(),
            averaging_window: 100,
            rebase: true,
            em: EmConfig::default(),
            te: TeOptions::default(),
            threshold: DEFAULT_THRESHOLD,
            groups: NodeGroups::new(),
            default_group: None,
            regressions: default_regressions(),
            rank_regressions: true,
            output_dir: PathBuf::from("output"),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

fn default_regressions() -> Vec<RegressionSpec> {
    ["NSII-on-All", "NSII-on-IX", "NSII-on-Fin"]
        .into_iter()
        .map(|n| RegressionSpec {
            name: n.to_string(),
            regressors: vec![n.to_string()],
        })
        .collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::parse(&text, path, base)
    }

    /// Parses config text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path, base_dir: PathBuf) -> Result<Self> {
        let mut cfg = Self {
            base_dir,
            ..Self::default()
        };
        let mut seen = BTreeMap::new();
        let mut regressions = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
            if content.is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line,
                message,
            };
            let (key, value) = content
                .split_once('=')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| perr(format!("expected `key = value`, got `{content}`")))?;
            if key.is_empty() {
                return Err(perr("empty key".into()));
            }
            if seen.insert(key.to_string(), line).is_some() {
                return Err(perr(format!("duplicate key `{key}`")));
            }
            let bad = |what: &str| perr(format!("`{key}`: expected {what}, got `{value}`"));
            let num = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
            let count = || value.parse::<usize>().map_err(|_| bad("a nonnegative integer"));
            let date = || parse_date(value).map(Some).ok_or_else(|| bad("a YYYY-MM-DD date"));
            let flag = || parse_bool(value).ok_or_else(|| bad("true or false"));

            if let Some(id) = key.strip_prefix("asset.") {
                cfg.assets.push(AssetInput {
                    id: id.to_string(),
                    path: PathBuf::from(value),
                });
                continue;
            }
            if let Some(id) = key.strip_prefix("group.") {
                let label = value.parse::<NodeLabel>().map_err(|e| perr(e.to_string()))?;
                cfg.groups.insert(id, label).map_err(|e| perr(e.to_string()))?;
                continue;
            }
            if let Some(name) = key.strip_prefix("regression.") {
                let regressors: Vec<String> = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if regressors.is_empty() {
                    return Err(bad("a comma-separated list of indicators"));
                }
                for r in &regressors {
                    if !NodeIndicators::NAMES.iter().any(|n| n.eq_ignore_ascii_case(r)) {
                        return Err(perr(format!("unknown indicator `{r}`")));
                    }
                }
                regressions.push(RegressionSpec {
                    name: name.to_string(),
                    regressors,
                });
                continue;
            }
            match key {
                "input_dir" => cfg.input_dir = PathBuf::from(value),
                "column.date" => cfg.columns.date = value.to_string(),
                "column.price" => cfg.columns.price = value.to_string(),
                "column.market_cap" => cfg.columns.market_cap = value.to_string(),
                "window.start" => cfg.window.start = date()?,
                "window.end" => cfg.window.end = date()?,
                "loss_window.start" => cfg.loss_window.start = date()?,
                "loss_window.end" => cfg.loss_window.end = date()?,
                "averaging_window" => cfg.averaging_window = count()?,
                "rebase" => cfg.rebase = flag()?,
                "em.max_iterations" => cfg.em.max_iterations = count()?,
                "em.tolerance" => cfg.em.tolerance = num("a number")?,
                "em.n_min" => cfg.em.n_search.min = num("a number")?,
                "em.n_max" => cfg.em.n_search.max = num("a number")?,
                "em.n_init" => cfg.em.n_init = num("a number")?,
                "em.kappa" => cfg.em.kappa = num("a number")?,
                "em.q00_init" => cfg.em.q00_init = num("a number")?,
                "em.q11_init" => cfg.em.q11_init = num("a number")?,
                "em.initial" => {
                    cfg.em.initial = match value {
                        "estimated" => InitialDistribution::Estimated,
                        "stationary" => InitialDistribution::Stationary,
                        _ => return Err(bad("`estimated` or `stationary`")),
                    }
                }
                "em.switch_density" => {
                    cfg.em.switch_density = match value {
                        "uniform-move" => SwitchDensity::UniformMove,
                        "drift-height" => SwitchDensity::DriftHeight,
                        _ => return Err(bad("`uniform-move` or `drift-height`")),
                    }
                }
                "em.multi_start" => cfg.em.multi_start = flag()?,
                "te.bins" => cfg.te.bin_count = count()?,
                "te.base" => cfg.te.base = num("a number")?,
                "te.bubble_days" => {
                    cfg.te.bubble_days = match parse_bool(value) {
                        Some(false) => None,
                        _ => Some(num("`off` or a probability level")?),
                    }
                }
                "nsii_threshold" => cfg.threshold = num("a number")?,
                "default_group" => {
                    cfg.default_group = if value.eq_ignore_ascii_case("none") || value.is_empty() {
                        None
                    } else {
                        Some(value.parse().map_err(|e: Error| perr(e.to_string()))?)
                    }
                }
                "rank_regressions" => cfg.rank_regressions = flag()?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                "execution" => {
                    cfg.execution = match value {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        _ => return Err(bad("`parallel` or `sequential`")),
                    }
                }
                _ => return Err(perr(format!("unknown key `{key}`"))),
            }
        }
        if !regressions.is_empty() {
            cfg.regressions = regressions;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.window.validate("window")?;
        self.loss_window.validate("loss_window")?;
        if self.averaging_window == 0 {
            return Err(Error::Config("averaging_window must be at least 1".into()));
        }
        self.em.validate()?;
        self.te.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(Error::Config(format!("nsii_threshold must be nonnegative, got {}", self.threshold)));
        }
        for (i, a) in self.assets.iter().enumerate() {
            if self.assets[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::Config(format!("asset `{}` listed twice", a.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Configured assets, or every `*.csv` in `input_dir` sorted by name.
    pub fn asset_inputs(&self) -> Result<Vec<AssetInput>> {
        if !self.assets.is_empty() {
            return Ok(self.assets.clone());
        }
        let dir = self.resolve(&self.input_dir);
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                let rel = self.input_dir.join(path.file_name().expect("listed file has a name"));
                out.push(AssetInput { id, path: rel });
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        if out.is_empty() {
            return Err(Error::Config(format!("no *.csv files in {}", dir.display())));
        }
        Ok(out)
    }

    /// Group labels for the given ids, applying `default_group`.
    pub fn groups_for(&self, ids: &[String]) -> Result<NodeGroups> {
        let mut out = NodeGroups::new();
        for id in ids {
            let label = match self.groups.get(id) {
                Ok(l) => l.clone(),
                Err(e) => self.default_group.clone().ok_or(e)?,
            };
            out.insert(id.clone(), label)?;
        }
        Ok(out)
    }

    /// Every setting that affects results, one `key = value` per line in key
    /// order. Output location and execution strategy are left out.
    pub fn canonical_text(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        let date = |d: Option<NaiveDate>| d.map_or_else(|| "open".to_string(), |d| d.to_string());
        if self.assets.is_empty() {
            put("input_dir", self.input_dir.display().to_string());
        }
        for a in &self.assets {
            put(&format!("asset.{}", a.id), a.path.display().to_string());
        }
        put("column.date", self.columns.date.clone());
        put("column.price", self.columns.price.clone());
        put("column.market_cap", self.columns.market_cap.clone());
        put("window.start", date(self.window.start));
        put("window.end", date(self.window.end));
        put("loss_window.start", date(self.loss_window.start));
        put("loss_window.end", date(self.loss_window.end));
        put("averaging_window", self.averaging_window.to_string());
        put("rebase", self.rebase.to_string());
        let em = &self.em;
        put("em.max_iterations", em.max_iterations.to_string());
        put("em.tolerance", em.tolerance.to_string());
        put("em.n_min", em.n_search.min.to_string());
        put("em.n_max", em.n_search.max.to_string());
        put("em.n_init", em.n_init.to_string());
        put("em.kappa", em.kappa.to_string());
        put("em.q00_init", em.q00_init.to_string());
        put("em.q11_init", em.q11_init.to_string());
        put("em.initial", format!("{:?}", em.initial).to_lowercase());
        put("em.switch_density", format!("{:?}", em.switch_density));
        put("em.multi_start", em.multi_start.to_string());
        put("te.bins", self.te.bin_count.to_string());
        put("te.base", self.te.base.to_string());
        put("te.bubble_days", self.te.bubble_days.map_or_else(|| "off".into(), |v| v.to_string()));
        put("nsii_threshold", self.threshold.to_string());
        for (id, label) in self.groups.iter() {
            put(&format!("group.{id}"), label.to_string());
        }
        put(
            "default_group",
            self.default_group.as_ref().map_or_else(|| "none".into(), |g| g.to_string()),
        );
        for r in &self.regressions {
            put(&format!("regression.{}", r.name), r.regressors.join(","));
        }
        put("rank_regressions", self.rank_regressions.to_string());
        put("seed", self.seed.to_string());
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical_text())
    }
}

/// `node = group[/subsector]` lines, `#` comments.
pub fn parse_groups(text: &str, origin: &Path) -> Result<NodeGroups> {
    let mut groups = NodeGroups::new();
    for (k, raw) in text.lines().enumerate() {
        let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
        if content.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: k + 1,
            message,
        };
        let (node, label) = content
            .split_once('=')
            .ok_or_else(|| perr(format!("expected `node = group`, got `{content}`")))?;
        let label: NodeLabel = label.trim().parse().map_err(|e: Error| perr(e.to_string()))?;
        groups.insert(node.trim(), label).map_err(|e| perr(e.to_string()))?;
    }
    Ok(groups)
}

pub fn read_groups(path: &Path) -> Result<NodeGroups> {
    parse_groups(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::parse(text, Path::new("p.conf"), PathBuf::from("/base"))
    }

    #[test]
    fn defaults_and_overrides() {
        let c = parse("").unwrap();
        assert_eq!(c.averaging_window, 100);
        assert_eq!(c.te.bin_count, 10);
        assert_eq!(c.threshold, 0.3);
        let c = parse("# comment\nasset.a = data/a.csv\ngroup.a = financial/bank  # trailing\nte.bins = 5\n").unwrap();
        assert_eq!(c.resolve(&c.assets[0].path), PathBuf::from("/base/data/a.csv"));
        assert_eq!(c.groups.get("a").unwrap().subsector.as_deref(), Some("bank"));
        assert_eq!(c.te.bin_count, 5);
    }

    #[test]
    fn validation_errors() {
        let e = parse("window.start = 2007-01-01\nwindow.end = 2006-01-01\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(parse("te.bins = 1\n").is_err());
        assert!(matches!(parse("bogus = 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("seed = 1\nseed = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse("regression.x = NSII-on-Moon\n").is_err());
    }

    #[test]
    fn groups_file() {
        let g = parse_groups("a = industrial\nb = financial/trust # x\n", Path::new("g")).unwrap();
        assert_eq!(g.len(), 2);
        assert!(parse_groups("a = industrial\na = financial\n", Path::new("g")).is_err());
        assert!(matches!(parse_groups("a = moon\n", Path::new("g")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = parse("output_dir = one\n").unwrap();
        let b = parse("output_dir = two\nexecution = sequential\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), parse("seed = 3\n").unwrap().hash());
    }
}
