//! End-to-end batch run: price files to bubble probabilities, SII matrix,
//! indicators, network and (with a loss window) the loss regressions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::analysis::{correlations, max_loss, ols_regress, rank_transform, CorrelationReport, RegressionResult, Regressor};
use crate::error::{Error, Result};
use crate::hmm::{
    bubble_time_fraction, em_fit, geometric_average_filter, threshold_fractions, EmFit, ModelParams, ProbabilitySeries,
};
use crate::io::{
    graph_to_dot, graph_to_json, indicators_to_csv, load_price_table, losses_to_csv, matrix_to_csv,
    probabilities_to_csv, write_text, AssetInput, PipelineConfig, Provenance,
};
use crate::model::LogPriceSeries;
use crate::network::{build_sin, compute_indicators, IndicatorTable, NodeIndicators};
use crate::par::map_slice;
use crate::te::sii_matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetFailure {
    pub asset: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub status: String,
    pub processed: Vec<String>,
    pub failures: Vec<AssetFailure>,
    pub notes: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct AssetSummary {
    observations: usize,
    start: NaiveDate,
    end: NaiveDate,
    params: ModelParams,
    loglik: f64,
    iterations: usize,
    converged: bool,
    bubble_time_pct: f64,
    high_probability_pct: f64,
    low_probability_pct: f64,
    max_loss_pct: Option<f64>,
}

struct AssetRun {
    id: String,
    series: LogPriceSeries,
    fit: EmFit,
    loss: Option<Result<f64>>,
}

fn failure(asset: &str, stage: &str, e: &Error) -> AssetFailure {
    AssetFailure {
        asset: asset.to_string(),
        stage: stage.to_string(),
        error: e.to_string(),
    }
}

fn process_asset(cfg: &PipelineConfig, input: &AssetInput) -> std::result::Result<AssetRun, AssetFailure> {
    let id = &input.id;
    let table = load_price_table(&cfg.resolve(&input.path), &cfg.columns).map_err(|e| failure(id, "load", &e))?;
    let prepare = || -> Result<LogPriceSeries> {
        let s = LogPriceSeries::new(id.clone(), table.series.timestamps().to_vec(), table.series.log_prices().to_vec())?;
        let mut s = s.window(cfg.window.start, cfg.window.end)?;
        if cfg.averaging_window > 1 {
            s = geometric_average_filter(&s, cfg.averaging_window)?;
        }
        Ok(if cfg.rebase { s.rebased() } else { s })
    };
    let series = prepare().map_err(|e| failure(id, "preprocess", &e))?;
    let fit = em_fit(&series, &cfg.em).map_err(|e| failure(id, "calibrate", &e))?;
    let loss = (!cfg.loss_window.is_open())
        .then(|| max_loss(&table.size_proxy_in(cfg.loss_window.start, cfg.loss_window.end)));
    Ok(AssetRun {
        id: id.clone(),
        series,
        fit,
        loss,
    })
}

/// Probabilities with timestamps; entry `t` belongs to observation `t`.
fn dated(run: &AssetRun, values: &[f64]) -> Result<ProbabilitySeries> {
    ProbabilitySeries::new(run.id.clone(), run.series.timestamps().to_vec(), values.to_vec())
}

fn common_dates(runs: &[AssetRun]) -> Vec<NaiveDate> {
    let mut dates = runs[0].series.timestamps().to_vec();
    for r in &runs[1..] {
        let other = r.series.timestamps();
        dates.retain(|d| other.binary_search(d).is_ok());
    }
    dates
}

fn span(dates: &[NaiveDate]) -> Option<(NaiveDate, NaiveDate)> {
    dates.first().zip(dates.last()).map(|(a, b)| (*a, *b))
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        write_text(&self.dir.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

#[derive(Serialize)]
struct RegressionEntry {
    name: String,
    regressors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<RegressionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CorrelationEntry {
    indicator: String,
    #[serde(flatten)]
    report: CorrelationReport,
}

#[derive(Serialize)]
struct AnalysisDocument<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    loss_window: (Option<NaiveDate>, Option<NaiveDate>),
    nodes: Vec<String>,
    ranked: bool,
    regressions: Vec<RegressionEntry>,
    correlations: Vec<CorrelationEntry>,
}

fn loss_analysis<'a>(
    cfg: &PipelineConfig,
    table: &IndicatorTable,
    losses: &BTreeMap<String, f64>,
    provenance: &'a Provenance,
    notes: &mut Vec<String>,
) -> AnalysisDocument<'a> {
    let rows: Vec<&NodeIndicators> = table.rows.iter().filter(|r| losses.contains_key(&r.node)).collect();
    let y_raw: Vec<f64> = rows.iter().map(|r| losses[&r.node]).collect();
    let column = |name: &str| -> Vec<f64> { rows.iter().map(|r| r.value(name).unwrap_or(f64::NAN)).collect() };
    let transform = |v: Vec<f64>| if cfg.rank_regressions { rank_transform(&v) } else { v };

    let regressions = cfg
        .regressions
        .iter()
        .map(|spec| {
            let xs: Vec<Regressor> = spec
                .regressors
                .iter()
                .map(|name| Regressor::new(name.clone(), transform(column(name))))
                .collect();
            let (result, error) = match ols_regress(&transform(y_raw.clone()), &xs, true) {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    notes.push(format!("regression `{}`: {e}", spec.name));
                    (None, Some(e.to_string()))
                }
            };
            RegressionEntry {
                name: spec.name.clone(),
                regressors: spec.regressors.clone(),
                result,
                error,
            }
        })
        .collect();
    let correlations = NodeIndicators::NAMES
        .iter()
        .filter_map(|name| match correlations(&column(name), &y_raw) {
            Ok(report) => Some(CorrelationEntry {
                indicator: name.to_string(),
                report,
            }),
            Err(e) => {
                notes.push(format!("correlation `{name}`: {e}"));
                None
            }
        })
        .collect();
    AnalysisDocument {
        provenance,
        loss_window: (cfg.loss_window.start, cfg.loss_window.end),
        nodes: rows.iter().map(|r| r.node.clone()).collect(),
        ranked: cfg.rank_regressions,
        regressions,
        correlations,
    }
}

fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn summary_text(
    report: &RunReport,
    assets: &BTreeMap<String, AssetSummary>,
    table: Option<&IndicatorTable>,
    edges: Option<usize>,
    analysis: Option<&AnalysisDocument>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", report.provenance);
    let _ = writeln!(s, "status: {}", report.status);
    let _ = writeln!(s, "\nasset        n       bubble%  p>0.9%  p<0.1%  maxloss%  converged");
    for (id, a) in assets {
        let _ = writeln!(
            s,
            "{id:<12} {:<7.2} {:>7.2} {:>7.2} {:>7.2} {:>9} {}",
            a.params.regime.n,
            a.bubble_time_pct,
            a.high_probability_pct,
            a.low_probability_pct,
            fmt2(a.max_loss_pct),
            a.converged
        );
    }
    if let Some(t) = table {
        let _ = writeln!(s, "\nnode         group       NSII-on-All  NSII-on-IX  NSII-on-Fin");
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{:<12} {:<11} {:>11.2} {:>11.2} {:>12.2}",
                r.node, r.group, r.nsii_on_all, r.nsii_on_ix, r.nsii_on_fin
            );
        }
    }
    if let Some(e) = edges {
        let _ = writeln!(s, "\nnetwork edges: {e}");
    }
    if let Some(a) = analysis {
        let _ = writeln!(s, "\nregressions ({}):", if a.ranked { "ranked" } else { "raw" });
        for r in &a.regressions {
            match &r.result {
                Some(res) => {
                    let coefs: Vec<String> = res
                        .coefficients
                        .iter()
                        .map(|c| format!("{} {:.2}{}", c.name, c.estimate, c.significance.stars()))
                        .collect();
                    let _ = writeln!(
                        s,
                        "  {}: {}  R2 {:.2}  adjR2 {:.2}  F {:.2}",
                        r.name,
                        coefs.join(", "),
                        res.r_squared,
                        res.adj_r_squared,
                        res.f_statistic
                    );
                }
                None => {
                    let _ = writeln!(s, "  {}: {}", r.name, r.error.as_deref().unwrap_or(""));
                }
            }
        }
        let _ = writeln!(s, "\ncorrelation with %MaxLoss   pearson  spearman  kendall");
        for c in &a.correlations {
            let _ = writeln!(
                s,
                "  {:<24} {:>7} {:>9} {:>8}",
                c.indicator,
                fmt2(c.report.pearson),
                fmt2(c.report.spearman),
                fmt2(c.report.kendall)
            );
        }
    }
    if !report.failures.is_empty() {
        let _ = writeln!(s, "\nfailures:");
        for f in &report.failures {
            let _ = writeln!(s, "  {} [{}]: {}", f.asset, f.stage, f.error);
        }
    }
    for n in &report.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Runs the whole pipeline and writes every artifact under the configured
/// output directory. Failures of single assets are recorded in the run
/// report; the run itself fails when fewer than two assets survive.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let inputs = cfg.asset_inputs()?;
    let ids: Vec<String> = inputs.iter().map(|a| a.id.clone()).collect();
    cfg.groups_for(&ids)?;
    let hash = cfg.hash();
    let dir = cfg.output_path();
    let mut out = Writer {
        dir: &dir,
        outputs: Vec::new(),
    };
    log::info!("running {} assets (config {hash})", inputs.len());

    let results = map_slice(&inputs, cfg.execution, |a| process_asset(cfg, a));
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(f) => {
                log::warn!("{} failed at {}: {}", f.asset, f.stage, f.error);
                failures.push(f);
            }
        }
    }

    let mut notes = Vec::new();
    let mut assets = BTreeMap::new();
    let mut losses = BTreeMap::new();
    for run in &runs {
        let prov = Provenance::new(hash.clone(), span(run.series.timestamps()));
        let filtering = dated(run, &run.fit.filter.filtering.values)?;
        let smoothing = dated(run, &run.fit.smoother.smoothing.values)?;
        out.put(
            &format!("probabilities/{}.csv", run.id),
            &probabilities_to_csv(&filtering, Some(&smoothing), &prov),
        )?;
        let fractions = threshold_fractions(&filtering, 0.9, 0.1)?;
        let max_loss_pct = match &run.loss {
            Some(Ok(v)) => {
                losses.insert(run.id.clone(), *v);
                Some(*v)
            }
            Some(Err(e)) => {
                failures.push(failure(&run.id, "loss", e));
                None
            }
            None => None,
        };
        let ts = run.series.timestamps();
        assets.insert(
            run.id.clone(),
            AssetSummary {
                observations: run.series.len(),
                start: ts[0],
                end: ts[ts.len() - 1],
                params: run.fit.params,
                loglik: run.fit.filter.loglik,
                iterations: run.fit.trace.iterations(),
                converged: run.fit.trace.converged,
                bubble_time_pct: bubble_time_fraction(&filtering)?,
                high_probability_pct: fractions.high,
                low_probability_pct: fractions.low,
                max_loss_pct,
            },
        );
    }
    let params_doc = serde_json::json!({
        "config_hash": hash,
        "assets": assets,
    });
    out.put("params.json", &(serde_json::to_string_pretty(&params_doc)? + "\n"))?;

    let processed: Vec<String> = runs.iter().map(|r| r.id.clone()).collect();
    let report = |status: &str, window, notes, failures| RunReport {
        provenance: Provenance::new(hash.clone(), window),
        status: status.to_string(),
        processed: processed.clone(),
        failures,
        notes,
        outputs: Vec::new(),
    };

    if runs.len() < 2 {
        let msg = format!("only {} of {} assets calibrated; need at least 2", runs.len(), inputs.len());
        finish(&mut out, report("failed", None, vec![msg.clone()], failures), &assets, None)?;
        return Err(Error::NumericalFailure { step: 0, reason: msg });
    }

    let dates = common_dates(&runs);
    let window = span(&dates);
    if dates.len() < 3 {
        let msg = format!("assets share only {} dates; need at least 3", dates.len());
        finish(&mut out, report("failed", window, vec![msg.clone()], failures), &assets, None)?;
        return Err(Error::invalid(msg));
    }
    let probs = runs
        .iter()
        .map(|r| dated(r, &r.fit.filter.filtering.values)?.restrict_to(&dates))
        .collect::<Result<Vec<_>>>()?;
    let prov = Provenance::new(hash.clone(), window);
    let matrix = sii_matrix(&probs, &cfg.te, cfg.execution)?;
    out.put("sii_matrix.csv", &matrix_to_csv(&matrix, &prov))?;

    let groups = cfg.groups_for(&processed)?;
    let table = compute_indicators(&matrix, &groups)?;
    out.put("indicators.csv", &indicators_to_csv(&table, &prov))?;

    let complete_losses = losses.len() == runs.len();
    let sin = build_sin(&matrix, &groups, cfg.threshold, complete_losses.then_some(&losses))?;
    out.put("sin.dot", &graph_to_dot(&sin, &prov))?;
    out.put("sin.json", &graph_to_json(&sin, &prov)?)?;

    let analysis = if !cfg.loss_window.is_open() {
        if losses.len() < runs.len() {
            notes.push(format!("{} of {} assets have %MaxLoss", losses.len(), runs.len()));
        }
        let loss_prov = Provenance::new(hash.clone(), window);
        out.put("losses.csv", &losses_to_csv(&losses, &loss_prov))?;
        let doc = loss_analysis(cfg, &table, &losses, &prov, &mut notes);
        out.put("analysis.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        Some(doc)
    } else {
        None
    };

    finish(
        &mut out,
        report("ok", window, notes, failures),
        &assets,
        Some((&table, sin.edges.len(), analysis.as_ref())),
    )
}

fn finish(
    out: &mut Writer,
    mut report: RunReport,
    assets: &BTreeMap<String, AssetSummary>,
    network: Option<(&IndicatorTable, usize, Option<&AnalysisDocument>)>,
) -> Result<RunReport> {
    let (table, edges, analysis) = match network {
        Some((t, e, a)) => (Some(t), Some(e), a),
        None => (None, None, None),
    };
    out.put("summary.txt", &summary_text(&report, assets, table, edges, analysis))?;
    out.outputs.push("run_report.json".into());
    report.outputs = out.outputs.clone();
    write_text(&out.dir.join("run_report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(report)
}
