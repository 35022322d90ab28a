use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bubblenet_core::analysis::{correlations, ols_regress, rank_transform, Regressor};
use bubblenet_core::hmm::{em_fit, geometric_average_filter, EmConfig, SwitchDensity};
use bubblenet_core::io::{
    self, graph_to_dot, graph_to_json, import_graph_json, indicators_to_csv, load_price_table, matrix_to_csv,
    probabilities_to_csv, read_groups, read_losses_csv, read_matrix_csv, read_probability_csv, write_text,
    ColumnMap, GraphFormat, KeyedTable, PipelineConfig, Provenance,
};
use bubblenet_core::model::{simulate_critical_times, simulate_sa_path, LogPriceSeries, SaPathConfig};
use bubblenet_core::network::{build_sin, compute_indicators, DEFAULT_THRESHOLD};
use bubblenet_core::pipeline::run_pipeline;
use bubblenet_core::synth::synthetic_corpus;
use bubblenet_core::te::{sii_matrix, TeOptions, DEFAULT_BASE, DEFAULT_BIN_COUNT};
use bubblenet_core::{Error, Execution, Result};

#[derive(Parser, Debug)]
#[command(name = "bubblenet", version, about = "Bubble regime detection and speculative influence networks")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate bubble paths, critical times or the synthetic corpus.
    Simulate(SimulateArgs),
    /// Fit the two-regime model to one price file.
    Calibrate(CalibrateArgs),
    /// SII matrix (transfer entropy) between probability series.
    Te(TeArgs),
    /// Threshold an SII matrix into a speculative influence network.
    Network(NetworkArgs),
    /// Per-node influence indicators of an SII matrix.
    Indicators(IndicatorsArgs),
    /// Least squares and correlations between table columns.
    Regress(RegressArgs),
    /// Full pipeline from a config file.
    Run(RunArgs),
    /// Convert a graph-JSON file to DOT or graph-JSON.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1.0)]
    p0: f64,
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    n: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulate this many paths and write their critical times instead of one path.
    #[arg(long)]
    paths: Option<usize>,
    /// Write the five-asset synthetic corpus into this directory instead.
    #[arg(long, conflicts_with = "paths")]
    corpus: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Price CSV with date and price columns.
    input: PathBuf,
    #[arg(long, default_value = "date")]
    date_column: String,
    #[arg(long, default_value = "price")]
    price_column: String,
    /// Trailing log-price average applied first (1 = none).
    #[arg(long, default_value_t = 1)]
    averaging_window: usize,
    /// Keep raw log-price levels instead of starting at 0.
    #[arg(long)]
    no_rebase: bool,
    #[arg(long, default_value_t = 0.6)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    /// `uniform-move` or `drift-height`.
    #[arg(long, default_value = "uniform-move")]
    switch_density: String,
    /// Directory for `<id>.csv` probabilities and `<id>.json` parameters.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TeArgs {
    /// Probability CSV files (at least two, same dates); ids are file stems.
    #[arg(required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    /// Probability column to read.
    #[arg(long, default_value = "filtering")]
    column: String,
    #[arg(long, default_value_t = DEFAULT_BIN_COUNT)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    base: f64,
    /// Only count transitions whose previous day has both probabilities at or above this level.
    #[arg(long)]
    bubble_days: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// SII matrix CSV.
    #[arg(long)]
    matrix: PathBuf,
    /// `node = industrial|financial[/subsector]` lines.
    #[arg(long)]
    groups: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// `node,max_loss` CSV used to color nodes.
    #[arg(long)]
    losses: Option<PathBuf>,
    /// `dot` or `graph-json`.
    #[arg(long, default_value = "dot")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IndicatorsArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegressArgs {
    /// CSV whose first column is a row key.
    #[arg(long)]
    table: PathBuf,
    /// `node,max_loss` CSV joined on the row key, adding a `max_loss` column.
    #[arg(long)]
    losses: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    y: String,
    /// Regressor columns.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    #[arg(long)]
    no_intercept: bool,
    /// Replace every column by its ranks first.
    #[arg(long)]
    rank: bool,
    /// JSON report path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Key-value pipeline config.
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Graph-JSON input.
    graph: PathBuf,
    /// `dot` or `graph-json`.
    #[arg(long, default_value = "dot")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn simulate(a: &SimulateArgs, exec: Execution) -> Result<()> {
    if let Some(dir) = &a.corpus {
        let prov = Provenance::of_text(&format!("synthetic corpus seed={}", a.seed), None);
        for (id, group, s) in synthetic_corpus(a.seed)? {
            let scaled: Vec<f64> = s.log_prices().iter().map(|y| y + 100f64.ln()).collect();
            let s = LogPriceSeries::new(id.clone(), s.timestamps().to_vec(), scaled)?;
            let span = s.timestamps().first().copied().zip(s.timestamps().last().copied());
            write_text(&dir.join(format!("{id}.csv")), &io::write_price_csv(&s, &prov.with_window(span)))?;
            log::info!("{id} ({group}): {} rows", s.len());
        }
        return Ok(());
    }
    let cfg = SaPathConfig::new(a.p0, a.mu, a.sigma, a.n, a.dt, a.max_steps);
    let prov = Provenance::of_text(&format!("{cfg:?} seed={} paths={:?}", a.seed, a.paths), None);
    let mut text = format!("# {prov}\n");
    match a.paths {
        Some(count) => {
            text.push_str("path,critical_time\n");
            for (i, t) in simulate_critical_times(&cfg, count, a.seed, exec)?.into_iter().enumerate() {
                text.push_str(&format!("{i},{}\n", t.map_or_else(String::new, |t| t.to_string())));
            }
        }
        None => {
            let path = simulate_sa_path(&cfg, a.seed)?;
            text.push_str("step,t,log_price\n");
            for (k, y) in path.log_prices.iter().enumerate() {
                text.push_str(&format!("{k},{},{y}\n", k as f64 * a.dt));
            }
            if let Some(t) = path.critical_time() {
                log::info!("path hit the critical time at t = {t}");
            }
        }
    }
    emit(a.out.as_deref(), &text)
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let columns = ColumnMap {
        date: a.date_column.clone(),
        price: a.price_column.clone(),
        ..ColumnMap::default()
    };
    let table = load_price_table(&a.input, &columns)?;
    let mut series = table.series;
    if a.averaging_window > 1 {
        series = geometric_average_filter(&series, a.averaging_window)?;
    }
    if !a.no_rebase {
        series = series.rebased();
    }
    let switch_density = match a.switch_density.as_str() {
        "uniform-move" => SwitchDensity::UniformMove,
        "drift-height" => SwitchDensity::DriftHeight,
        other => return Err(Error::Usage(format!("unknown switch density `{other}`"))),
    };
    let cfg = EmConfig {
        kappa: a.kappa,
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
        switch_density,
        ..EmConfig::default()
    };
    let fit = em_fit(&series, &cfg)?;
    let ts = series.timestamps();
    let prov = Provenance::of_text(&format!("{:?} {cfg:?}", a), Some((ts[0], ts[ts.len() - 1])));
    let report = serde_json::json!({
        "config_hash": prov.config_hash,
        "window": prov.window,
        "asset": series.asset_id(),
        "params": fit.params,
        "loglik": fit.filter.loglik,
        "iterations": fit.trace.iterations(),
        "converged": fit.trace.converged,
    });
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(dir) => {
            let id = series.asset_id();
            let with_dates = |values: &[f64]| {
                bubblenet_core::hmm::ProbabilitySeries::new(id, ts.to_vec(), values.to_vec())
            };
            let filtering = with_dates(&fit.filter.filtering.values)?;
            let smoothing = with_dates(&fit.smoother.smoothing.values)?;
            write_text(&dir.join(format!("{id}.csv")), &probabilities_to_csv(&filtering, Some(&smoothing), &prov))?;
            write_text(&dir.join(format!("{id}.json")), &json)
        }
        None => emit(None, &json),
    }
}

fn te(a: &TeArgs, exec: Execution) -> Result<()> {
    let series = a
        .inputs
        .iter()
        .map(|p| read_probability_csv(p, &a.column))
        .collect::<Result<Vec<_>>>()?;
    let opts = TeOptions {
        bin_count: a.bins,
        base: a.base,
        bubble_days: a.bubble_days,
    };
    let m = sii_matrix(&series, &opts, exec)?;
    let prov = Provenance::of_text(&format!("{:?}", a), m.window());
    emit(a.out.as_deref(), &matrix_to_csv(&m, &prov))
}

fn network(a: &NetworkArgs) -> Result<()> {
    let format: GraphFormat = a.format.parse()?;
    let m = read_matrix_csv(&a.matrix)?;
    let groups = read_groups(&a.groups)?;
    let losses: Option<BTreeMap<String, f64>> = a.losses.as_deref().map(read_losses_csv).transpose()?;
    let g = build_sin(&m, &groups, a.threshold, losses.as_ref())?;
    let prov = Provenance::of_text(&format!("{:?}", a), m.window());
    let text = match format {
        GraphFormat::Dot => graph_to_dot(&g, &prov),
        GraphFormat::GraphJson => graph_to_json(&g, &prov)?,
    };
    emit(a.out.as_deref(), &text)
}

fn indicators(a: &IndicatorsArgs) -> Result<()> {
    let m = read_matrix_csv(&a.matrix)?;
    let groups = read_groups(&a.groups)?;
    let table = compute_indicators(&m, &groups)?;
    let prov = Provenance::of_text(&format!("{:?}", a), m.window());
    emit(a.out.as_deref(), &indicators_to_csv(&table, &prov))
}

fn regress(a: &RegressArgs) -> Result<()> {
    let table = KeyedTable::read(&a.table)?;
    let losses = a.losses.as_deref().map(read_losses_csv).transpose()?;
    let column = |name: &str| -> Result<Vec<f64>> {
        match (&losses, name) {
            (Some(l), "max_loss") => table
                .keys
                .iter()
                .map(|k| {
                    l.get(k)
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("no max_loss for `{k}`")))
                })
                .collect(),
            _ => table.column(name),
        }
    };
    let prep = |v: Vec<f64>| if a.rank { rank_transform(&v) } else { v };
    let y = prep(column(&a.y)?);
    let xs = a
        .x
        .iter()
        .map(|name| Ok(Regressor::new(name.clone(), prep(column(name)?))))
        .collect::<Result<Vec<_>>>()?;
    let result = ols_regress(&y, &xs, !a.no_intercept)?;
    let corr = xs
        .iter()
        .map(|x| Ok((x.name.clone(), correlations(&x.values, &y)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let prov = Provenance::of_text(&format!("{:?}", a), None);
    let report = serde_json::json!({
        "config_hash": prov.config_hash,
        "window": prov.window,
        "response": a.y,
        "ranked": a.rank,
        "regression": result,
        "correlations": corr,
    });
    for c in &result.coefficients {
        log::info!("{} = {:.2}{} (se {:.2})", c.name, c.estimate, c.significance.stars(), c.std_error);
    }
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn run(a: &RunArgs, exec: Option<Execution>) -> Result<()> {
    let mut cfg = PipelineConfig::from_file(&a.config)?;
    if let Some(e) = exec {
        cfg.execution = e;
    }
    let started = std::time::Instant::now();
    let report = run_pipeline(&cfg)?;
    eprintln!(
        "{}: {} assets processed, {} failures, outputs in {} ({:.1?})",
        report.status,
        report.processed.len(),
        report.failures.len(),
        cfg.output_path().display(),
        started.elapsed()
    );
    for f in &report.failures {
        eprintln!("  {} [{}]: {}", f.asset, f.stage, f.error);
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let format: GraphFormat = a.format.parse()?;
    let (g, prov) = import_graph_json(&a.graph)?;
    let text = match format {
        GraphFormat::Dot => graph_to_dot(&g, &prov),
        GraphFormat::GraphJson => graph_to_json(&g, &prov)?,
    };
    emit(a.out.as_deref(), &text)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let exec = execution(cli);
    match &cli.command {
        Command::Simulate(a) => simulate(a, exec),
        Command::Calibrate(a) => calibrate(a),
        Command::Te(a) => te(a, exec),
        Command::Network(a) => network(a),
        Command::Indicators(a) => indicators(a),
        Command::Regress(a) => regress(a),
        Command::Run(a) => run(a, cli.sequential.then_some(Execution::Sequential)),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
