//! Command-line front end. Every subcommand reads the same sectioned config,
//! accepts `--set section.key=value` overrides and writes a resolved-config
//! snapshot next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{make_windows_in, split_ranges, SeriesBundle, N_POLLUTANTS, POLLUTANTS};
use crate::error::{Error, Result};
use crate::evaluator::{build_matrix, evaluate_model, evaluate_persistence, run_experiment_suite, write_reports};
use crate::graph::{csv_err, write_stations, SpatialGraph};
use crate::losses::LossConfig;
use crate::model::{predict, Mode, ModelConfig, ModelParams, RolloutObjective};
use crate::numerics::gradcheck;
use crate::oracle::{generate, synthetic_stations};
use crate::trainer::{train, Checkpoint};

#[derive(Debug, Parser)]
#[command(name = "airsurrogate", version, about = "Graph surrogate for multi-station air-quality forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config with [graph] [oracle] [dataset] [model] [train] [sweep].
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Sets graph, oracle and training seeds at once (before `--set`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Station file, overriding `graph.stations_file`.
    #[arg(long, global = true)]
    pub stations: Option<PathBuf>,
    /// Series file, overriding `dataset.series_file`.
    #[arg(long, global = true)]
    pub series: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the oracle and writes `stations.csv` and `series.csv`.
    GenData,
    /// Writes the graph summary and the normalized Laplacian.
    BuildGraph,
    /// Trains a model; writes `checkpoint.bin`, `metrics.csv`, `train_report.json`.
    Train,
    /// Scores a checkpoint and persistence on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forecasts the final `horizon` hours of the series from the hours before.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Trains and scores every `[sweep]` cell for every seed.
    Sweep {
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference check of the training gradient on a small instance.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        history: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut all = Vec::new();
        if let Some(s) = self.seed {
            all.extend([format!("graph.seed={s}"), format!("oracle.seed={s}"), format!("train.seed={s}")]);
        }
        if let Some(p) = &self.stations {
            all.push(format!("graph.stations_file={}", toml_string(p)));
        }
        if let Some(p) = &self.series {
            all.push(format!("dataset.series_file={}", toml_string(p)));
        }
        all.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &all)
    }
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse(e.to_string()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Error::validation(e.to_string()));
        }
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let out = &cli.common.out;
    cfg.write_snapshot(out)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg, out),
        Command::BuildGraph => build_graph_cmd(&cfg, out),
        Command::Train => train_cmd(&cfg, out),
        Command::Evaluate { checkpoint } => evaluate_cmd(&cfg, checkpoint, out),
        Command::Forecast { checkpoint } => forecast_cmd(&cfg, checkpoint, out),
        Command::Sweep { jobs } => sweep_cmd(&cfg, *jobs, out),
        Command::Gradcheck {
            nodes,
            history,
            horizon,
            hidden,
            step,
            tolerance,
        } => gradcheck_cmd(&cfg, *nodes, *history, *horizon, *hidden, *step, *tolerance),
    }
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = cfg.build_graph()?;
    let b = generate(&cfg.oracle, &g, cfg.dataset.steps)?;
    write_stations(&out.join("stations.csv"), g.stations())?;
    b.write_csv(&out.join("series.csv"))?;
    log::info!("wrote {} stations × {} hours to {}", g.len(), b.steps(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    stations: usize,
    edges: usize,
    threshold_km: f64,
    /// Entry `k` counts stations with `k` neighbours.
    degree_histogram: Vec<usize>,
    station_ids: Vec<&'a str>,
}

fn build_graph_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = cfg.build_graph()?;
    let summary = GraphSummary {
        stations: g.len(),
        edges: g.edges().len(),
        threshold_km: g.threshold_km(),
        degree_histogram: g.degree_histogram(),
        station_ids: g.stations().iter().map(|s| s.id.as_str()).collect(),
    };
    write_text(&out.join("graph_summary.json"), &to_json(&summary)?)?;
    write_laplacian(&g, &out.join("laplacian.csv"))
}

fn write_laplacian(g: &SpatialGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let wrap = |e| csv_err(path, e);
    let mut header = vec!["id".to_owned()];
    header.extend(g.stations().iter().map(|s| s.id.clone()));
    w.write_record(&header).map_err(wrap)?;
    for i in 0..g.len() {
        let mut row = vec![g.stations()[i].id.clone()];
        row.extend(g.laplacian().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = cfg.build_graph()?;
    let b = cfg.load_series(&g)?;
    let splits = cfg.splits(&b)?;
    log::info!(
        "{} train / {} val / {} test windows",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let (params, report) = train(&splits, &g, &cfg.train, &cfg.model)?;
    Checkpoint {
        model: cfg.model,
        stats: splits.stats.clone(),
        params,
    }
    .save(&out.join("checkpoint.bin"))?;
    report.write_metrics_csv(&out.join("metrics.csv"))?;
    write_text(&out.join("train_report.json"), &to_json(&report)?)?;
    log::info!(
        "best epoch {} (val MAE {:.4}) in {:.1}s",
        report.best_epoch,
        report.best_val_mae,
        report.wall_seconds
    );
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let g = cfg.build_graph()?;
    let b = ck.stats.normalize(&cfg.load_series(&g)?);
    let d = &cfg.dataset;
    let test = split_ranges(b.steps(), d.ratios)?[2].clone();
    let windows = make_windows_in(&b, test, d.history, d.horizon, d.stride)?;
    let model = evaluate_model("model", None, &windows, &g, &ck.params, &ck.model, &ck.stats)?;
    let base = evaluate_persistence(&windows, &ck.stats)?;
    log::info!("model MAE {:.4}, persistence MAE {:.4}", model.mae, base.mae);
    write_reports(&[model, base], out)
}

fn forecast_cmd(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let g = cfg.build_graph()?;
    let raw = cfg.load_series(&g)?;
    let b = ck.stats.normalize(&raw);
    let (hp, tf) = (cfg.dataset.history, cfg.dataset.horizon);
    if b.steps() < hp + tf {
        return Err(Error::validation(format!(
            "series has {} hours, forecasting needs history {hp} + horizon {tf}",
            b.steps()
        )));
    }
    let start = b.steps() - hp - tf;
    let window = make_windows_in(&b, start..b.steps(), hp, tf, 1)?
        .pop()
        .ok_or_else(|| Error::validation("the latest window touches a gap longer than the fill limit"))?;
    let pred = ck.stats.denormalize_x(&predict(&window, &g, &ck.params, &ck.model)?);
    write_forecast(&raw, &g, start + hp, &pred, &out.join("forecast.csv"))
}

fn write_forecast(b: &SeriesBundle, g: &SpatialGraph, first: usize, pred: &crate::numerics::Tensor, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let wrap = |e| csv_err(path, e);
    let mut header = vec!["timestamp", "station_id"];
    header.extend(POLLUTANTS);
    w.write_record(&header).map_err(wrap)?;
    for t in 0..pred.shape()[0] {
        let ts = b.timestamps()[first + t].format("%Y-%m-%dT%H:%M:%SZ").to_string();
        for (v, st) in g.stations().iter().enumerate() {
            let mut row = vec![ts.clone(), st.id.clone()];
            row.extend((0..N_POLLUTANTS).map(|c| pred.get(&[t, v, c]).to_string()));
            w.write_record(&row).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sweep_cmd(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<()> {
    if jobs < 1 {
        return Err(Error::validation("--jobs must be ≥ 1"));
    }
    let g = cfg.build_graph()?;
    let b = cfg.load_series(&g)?;
    let splits = cfg.splits(&b)?;
    let cells = build_matrix(&cfg.sweep.cells, &cfg.model, &cfg.train, &cfg.sweep.seeds)?;
    let outcomes = run_experiment_suite(&cells, &splits, &g, jobs)?;
    let path = out.join("sweep_status.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["cell", "seed", "status", "message"]).map_err(|e| csv_err(&path, e))?;
    let mut reports = Vec::new();
    let mut first_err = None;
    for o in outcomes {
        let seed = o.cell.seed.to_string();
        let (status, msg) = match o.report {
            Ok(r) => {
                reports.push(r);
                ("ok", String::new())
            }
            Err(e) => {
                let m = e.to_string();
                first_err.get_or_insert(e);
                ("failed", m)
            }
        };
        w.write_record([o.cell.tag.as_str(), &seed, status, &msg])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_reports(&reports, out)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn gradcheck_cmd(
    cfg: &RunConfig,
    nodes: usize,
    history: usize,
    horizon: usize,
    hidden: usize,
    step: f64,
    tolerance: f64,
) -> Result<()> {
    let gcfg = &cfg.graph;
    let stations = synthetic_stations(nodes, (gcfg.center_lat, gcfg.center_lon), gcfg.spread_km, gcfg.seed);
    let g = crate::graph::build_graph(stations, gcfg.threshold_km)?;
    let b = generate(&cfg.oracle, &g, 3 * (history + horizon))?;
    let stats = crate::dataset::fit_normalize(&b, 0..b.steps())?;
    let samples: Vec<_> = make_windows_in(&stats.normalize(&b), 0..b.steps(), history, horizon, history + horizon)?
        .into_iter()
        .take(2)
        .collect();
    let model = ModelConfig { hidden, ..cfg.model };
    let params = ModelParams::init(&model, cfg.train.seed)?.to_param_set();
    let obj = RolloutObjective {
        samples: &samples,
        graph: &g,
        model,
        loss: LossConfig {
            lambda: cfg.train.lambda,
            smooth: cfg.train.smooth,
        },
        mode: Mode::Infer,
    };
    let report = gradcheck(&obj, &params, step, tolerance)?;
    for grp in &report.groups {
        println!(
            "{:<20} coords {:>6}  max rel err {:.3e}  refined {}",
            grp.name, grp.coords, grp.max_rel_error, grp.refined
        );
    }
    println!(
        "gradcheck {}: max rel err {:.3e} (tolerance {tolerance:.1e})",
        if report.passed() { "passed" } else { "FAILED" },
        report.max_rel_error()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error()
        )))
    }
}
