//! Error metrics, lead-time curves, the persistence baseline and the
//! ablation / sensitivity experiment harness.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, Splits, WindowedSample, N_POLLUTANTS, POLLUTANTS};
use crate::error::{Error, Result};
use crate::graph::{csv_err, SpatialGraph};
use crate::model::{persistence_forecast, predict, Branches, ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::trainer::{train, TrainConfig, TrainReport};

fn check_same(pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("cannot score an empty tensor"));
    }
    Ok(())
}

pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn rmse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadMetric {
    pub lead_hour: usize,
    pub pollutant: String,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantSummary {
    pub pollutant: String,
    /// Mean over lead times of the per-lead MAE.
    pub mae: f64,
    pub rmse: f64,
}

/// Physical-unit scores of one forecaster on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub seed: Option<u64>,
    pub samples: usize,
    pub horizon: usize,
    pub per_lead: Vec<LeadMetric>,
    pub per_pollutant: Vec<PollutantSummary>,
    /// Mean over pollutants and lead times.
    pub mae: f64,
    pub rmse: f64,
}

impl EvalReport {
    pub fn lead(&self, lead_hour: usize, pollutant: usize) -> &LeadMetric {
        &self.per_lead[(lead_hour - 1) * N_POLLUTANTS + pollutant]
    }

    /// MAE at one lead averaged over pollutants.
    pub fn mae_at(&self, lead_hour: usize) -> f64 {
        (0..N_POLLUTANTS).map(|c| self.lead(lead_hour, c).mae).sum::<f64>() / N_POLLUTANTS as f64
    }
}

/// Scores normalized forecasts against each sample's targets after mapping
/// both back to physical units.
pub fn score(
    tag: &str,
    seed: Option<u64>,
    samples: &[WindowedSample],
    preds: &[Tensor],
    stats: &NormStats,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::validation(format!("`{tag}`: nothing to evaluate")));
    }
    if samples.len() != preds.len() {
        return Err(Error::dim(format!(
            "{} samples but {} forecasts",
            samples.len(),
            preds.len()
        )));
    }
    let horizon = samples[0].horizon();
    let mut abs = vec![0.0; horizon * N_POLLUTANTS];
    let mut sq = vec![0.0; horizon * N_POLLUTANTS];
    let mut count = vec![0usize; horizon * N_POLLUTANTS];
    for (s, p) in samples.iter().zip(preds) {
        check_same(p, &s.x_future)?;
        if s.horizon() != horizon {
            return Err(Error::dim("samples with different horizons"));
        }
        let pred = stats.denormalize_x(p);
        let truth = stats.denormalize_x(&s.x_future);
        let per_step = s.stations() * N_POLLUTANTS;
        for (i, (a, b)) in pred.data().iter().zip(truth.data()).enumerate() {
            let k = (i / per_step) * N_POLLUTANTS + i % N_POLLUTANTS;
            abs[k] += (a - b).abs();
            sq[k] += (a - b).powi(2);
            count[k] += 1;
        }
    }
    let mut per_lead = Vec::with_capacity(horizon * N_POLLUTANTS);
    for lead in 0..horizon {
        for c in 0..N_POLLUTANTS {
            let k = lead * N_POLLUTANTS + c;
            let n = count[k] as f64;
            per_lead.push(LeadMetric {
                lead_hour: lead + 1,
                pollutant: POLLUTANTS[c].to_owned(),
                mae: abs[k] / n,
                rmse: (sq[k] / n).sqrt(),
            });
        }
    }
    let per_pollutant: Vec<_> = (0..N_POLLUTANTS)
        .map(|c| {
            let rows = per_lead.iter().skip(c).step_by(N_POLLUTANTS);
            let (m, r) = rows.fold((0.0, 0.0), |(m, r), x| (m + x.mae, r + x.rmse));
            PollutantSummary {
                pollutant: POLLUTANTS[c].to_owned(),
                mae: m / horizon as f64,
                rmse: r / horizon as f64,
            }
        })
        .collect();
    let n = N_POLLUTANTS as f64;
    Ok(EvalReport {
        tag: tag.to_owned(),
        seed,
        samples: samples.len(),
        horizon,
        mae: per_pollutant.iter().map(|p| p.mae).sum::<f64>() / n,
        rmse: per_pollutant.iter().map(|p| p.rmse).sum::<f64>() / n,
        per_lead,
        per_pollutant,
    })
}

pub fn evaluate_model(
    tag: &str,
    seed: Option<u64>,
    samples: &[WindowedSample],
    g: &SpatialGraph,
    params: &ModelParams,
    mcfg: &ModelConfig,
    stats: &NormStats,
) -> Result<EvalReport> {
    let preds = samples
        .par_iter()
        .map(|s| predict(s, g, params, mcfg))
        .collect::<Result<Vec<_>>>()?;
    score(tag, seed, samples, &preds, stats)
}

pub fn evaluate_persistence(samples: &[WindowedSample], stats: &NormStats) -> Result<EvalReport> {
    let preds: Vec<_> = samples.iter().map(persistence_forecast).collect();
    score("persistence", None, samples, &preds, stats)
}

/// Summary CSV with one row per report and pollutant.
pub fn write_summary_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let wrap = |e| csv_err(path, e);
    w.write_record(["model", "seed", "pollutant", "mae", "rmse"]).map_err(wrap)?;
    for r in reports {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        for p in &r.per_pollutant {
            w.write_record([&r.tag, &seed, &p.pollutant, &p.mae.to_string(), &p.rmse.to_string()])
                .map_err(wrap)?;
        }
        w.write_record([&r.tag, &seed, "all", &r.mae.to_string(), &r.rmse.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `lead_hour,model,pollutant,mae,rmse` rows for plotting.
pub fn write_leadtime_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let wrap = |e| csv_err(path, e);
    w.write_record(["lead_hour", "model", "pollutant", "mae", "rmse"]).map_err(wrap)?;
    for r in reports {
        let model = match r.seed {
            Some(s) => format!("{}@{s}", r.tag),
            None => r.tag.clone(),
        };
        for m in &r.per_lead {
            w.write_record([
                &m.lead_hour.to_string(),
                &model,
                &m.pollutant,
                &m.mae.to_string(),
                &m.rmse.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(reports: &[EvalReport], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(reports).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `report.json` and `leadtime_curve.csv` into `dir`.
pub fn write_reports(reports: &[EvalReport], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_summary_csv(reports, &dir.join("report.csv"))?;
    write_json(reports, &dir.join("report.json"))?;
    write_leadtime_csv(reports, &dir.join("leadtime_curve.csv"))
}

/// Named experiment variants.
pub const CELL_NAMES: [&str; 12] = [
    "full",
    "no-lid",
    "no-std",
    "no-tad",
    "lambda-0",
    "lambda-1",
    "lambda-10",
    "hidden-16",
    "hidden-32",
    "hidden-64",
    "emissions-off",
    "persistence",
];

/// One trainable configuration of the suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub tag: String,
    pub seed: u64,
    /// `None` marks the persistence baseline, which is not trained.
    pub setup: Option<(ModelConfig, TrainConfig)>,
}

/// Derives a cell from the base configuration by name.
pub fn make_cell(name: &str, model: &ModelConfig, train: &TrainConfig, seed: u64) -> Result<ExperimentCell> {
    let mut m = *model;
    let mut t = train.clone();
    t.seed = seed;
    let on = Branches::default();
    match name {
        "full" => m.branches = on,
        "no-lid" => m.branches = Branches { lid: false, ..on },
        "no-std" => m.branches = Branches { std: false, ..on },
        "no-tad" => m.branches = Branches { tad: false, ..on },
        "emissions-off" => m.branches = Branches { emissions: false, ..on },
        "lambda-0" => t.lambda = 0.0,
        "lambda-1" => t.lambda = 1.0,
        "lambda-10" => t.lambda = 10.0,
        "hidden-16" => m.hidden = 16,
        "hidden-32" => m.hidden = 32,
        "hidden-64" => m.hidden = 64,
        "persistence" => {
            return Ok(ExperimentCell {
                tag: name.to_owned(),
                seed,
                setup: None,
            })
        }
        other => {
            return Err(Error::Config(format!(
                "unknown experiment cell `{other}` (known: {})",
                CELL_NAMES.join(", ")
            )))
        }
    }
    Ok(ExperimentCell {
        tag: name.to_owned(),
        seed,
        setup: Some((m, t)),
    })
}

/// Every named cell for every seed, in name-major order.
pub fn build_matrix(names: &[String], model: &ModelConfig, train: &TrainConfig, seeds: &[u64]) -> Result<Vec<ExperimentCell>> {
    let mut out = Vec::new();
    for n in names {
        for &s in seeds {
            out.push(make_cell(n, model, train, s)?);
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: ExperimentCell,
    pub report: Result<EvalReport>,
    pub training: Option<TrainReport>,
    pub params: Option<ModelParams>,
}

fn run_cell(cell: &ExperimentCell, splits: &Splits, g: &SpatialGraph) -> CellOutcome {
    let mut out = CellOutcome {
        cell: cell.clone(),
        report: Err(Error::validation("cell did not run")),
        training: None,
        params: None,
    };
    let Some((m, t)) = &cell.setup else {
        out.report = evaluate_persistence(&splits.test, &splits.stats);
        return out;
    };
    match train(splits, g, t, m) {
        Ok((params, report)) => {
            out.report = evaluate_model(&cell.tag, Some(cell.seed), &splits.test, g, &params, m, &splits.stats);
            out.training = Some(report);
            out.params = Some(params);
        }
        Err(e) => {
            log::warn!("cell {} (seed {}) failed: {e}", cell.tag, cell.seed);
            out.report = Err(e);
        }
    }
    out
}

/// Trains and scores each cell on the shared splits. A failing cell records
/// its error and the rest continue. `jobs` bounds concurrent cells; output
/// order follows `cells` regardless.
pub fn run_experiment_suite(
    cells: &[ExperimentCell],
    splits: &Splits,
    g: &SpatialGraph,
    jobs: usize,
) -> Result<Vec<CellOutcome>> {
    if jobs <= 1 {
        return Ok(cells.iter().map(|c| run_cell(c, splits, g)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(c, splits, g)).collect()))
}
