//! Mini-batch Adam training with plateau decay and early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, Splits, WindowedSample};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::losses::{LossBreakdown, LossConfig};
use crate::model::{predict, sample_loss, sample_loss_and_grad, Mode, ModelConfig, ModelParams};
use crate::numerics::{adam_step, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lambda: f64,
    /// Adds the L2 smoothness penalty to the constraint terms.
    pub smooth: bool,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            lambda: 1.0,
            smooth: false,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("train.lr must be > 0, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return bad("train.batch_size must be ≥ 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("train.plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.early_stop_patience < 1 || self.plateau_patience < 1 {
            return bad("train patience values must be ≥ 1".into());
        }
        if !(self.min_lr >= 0.0) || self.min_lr > self.lr {
            return bad(format!("train.min_lr must lie in [0, lr], got {}", self.min_lr));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("train.lambda must be ≥ 0, got {}", self.lambda));
        }
        if !(self.clip_norm >= 0.0) {
            return bad("train.clip_norm must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            smooth: self.smooth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    /// Validation MAE in physical units.
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; 0 if none ran.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn lr_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    /// Long-format metrics: one `train` and one `val` row per epoch.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::graph::csv_err(path, e))?;
        let wrap = |e: csv::Error| crate::graph::csv_err(path, e);
        w.write_record(["epoch", "split", "l1", "dic_spatial", "dic_temporal", "total"])
            .map_err(wrap)?;
        for rec in &self.epochs {
            for (split, b) in [("train", &rec.train), ("val", &rec.val)] {
                w.write_record([
                    rec.epoch.to_string(),
                    split.to_owned(),
                    b.l1.to_string(),
                    b.dic_spatial.to_string(),
                    b.dic_temporal.to_string(),
                    b.total.to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Mean loss over `samples` in inference mode.
pub fn evaluate_loss(
    samples: &[WindowedSample],
    g: &SpatialGraph,
    params: &ModelParams,
    mcfg: &ModelConfig,
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    let parts = samples
        .par_iter()
        .map(|s| sample_loss(s, g, params, mcfg, loss, Mode::Infer))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts))
}

/// Mean absolute error over all windows, lead times, stations and
/// pollutants, in physical units.
pub fn denormalized_mae(
    samples: &[WindowedSample],
    g: &SpatialGraph,
    params: &ModelParams,
    mcfg: &ModelConfig,
    stats: &NormStats,
) -> Result<f64> {
    let sums = samples
        .par_iter()
        .map(|s| {
            let pred = stats.denormalize_x(&predict(s, g, params, mcfg)?);
            let truth = stats.denormalize_x(&s.x_future);
            let e: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
            Ok((e, pred.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (e, n) = sums.iter().fold((0.0, 0usize), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return Err(Error::validation("no samples to score"));
    }
    Ok(e / n as f64)
}

/// Trains from a seeded initialization and returns the best-validation
/// parameters.
pub fn train(
    splits: &Splits,
    g: &SpatialGraph,
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<(ModelParams, TrainReport)> {
    let init = ModelParams::init(mcfg, mix_seed(&[cfg.seed, 1]))?;
    train_from(init, splits, g, cfg, mcfg)
}

pub fn train_from(
    init: ModelParams,
    splits: &Splits,
    g: &SpatialGraph,
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    mcfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::validation("training split has no windows"));
    }
    if splits.val.is_empty() {
        return Err(Error::validation("validation split has no windows"));
    }
    let started = Instant::now();
    let loss_cfg = cfg.loss();
    let mut params = init;
    let mut flat = params.to_param_set();
    let mut adam = AdamState::new(&flat, cfg.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2]));
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    let mut report = TrainReport {
        best_val_mae: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut since_best = 0;
    let mut since_decay = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_parts = Vec::with_capacity(order.len());
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mode = Mode::Train {
                        dropout_seed: mix_seed(&[cfg.seed, epoch as u64, bi as u64, k as u64]),
                    };
                    sample_loss_and_grad(&splits.train[i], g, &params, mcfg, &loss_cfg, mode)
                })
                .collect::<Vec<_>>();
            let mut grads = params.zeros_like();
            for r in results {
                let (b, gr) = r.map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(format!("epoch {epoch}, batch {}: {m}", bi + 1)),
                    other => other,
                })?;
                if !b.total.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {}",
                        bi + 1
                    )));
                }
                train_parts.push(b);
                grads.accumulate(&gr);
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.global_norm();
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam_step(&mut flat, &grads.to_param_set(), &mut adam)?;
            params.check_and_copy(&flat)?;
        }

        let val = evaluate_loss(&splits.val, g, &params, mcfg, &loss_cfg)?;
        let val_mae = denormalized_mae(&splits.val, g, &params, mcfg, &splits.stats)?;
        if !val_mae.is_finite() {
            return Err(Error::numeric(format!("non-finite validation MAE at epoch {epoch}")));
        }
        report.epochs.push(EpochRecord {
            epoch,
            lr: adam.lr,
            train: LossBreakdown::mean(&train_parts),
            val,
            val_mae,
        });
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} val_mae {:.4} lr {:.2e}",
            report.epochs[epoch - 1].train.total,
            val.total,
            val_mae,
            adam.lr
        );

        if val_mae < report.best_val_mae {
            report.best_val_mae = val_mae;
            report.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.early_stop_patience {
                report.stopped_early = true;
                break;
            }
            if since_decay >= cfg.plateau_patience {
                adam.lr = (adam.lr * cfg.plateau_factor).max(cfg.min_lr);
                since_decay = 0;
            }
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    if report.epochs.is_empty() {
        report.best_val_mae = f64::NAN;
    }
    Ok((best, report))
}

const MAGIC: &[u8; 8] = b"AIRSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    stats: NormStats,
    tensors: Vec<(String, Vec<usize>)>,
}

/// Trained parameters with everything needed to run them on raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub stats: NormStats,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Magic, LE `u32` version, LE `u64` header length, JSON header, then
    /// every tensor as LE `f64` in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let set = self.params.to_param_set();
        let header = Header {
            model: self.model,
            stats: self.stats.clone(),
            tensors: set.iter().map(|(n, t)| (n.to_owned(), t.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * set.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in set.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Parse("checkpoint is truncated".into());
        if bytes.len() < 20 {
            return Err(truncated());
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20usize.saturating_add(hlen)).ok_or_else(truncated)?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        let mut pos = 20 + hlen;
        let mut set = crate::numerics::ParamSet::new();
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(truncated)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += 8 * n;
            set.insert(name, crate::numerics::Tensor::new(shape, data)?)?;
        }
        if pos != bytes.len() {
            return Err(Error::Parse(format!("{} trailing bytes after checkpoint", bytes.len() - pos)));
        }
        let params = ModelParams::from_param_set(&set, &header.model)?;
        Ok(Checkpoint {
            model: header.model,
            stats: header.stats,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::prepare_splits;
    use crate::graph::build_graph;
    use crate::model::rollout;
    use crate::oracle::{generate, synthetic_stations, OracleConfig};

    fn tiny_splits(steps: usize, stride: usize) -> (Splits, SpatialGraph) {
        let g = build_graph(synthetic_stations(3, (40.0, 116.0), 120.0, 1), 200.0).unwrap();
        let b = generate(&OracleConfig::default(), &g, steps).unwrap();
        (prepare_splits(&b, [0.6, 0.2, 0.2], 4, 3, stride).unwrap(), g)
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            hidden: 6,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (splits, g) = tiny_splits(60, 4);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let (p, report) = train(&splits, &g, &cfg, &small_model()).unwrap();
        assert_eq!(p, ModelParams::init(&small_model(), mix_seed(&[0, 1])).unwrap());
        assert!(report.epochs.is_empty());
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { plateau_factor: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { plateau_patience: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn empty_split_is_rejected() {
        let (mut splits, g) = tiny_splits(60, 4);
        splits.val.clear();
        let err = train(&splits, &g, &TrainConfig::default(), &small_model()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    /// One window, no constraint, large step: the fit must collapse.
    #[test]
    fn single_sample_overfits() {
        let (mut splits, g) = tiny_splits(60, 4);
        splits.train.truncate(1);
        splits.val = splits.train.clone();
        let cfg = TrainConfig {
            lr: 1e-2,
            max_epochs: 200,
            lambda: 0.0,
            early_stop_patience: 200,
            plateau_patience: 200,
            ..Default::default()
        };
        let mcfg = ModelConfig {
            dropout_rate: 0.0,
            ..small_model()
        };
        let (_, report) = train(&splits, &g, &cfg, &mcfg).unwrap();
        let first = report.epochs[0].train.l1;
        let best = report.epochs.iter().map(|e| e.train.l1).fold(f64::INFINITY, f64::min);
        let last = report.epochs.last().unwrap().train.l1;
        assert!(last <= 0.1 * first, "first {first}, last {last}, best {best}");
    }

    #[test]
    fn runs_are_reproducible_and_schedule_is_monotone() {
        let (splits, g) = tiny_splits(90, 3);
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 4,
            max_epochs: 12,
            plateau_patience: 1,
            early_stop_patience: 4,
            seed: 5,
            ..Default::default()
        };
        let (a, ra) = train(&splits, &g, &cfg, &small_model()).unwrap();
        let (b, rb) = train(&splits, &g, &cfg, &small_model()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs, rb.epochs);
        let lrs = ra.lr_trajectory();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| l >= cfg.min_lr));
        assert!(ra.best_epoch >= 1 && ra.best_epoch <= ra.epochs.len());
        let again = denormalized_mae(&splits.val, &g, &a, &small_model(), &splits.stats).unwrap();
        assert!((again - ra.best_val_mae).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (splits, g) = tiny_splits(60, 4);
        let cfg = small_model();
        let ck = Checkpoint {
            model: cfg,
            stats: splits.stats.clone(),
            params: ModelParams::init(&cfg, 3).unwrap(),
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let s = &splits.test[0];
        let a = rollout(s, &g, &ck.params, &cfg, Mode::Infer).unwrap();
        let b = rollout(s, &g, &back.params, &cfg, Mode::Infer).unwrap();
        assert_eq!(a, b);

        for cut in [0, 10, 25, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Parse(_))));
        }
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        match Checkpoint::from_bytes(&wrong) {
            Err(Error::Parse(m)) => assert!(m.contains("version 9")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metrics_csv_has_two_rows_per_epoch() {
        let (splits, g) = tiny_splits(60, 4);
        let cfg = TrainConfig {
            max_epochs: 2,
            lr: 1e-3,
            ..Default::default()
        };
        let (_, report) = train(&splits, &g, &cfg, &small_model()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        report.write_metrics_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "epoch,split,l1,dic_spatial,dic_temporal,total");
        assert_eq!(lines.len(), 1 + 2 * report.epochs.len());
        assert!(lines[1].starts_with("1,train,"));
        assert!(lines[2].starts_with("1,val,"));
    }
}
