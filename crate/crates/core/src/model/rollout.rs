//! Autoregressive rollout over one window, with the reverse-mode pass used
//! for training.
//!
//! Steps run over `s = 1 … T′+T−1` with lead time `t = s − T′ + 1`. The
//! historical phase (`t ≤ 0`) is teacher-forced from observations and only
//! warms the recurrent state; predictions start from the anchor `X̂⁰ = X⁰`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{gru_bwd, gru_fwd, lid_bwd, lid_fwd, linear_bwd, linear_fwd, GruCache, LidCache};
use super::{ModelConfig, ModelParams, INPUT_WIDTH};
use crate::dataset::{WindowedSample, N_EMIS, N_MET, N_POLLUTANTS};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::losses::{total_loss_grad, LossBreakdown, LossConfig};
use crate::numerics::{gemm_acc, gemm_tn_acc, Objective, ParamSet, Tensor};

const C: usize = N_POLLUTANTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Dropout active, masks drawn from this seed.
    Train { dropout_seed: u64 },
}

/// Intermediate states of one rollout step, each `[V, hidden]` except
/// `delta` (`[V, 2]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub lead: i64,
    pub embed: Tensor,
    pub local: Tensor,
    pub message: Tensor,
    pub memory: Tensor,
    pub hidden: Tensor,
    pub delta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub records: Vec<StepRecord>,
    /// `[T, V, 2]` for t = 1 … T.
    pub prediction: Tensor,
    /// `[T+1, V, 2]` for t = 0 … T.
    pub transport: Tensor,
}

struct StepCache {
    u: Vec<f64>,
    h0: Vec<f64>,
    lid: Option<LidCache>,
    e: Vec<f64>,
    lh1: Vec<f64>,
    m: Vec<f64>,
    h2: Vec<f64>,
    z_prev: Vec<f64>,
    gru: Option<GruCache>,
    z: Vec<f64>,
    h3: Vec<f64>,
    delta: Vec<f64>,
}

struct Forward {
    steps: Vec<StepCache>,
    pred: Vec<f64>,
    tr: Vec<f64>,
}

fn check_inputs(sample: &WindowedSample, g: &SpatialGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if params.hidden() != cfg.hidden || params.lid_layers.len() != cfg.mlp_depth {
        return Err(Error::dim(format!(
            "parameters sized for hidden {} / depth {}, config says {} / {}",
            params.hidden(),
            params.lid_layers.len(),
            cfg.hidden,
            cfg.mlp_depth
        )));
    }
    let (hp, v) = (sample.history_len(), sample.stations());
    let tf = sample.horizon();
    if v != g.len() {
        return Err(Error::dim(format!("sample has {v} stations, graph has {}", g.len())));
    }
    if hp < 2 || tf < 1 {
        return Err(Error::dim(format!("need T′ ≥ 2 and T ≥ 1, got {hp} and {tf}")));
    }
    let want = |t: &Tensor, steps: usize, ch: usize, what: &str| -> Result<()> {
        if t.shape() != [steps, v, ch] {
            return Err(Error::dim(format!(
                "{what} has shape {:?}, expected [{steps}, {v}, {ch}]",
                t.shape()
            )));
        }
        Ok(())
    };
    want(&sample.x_hist, hp, C, "x_hist")?;
    want(&sample.x_future, tf, C, "x_future")?;
    want(&sample.p_all, hp + tf, N_MET, "p_all")?;
    want(&sample.q_all, hp + tf, N_EMIS, "q_all")
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn forward(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Forward> {
    check_inputs(sample, g, params, cfg)?;
    let (hp, tf, v, h) = (sample.history_len(), sample.horizon(), sample.stations(), cfg.hidden);
    let br = cfg.branches;
    let mut rng = match mode {
        Mode::Train { dropout_seed } if br.lid && cfg.dropout_rate > 0.0 => {
            Some(ChaCha8Rng::seed_from_u64(dropout_seed))
        }
        _ => None,
    };
    let keep = 1.0 - cfg.dropout_rate;
    let lap = g.laplacian().data();

    let mut out = Forward {
        steps: Vec::with_capacity(hp + tf - 1),
        pred: vec![0.0; tf * v * C],
        tr: vec![0.0; (tf + 1) * v * C],
    };
    let mut z_prev = vec![0.0; v * h];
    for s in 1..hp + tf {
        let lead = s as i64 - hp as i64 + 1;
        let x_prev: Vec<f64> = if s < hp + 1 {
            sample.x_hist.slice0_data(s - 1).to_vec()
        } else {
            let k = s - 1 - hp;
            out.pred[k * v * C..(k + 1) * v * C].to_vec()
        };

        let mut u = vec![0.0; v * INPUT_WIDTH];
        let p = sample.p_all.slice0_data(s);
        let q = sample.q_all.slice0_data(s);
        for n in 0..v {
            let row = &mut u[n * INPUT_WIDTH..(n + 1) * INPUT_WIDTH];
            row[..C].copy_from_slice(&x_prev[n * C..(n + 1) * C]);
            row[C..C + N_MET].copy_from_slice(&p[n * N_MET..(n + 1) * N_MET]);
            if br.emissions {
                row[C + N_MET..].copy_from_slice(&q[n * N_EMIS..(n + 1) * N_EMIS]);
            }
        }
        let mut h0 = vec![0.0; v * h];
        linear_fwd(&u, v, &params.embed, &mut h0);

        let mut e = vec![0.0; v * h];
        let lid = if br.lid {
            let mask = rng.as_mut().map(|r| {
                (0..v * h)
                    .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            });
            Some(lid_fwd(&h0, v, params, cfg, mask, &mut e))
        } else {
            None
        };
        let h1 = add(&h0, &e);

        let mut lh1 = Vec::new();
        let mut m = vec![0.0; v * h];
        if br.std {
            lh1 = vec![0.0; v * h];
            gemm_acc(lap, &h1, &mut lh1, v, v, h);
            linear_fwd(&lh1, v, &params.std_linear, &mut m);
        }
        let h2 = add(&h1, &m);

        let mut z = vec![0.0; v * h];
        let gru = if br.tad {
            Some(gru_fwd(&h2, &z_prev, v, &params.gru, &mut z))
        } else {
            None
        };
        let h3 = add(&h2, &z);

        let mut delta = vec![0.0; v * C];
        linear_fwd(&h3, v, &params.readout, &mut delta);
        if !h3.iter().chain(&delta).all(|x| x.is_finite()) {
            return Err(Error::numeric(format!("non-finite model state at lead step t = {lead}")));
        }
        if lead >= 1 {
            let k = (lead - 1) as usize;
            for (i, o) in out.pred[k * v * C..(k + 1) * v * C].iter_mut().enumerate() {
                *o = x_prev[i] + delta[i];
            }
        }
        if lead >= 0 && br.std {
            let k = lead as usize;
            linear_fwd(&m, v, &params.std_readout, &mut out.tr[k * v * C..(k + 1) * v * C]);
        }
        let next_state = z.clone();
        out.steps.push(StepCache {
            u,
            h0,
            lid,
            e,
            lh1,
            m,
            h2,
            z_prev: std::mem::replace(&mut z_prev, next_state),
            gru,
            z,
            h3,
            delta,
        });
    }
    if !out.tr.iter().all(|x| x.is_finite()) {
        return Err(Error::numeric("non-finite transport readout"));
    }
    Ok(out)
}

fn backward(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    fwd: &Forward,
    g_pred: &[f64],
    g_tr: &[f64],
) -> ModelParams {
    let (hp, v, h) = (sample.history_len(), sample.stations(), cfg.hidden);
    let br = cfg.branches;
    let lap = g.laplacian().data();
    let mut grads = params.zeros_like();
    let last = fwd.steps.len();
    // Gradient w.r.t. X̂ at the step being processed.
    let mut g_x: Vec<f64> = g_pred[g_pred.len() - v * C..].to_vec();
    let mut g_z_next = vec![0.0; v * h];

    for s in (1..=last).rev() {
        let c = &fwd.steps[s - 1];
        let lead = s as i64 - hp as i64 + 1;
        let g_delta = if lead >= 1 { g_x.clone() } else { vec![0.0; v * C] };

        let mut g_h3 = vec![0.0; v * h];
        linear_bwd(&c.h3, v, &params.readout, &g_delta, Some(&mut g_h3), &mut grads.readout);

        let mut g_h2 = g_h3.clone();
        let mut g_zprev = vec![0.0; v * h];
        if let Some(gc) = &c.gru {
            let g_z = add(&g_h3, &g_z_next);
            gru_bwd(&c.h2, &c.z_prev, v, &params.gru, gc, &g_z, &mut g_h2, &mut g_zprev, &mut grads.gru);
        }
        g_z_next = g_zprev;

        let mut g_h1 = g_h2.clone();
        if br.std {
            let mut g_m = g_h2;
            if lead >= 0 {
                let k = lead as usize;
                let gt = &g_tr[k * v * C..(k + 1) * v * C];
                linear_bwd(&c.m, v, &params.std_readout, gt, Some(&mut g_m), &mut grads.std_readout);
            }
            let mut g_lh1 = vec![0.0; v * h];
            linear_bwd(&c.lh1, v, &params.std_linear, &g_m, Some(&mut g_lh1), &mut grads.std_linear);
            gemm_tn_acc(lap, &g_lh1, &mut g_h1, v, v, h);
        }

        let mut g_h0 = g_h1.clone();
        if let Some(lc) = &c.lid {
            lid_bwd(&c.h0, v, params, lc, &g_h1, &mut g_h0, &mut grads);
        }

        let mut g_u = vec![0.0; v * INPUT_WIDTH];
        linear_bwd(&c.u, v, &params.embed, &g_h0, Some(&mut g_u), &mut grads.embed);

        // X̂[s−1] is a prediction only when s−1 ≥ T′; otherwise it is data.
        if s > hp {
            let k = s - 1 - hp;
            let mut next = g_pred[k * v * C..(k + 1) * v * C].to_vec();
            for n in 0..v {
                for ch in 0..C {
                    next[n * C + ch] += g_x[n * C + ch] + g_u[n * INPUT_WIDTH + ch];
                }
            }
            g_x = next;
        }
    }
    grads
}

/// Runs the network over one window. All tensors are in normalized units.
pub fn rollout(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<RolloutTrace> {
    let fwd = forward(sample, g, params, cfg, mode)?;
    let (hp, tf, v, h) = (sample.history_len(), sample.horizon(), sample.stations(), cfg.hidden);
    let t = |d: &[f64], w: usize| Tensor::new(vec![v, w], d.to_vec()).unwrap();
    let records = fwd
        .steps
        .iter()
        .enumerate()
        .map(|(i, c)| StepRecord {
            lead: i as i64 + 2 - hp as i64,
            embed: t(&c.h0, h),
            local: t(&c.e, h),
            message: t(&c.m, h),
            memory: t(&c.z, h),
            hidden: t(&c.h3, h),
            delta: t(&c.delta, C),
        })
        .collect();
    Ok(RolloutTrace {
        records,
        prediction: Tensor::new(vec![tf, v, C], fwd.pred).unwrap(),
        transport: Tensor::new(vec![tf + 1, v, C], fwd.tr).unwrap(),
    })
}

/// Prediction only, `[T, V, 2]`.
pub fn predict(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let fwd = forward(sample, g, params, cfg, Mode::Infer)?;
    Ok(Tensor::new(vec![sample.horizon(), sample.stations(), C], fwd.pred).unwrap())
}

/// The anchor `X⁰` repeated over the horizon.
pub fn persistence_forecast(sample: &WindowedSample) -> Tensor {
    let last = sample.last_observation();
    let parts = vec![last; sample.horizon()];
    Tensor::stack(&parts).unwrap()
}

fn tensors(sample: &WindowedSample, fwd: &Forward) -> (Tensor, Tensor) {
    let (tf, v) = (sample.horizon(), sample.stations());
    (
        Tensor::new(vec![tf, v, C], fwd.pred.clone()).unwrap(),
        Tensor::new(vec![tf + 1, v, C], fwd.tr.clone()).unwrap(),
    )
}

pub(crate) fn sample_loss(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    loss: &LossConfig,
    mode: Mode,
) -> Result<LossBreakdown> {
    let fwd = forward(sample, g, params, cfg, mode)?;
    let (pred, tr) = tensors(sample, &fwd);
    Ok(total_loss_grad(&pred, &sample.x_future, &tr, loss)?.0)
}

pub(crate) fn sample_loss_and_grad(
    sample: &WindowedSample,
    g: &SpatialGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    loss: &LossConfig,
    mode: Mode,
) -> Result<(LossBreakdown, ModelParams)> {
    let fwd = forward(sample, g, params, cfg, mode)?;
    let (pred, tr) = tensors(sample, &fwd);
    let (b, g_pred, g_tr) = total_loss_grad(&pred, &sample.x_future, &tr, loss)?;
    let grads = backward(sample, g, params, cfg, &fwd, g_pred.data(), g_tr.data());
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradient"));
    }
    Ok((b, grads))
}

/// Mean total loss over a fixed set of windows, as a function of the
/// flattened parameters.
pub struct RolloutObjective<'a> {
    pub samples: &'a [WindowedSample],
    pub graph: &'a SpatialGraph,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub mode: Mode,
}

impl RolloutObjective<'_> {
    fn mode_for(&self, i: usize) -> Mode {
        match self.mode {
            Mode::Train { dropout_seed } => Mode::Train {
                dropout_seed: dropout_seed.wrapping_add(i as u64),
            },
            Mode::Infer => Mode::Infer,
        }
    }
}

impl Objective for RolloutObjective<'_> {
    fn value(&self, params: &ParamSet) -> Result<f64> {
        let p = ModelParams::from_param_set(params, &self.model)?;
        let mut total = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            total += sample_loss(s, self.graph, &p, &self.model, &self.loss, self.mode_for(i))?.total;
        }
        Ok(total / self.samples.len().max(1) as f64)
    }

    fn value_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)> {
        let p = ModelParams::from_param_set(params, &self.model)?;
        let mut grads = p.zeros_like();
        let mut total = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let (b, gr) = sample_loss_and_grad(s, self.graph, &p, &self.model, &self.loss, self.mode_for(i))?;
            total += b.total;
            grads.accumulate(&gr);
        }
        let n = self.samples.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads.to_param_set()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Station};
    use crate::model::{gru_cell, lid_forward, std_forward, Branches};
    use crate::numerics::gradcheck;

    fn graph() -> SpatialGraph {
        build_graph(
            vec![
                Station::new("a", 0.0, 0.0),
                Station::new("b", 0.0, 0.9),
                Station::new("c", 0.78, 0.45),
                Station::new("d", 10.0, 10.0),
            ],
            200.0,
        )
        .unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    fn sample(hp: usize, tf: usize, v: usize, seed: u64) -> WindowedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WindowedSample {
            x_hist: random(&[hp, v, C], &mut rng),
            p_all: random(&[hp + tf, v, N_MET], &mut rng),
            q_all: random(&[hp + tf, v, N_EMIS], &mut rng),
            x_future: random(&[tf, v, C], &mut rng),
            origin_index: 0,
        }
    }

    fn small_cfg(hidden: usize) -> ModelConfig {
        ModelConfig {
            hidden,
            dropout_rate: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_parameters_reproduce_persistence() {
        let cfg = ModelConfig::default();
        let s = sample(5, 4, 4, 1);
        let p = ModelParams::zeros(&cfg);
        let tr = rollout(&s, &graph(), &p, &cfg, Mode::Train { dropout_seed: 3 }).unwrap();
        assert_eq!(tr.prediction, persistence_forecast(&s));
        assert_eq!(tr.transport.max_abs(), 0.0);
    }

    #[test]
    fn prediction_is_cumulative_sum_of_increments() {
        let cfg = small_cfg(6);
        let s = sample(4, 5, 4, 2);
        let p = ModelParams::init(&cfg, 2).unwrap();
        let tr = rollout(&s, &graph(), &p, &cfg, Mode::Infer).unwrap();
        let mut acc = s.last_observation();
        for t in 1..=5 {
            let rec = &tr.records[t + 2];
            assert_eq!(rec.lead, t as i64);
            acc = acc.add(&rec.delta.clone().reshape(&[4, C]).unwrap()).unwrap();
            assert_eq!(acc.data(), tr.prediction.slice0_data(t - 1));
        }
    }

    #[test]
    fn targets_never_leak_into_prediction() {
        let cfg = small_cfg(5);
        let g = graph();
        let p = ModelParams::init(&cfg, 4).unwrap();
        let s = sample(3, 3, 4, 3);
        let mut other = s.clone();
        other.x_future = other.x_future.map(|x| x * 3.0 + 1.0);
        let a = rollout(&s, &g, &p, &cfg, Mode::Infer).unwrap();
        let b = rollout(&other, &g, &p, &cfg, Mode::Infer).unwrap();
        assert_eq!(a, b);
        // Early history feeds the warm-up states.
        let mut hist = s.clone();
        hist.x_hist.data_mut()[0] += 1.0;
        let c = rollout(&hist, &g, &p, &cfg, Mode::Infer).unwrap();
        assert_ne!(a.prediction, c.prediction);
    }

    #[test]
    fn station_permutation_is_equivariant() {
        let cfg = small_cfg(6);
        let g = graph();
        let p = ModelParams::init(&cfg, 5).unwrap();
        let s = sample(3, 4, 4, 5);
        let perm = [2, 0, 3, 1];
        let a = rollout(&s, &g, &p, &cfg, Mode::Infer).unwrap();
        let b = rollout(&s.permuted(&perm), &g.permuted(&perm).unwrap(), &p, &cfg, Mode::Infer).unwrap();
        for t in 0..4 {
            for (i, &j) in perm.iter().enumerate() {
                for c in 0..C {
                    let x = a.prediction.get(&[t, j, c]);
                    let y = b.prediction.get(&[t, i, c]);
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dropout_is_seeded_and_training_only() {
        let cfg = ModelConfig { hidden: 6, ..Default::default() };
        let g = graph();
        let p = ModelParams::init(&cfg, 6).unwrap();
        let s = sample(3, 3, 4, 6);
        let run = |m| rollout(&s, &g, &p, &cfg, m).unwrap().prediction;
        assert_eq!(run(Mode::Infer), run(Mode::Infer));
        let t1 = run(Mode::Train { dropout_seed: 1 });
        assert_eq!(t1, run(Mode::Train { dropout_seed: 1 }));
        assert_ne!(t1, run(Mode::Train { dropout_seed: 2 }));
        assert_ne!(t1, run(Mode::Infer));
    }

    /// `T′ = 2, T = 1` recomposed from the public layer functions.
    #[test]
    fn two_step_trace_matches_layer_composition() {
        let cfg = small_cfg(4);
        let g = graph();
        let p = ModelParams::init(&cfg, 8).unwrap();
        let s = sample(2, 1, 4, 8);
        let mut z = Tensor::zeros(&[4, 4]);
        let mut x_prev = s.x_hist.slice0(0);
        let mut expected = Vec::new();
        for step in 1..=2 {
            let mut u = Tensor::zeros(&[4, INPUT_WIDTH]);
            for n in 0..4 {
                let row = u.row_mut(n);
                row[..2].copy_from_slice(x_prev.row(n));
                row[2..10].copy_from_slice(s.p_all.slice0(step).row(n));
                row[10..].copy_from_slice(s.q_all.slice0(step).row(n));
            }
            let h0 = p.embed.forward(&u).unwrap();
            let h1 = h0.add(&lid_forward(&h0, &p, &cfg, None).unwrap()).unwrap();
            let m = std_forward(&h1, &g, &p).unwrap();
            let h2 = h1.add(&m).unwrap();
            z = gru_cell(&h2, &z, &p.gru).unwrap();
            let h3 = h2.add(&z).unwrap();
            let delta = p.readout.forward(&h3).unwrap();
            expected.push((h3, delta.clone(), p.std_readout.forward(&m).unwrap()));
            if step == 2 {
                x_prev = x_prev.add(&delta).unwrap();
            } else {
                x_prev = s.x_hist.slice0(1);
            }
        }
        let tr = rollout(&s, &g, &p, &cfg, Mode::Infer).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        for (rec, (h3, delta, _)) in tr.records.iter().zip(&expected) {
            assert!(close(rec.hidden.data(), h3.data()));
            assert!(close(rec.delta.data(), delta.data()));
        }
        assert!(close(tr.prediction.data(), x_prev.data()));
        assert!(close(tr.transport.slice0_data(0), expected[0].2.data()));
        assert!(close(tr.transport.slice0_data(1), expected[1].2.data()));
    }

    #[test]
    fn disabled_branches_are_zero() {
        let g = graph();
        let s = sample(3, 2, 4, 9);
        let mut cfg = small_cfg(4);
        cfg.branches = Branches { lid: false, std: false, tad: false, emissions: false };
        let p = ModelParams::init(&cfg, 9).unwrap();
        let tr = rollout(&s, &g, &p, &cfg, Mode::Infer).unwrap();
        for r in &tr.records {
            assert_eq!(r.local.max_abs(), 0.0);
            assert_eq!(r.message.max_abs(), 0.0);
            assert_eq!(r.memory.max_abs(), 0.0);
        }
        assert_eq!(tr.transport.max_abs(), 0.0);
        let no_q = rollout(&s.without_emissions(), &g, &p, &cfg, Mode::Infer).unwrap();
        assert_eq!(tr, no_q);
    }

    #[test]
    fn non_finite_input_names_the_step() {
        let cfg = small_cfg(4);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let mut s = sample(3, 3, 4, 1);
        s.p_all.data_mut()[4 * N_MET * 4] = f64::NAN;
        match rollout(&s, &graph(), &p, &cfg, Mode::Infer) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("t = 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manual_gradient_passes_finite_difference_check() {
        let g = graph();
        let samples = vec![sample(3, 3, 4, 11), sample(3, 3, 4, 12)];
        for (lambda, smooth) in [(0.0, false), (1.0, true)] {
            let cfg = small_cfg(5);
            let params = ModelParams::init(&cfg, 13).unwrap().to_param_set();
            let obj = RolloutObjective {
                samples: &samples,
                graph: &g,
                model: cfg,
                loss: LossConfig { lambda, smooth },
                mode: Mode::Infer,
            };
            let report = gradcheck(&obj, &params, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }
}
