//! Prediction loss and the mass-balance penalties on the transport readout.
//!
//! The transport tensor holds the per-station transport readout for
//! `t = 0 … T` with shape `[T+1, V, C]`. Writing `s_t,c = Σ_v tr[t, v, c]`:
//!
//! ```text
//! spatial  = 1/T Σ_{t=1..T} mean_c |s_t,c|
//! temporal = 1/T Σ_{t=1..T} mean_c |s_t,c − s_{t−1},c|
//! smooth   = 1/T Σ_{t=1..T} ‖tr[t] − tr[t−1]‖₂
//! total    = l1 + λ (spatial + temporal [+ smooth])
//! ```
//!
//! Every term here also has a `*_grad` form returning the loss gradient,
//! which the rollout backward pass consumes. Subgradients use `sign(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the constraint terms.
    pub lambda: f64,
    /// Adds the L2 smoothness term to the constraint sum.
    pub smooth: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            smooth: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dic_spatial: f64,
    pub dic_temporal: f64,
    pub dic_smooth: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn dic(&self) -> f64 {
        self.dic_spatial + self.dic_temporal
    }

    /// Field-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.l1 += b.l1;
            out.dic_spatial += b.dic_spatial;
            out.dic_temporal += b.dic_temporal;
            out.dic_smooth += b.dic_smooth;
            out.total += b.total;
            out.lambda = b.lambda;
        }
        out.l1 /= n;
        out.dic_spatial /= n;
        out.dic_temporal /= n;
        out.dic_smooth /= n;
        out.total /= n;
        out
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} vs truth {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn l1_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    same_shape(pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

pub fn l1_loss_grad(pred: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    let value = l1_loss(pred, truth)?;
    let n = pred.len().max(1) as f64;
    let g = pred.zip_map(truth, |p, t| sign(p - t) / n)?;
    Ok((value, g))
}

fn transport_dims(tr: &Tensor) -> Result<(usize, usize, usize)> {
    if tr.shape().len() != 3 {
        return Err(Error::dim(format!(
            "transport must be [T+1, V, C], got {:?}",
            tr.shape()
        )));
    }
    let (steps, v, c) = (tr.shape()[0], tr.shape()[1], tr.shape()[2]);
    if steps < 2 {
        return Err(Error::validation(format!(
            "constraint terms need ≥ 2 time slices, got {steps}"
        )));
    }
    Ok((steps, v, c))
}

/// Station sums `s[t][c]`.
fn station_sums(tr: &Tensor, steps: usize, v: usize, c: usize) -> Vec<f64> {
    let d = tr.data();
    let mut s = vec![0.0; steps * c];
    for t in 0..steps {
        for n in 0..v {
            for k in 0..c {
                s[t * c + k] += d[(t * v + n) * c + k];
            }
        }
    }
    s
}

/// `(spatial, temporal)` mass-balance penalties.
pub fn dic_loss(tr: &Tensor) -> Result<(f64, f64)> {
    let (steps, v, c) = transport_dims(tr)?;
    let s = station_sums(tr, steps, v, c);
    let horizon = (steps - 1) as f64;
    let (mut spatial, mut temporal) = (0.0, 0.0);
    for t in 1..steps {
        for k in 0..c {
            spatial += s[t * c + k].abs();
            temporal += (s[t * c + k] - s[(t - 1) * c + k]).abs();
        }
    }
    let norm = horizon * c as f64;
    Ok((spatial / norm, temporal / norm))
}

/// Penalties plus gradients of `w_s·spatial + w_t·temporal` w.r.t. `tr`.
pub fn dic_loss_grad(tr: &Tensor, w_spatial: f64, w_temporal: f64) -> Result<((f64, f64), Tensor)> {
    let (steps, v, c) = transport_dims(tr)?;
    let value = dic_loss(tr)?;
    let s = station_sums(tr, steps, v, c);
    let norm = (steps - 1) as f64 * c as f64;
    // Gradient w.r.t. each station sum, then broadcast over stations.
    let mut gs = vec![0.0; steps * c];
    for t in 1..steps {
        for k in 0..c {
            gs[t * c + k] += w_spatial * sign(s[t * c + k]) / norm;
            let d = sign(s[t * c + k] - s[(t - 1) * c + k]) * w_temporal / norm;
            gs[t * c + k] += d;
            gs[(t - 1) * c + k] -= d;
        }
    }
    let mut g = Tensor::zeros(tr.shape());
    let gd = g.data_mut();
    for t in 0..steps {
        for n in 0..v {
            for k in 0..c {
                gd[(t * v + n) * c + k] = gs[t * c + k];
            }
        }
    }
    Ok((value, g))
}

/// Mean L2 norm of consecutive transport differences.
pub fn dic_smooth(tr: &Tensor) -> Result<f64> {
    Ok(dic_smooth_grad(tr, 0.0)?.0)
}

pub fn dic_smooth_grad(tr: &Tensor, weight: f64) -> Result<(f64, Tensor)> {
    let (steps, v, c) = transport_dims(tr)?;
    let inner = v * c;
    let d = tr.data();
    let horizon = (steps - 1) as f64;
    let mut total = 0.0;
    let mut g = Tensor::zeros(tr.shape());
    for t in 1..steps {
        let cur = &d[t * inner..(t + 1) * inner];
        let prev = &d[(t - 1) * inner..t * inner];
        let norm = cur
            .iter()
            .zip(prev)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        total += norm;
        if norm > 0.0 && weight != 0.0 {
            let gd = g.data_mut();
            for i in 0..inner {
                let q = weight * (cur[i] - prev[i]) / (norm * horizon);
                gd[t * inner + i] += q;
                gd[(t - 1) * inner + i] -= q;
            }
        }
    }
    Ok((total / horizon, g))
}

/// Combined objective for one sample.
pub fn total_loss(pred: &Tensor, truth: &Tensor, tr: &Tensor, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(total_loss_grad(pred, truth, tr, cfg)?.0)
}

/// Combined objective and its gradients w.r.t. `pred` and `tr`.
pub fn total_loss_grad(
    pred: &Tensor,
    truth: &Tensor,
    tr: &Tensor,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Tensor, Tensor)> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Config(format!("λ must be ≥ 0, got {}", cfg.lambda)));
    }
    let (l1, g_pred) = l1_loss_grad(pred, truth)?;
    let ((spatial, temporal), mut g_tr) = dic_loss_grad(tr, cfg.lambda, cfg.lambda)?;
    let mut smooth = 0.0;
    if cfg.smooth {
        let (s, gs) = dic_smooth_grad(tr, cfg.lambda)?;
        smooth = s;
        g_tr.add_assign(&gs)?;
    }
    let constraint = spatial + temporal + if cfg.smooth { smooth } else { 0.0 };
    let breakdown = LossBreakdown {
        l1,
        dic_spatial: spatial,
        dic_temporal: temporal,
        dic_smooth: smooth,
        total: l1 + cfg.lambda * constraint,
        lambda: cfg.lambda,
    };
    Ok((breakdown, g_pred, g_tr))
}
