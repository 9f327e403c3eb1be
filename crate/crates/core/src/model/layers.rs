//! Layer kernels on row-major slices, with matching backward passes.

use super::{GruParams, Linear, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::numerics::{gemm_acc, gemm_nt_acc, gemm_tn_acc, sigmoid, Tensor};

pub(crate) fn linear_fwd(x: &[f64], rows: usize, lin: &Linear, out: &mut [f64]) {
    let (k, n) = (lin.fan_in(), lin.fan_out());
    let b = lin.bias.data();
    for r in 0..rows {
        out[r * n..(r + 1) * n].copy_from_slice(b);
    }
    gemm_acc(x, lin.weight.data(), out, rows, k, n);
}

/// Accumulates weight/bias gradients and, if requested, `∂/∂x`.
pub(crate) fn linear_bwd(
    x: &[f64],
    rows: usize,
    lin: &Linear,
    g_out: &[f64],
    g_x: Option<&mut [f64]>,
    g_lin: &mut Linear,
) {
    let (k, n) = (lin.fan_in(), lin.fan_out());
    gemm_tn_acc(x, g_out, g_lin.weight.data_mut(), rows, k, n);
    let gb = g_lin.bias.data_mut();
    for r in 0..rows {
        for (b, g) in gb.iter_mut().zip(&g_out[r * n..(r + 1) * n]) {
            *b += g;
        }
    }
    if let Some(g_x) = g_x {
        gemm_nt_acc(g_out, lin.weight.data(), g_x, rows, k, n);
    }
}

/// Row-wise `x / √(mean(x²) + eps) ⊙ gain`; writes the per-row RMS.
pub(crate) fn rmsnorm_fwd(x: &[f64], d: usize, gain: &[f64], eps: f64, out: &mut [f64], rms: &mut [f64]) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let s = (ms + eps).sqrt();
        rms[r] = s;
        for ((o, &v), &g) in out[r * d..(r + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = if s > 0.0 { v / s * g } else { 0.0 };
        }
    }
}

pub(crate) fn rmsnorm_bwd(
    x: &[f64],
    d: usize,
    gain: &[f64],
    rms: &[f64],
    g_out: &[f64],
    g_x: &mut [f64],
    g_gain: &mut [f64],
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let s = rms[r];
        if s == 0.0 {
            continue;
        }
        let go = &g_out[r * d..(r + 1) * d];
        let mut dot = 0.0;
        for j in 0..d {
            g_gain[j] += go[j] * row[j] / s;
            dot += go[j] * gain[j] * row[j];
        }
        let c = dot / (d as f64 * s * s * s);
        for j in 0..d {
            g_x[r * d + j] += go[j] * gain[j] / s - row[j] * c;
        }
    }
}

/// Cached activations of the local-interaction MLP for one step.
#[derive(Debug, Clone, Default)]
pub(crate) struct LidCache {
    pub rms: Vec<f64>,
    pub normed: Vec<f64>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<f64>>,
    /// SiLU outputs feeding layers 1.. (index k feeds layer k+1).
    pub act: Vec<Vec<f64>>,
    pub mask: Option<Vec<f64>>,
}

pub(crate) fn lid_fwd(
    h: &[f64],
    rows: usize,
    params: &ModelParams,
    cfg: &ModelConfig,
    mask: Option<Vec<f64>>,
    e_out: &mut [f64],
) -> LidCache {
    let d = params.hidden();
    let mut c = LidCache {
        rms: vec![0.0; rows],
        normed: vec![0.0; rows * d],
        ..Default::default()
    };
    rmsnorm_fwd(h, d, params.lid_gain.data(), cfg.rmsnorm_eps, &mut c.normed, &mut c.rms);
    let depth = params.lid_layers.len();
    for (k, layer) in params.lid_layers.iter().enumerate() {
        let input = if k == 0 { &c.normed } else { &c.act[k - 1] };
        let mut pre = vec![0.0; rows * d];
        linear_fwd(input, rows, layer, &mut pre);
        if k + 1 < depth {
            c.act.push(pre.iter().map(|&a| a * sigmoid(a)).collect());
        }
        c.pre.push(pre);
    }
    let last = &c.pre[depth - 1];
    match &mask {
        Some(m) => {
            for ((e, &a), &m) in e_out.iter_mut().zip(last).zip(m) {
                *e = a * m;
            }
        }
        None => e_out.copy_from_slice(last),
    }
    c.mask = mask;
    c
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

pub(crate) fn lid_bwd(
    h: &[f64],
    rows: usize,
    params: &ModelParams,
    cache: &LidCache,
    g_e: &[f64],
    g_h: &mut [f64],
    grads: &mut ModelParams,
) {
    let d = params.hidden();
    let depth = params.lid_layers.len();
    let mut g_pre: Vec<f64> = match &cache.mask {
        Some(m) => g_e.iter().zip(m).map(|(g, m)| g * m).collect(),
        None => g_e.to_vec(),
    };
    for k in (0..depth).rev() {
        let input = if k == 0 { &cache.normed } else { &cache.act[k - 1] };
        let mut g_in = vec![0.0; rows * d];
        linear_bwd(input, rows, &params.lid_layers[k], &g_pre, Some(&mut g_in), &mut grads.lid_layers[k]);
        if k > 0 {
            for (g, &a) in g_in.iter_mut().zip(&cache.pre[k - 1]) {
                *g *= silu_grad(a);
            }
        }
        g_pre = g_in;
    }
    rmsnorm_bwd(
        h,
        d,
        params.lid_gain.data(),
        &cache.rms,
        &g_pre,
        g_h,
        grads.lid_gain.data_mut(),
    );
}

/// Cached gate activations for one recurrent step.
#[derive(Debug, Clone, Default)]
pub(crate) struct GruCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n · z_prev` block, needed for the reset-gate gradient.
    pub state_n: Vec<f64>,
}

pub(crate) fn gru_fwd(x: &[f64], z_prev: &[f64], rows: usize, gru: &GruParams, out: &mut [f64]) -> GruCache {
    let h = gru.bias.len() / 3;
    let mut gx = vec![0.0; rows * 3 * h];
    for r in 0..rows {
        gx[r * 3 * h..(r + 1) * 3 * h].copy_from_slice(gru.bias.data());
    }
    gemm_acc(x, gru.w_input.data(), &mut gx, rows, h, 3 * h);
    let mut gh = vec![0.0; rows * 3 * h];
    gemm_acc(z_prev, gru.w_state.data(), &mut gh, rows, h, 3 * h);
    let mut c = GruCache {
        r: vec![0.0; rows * h],
        z: vec![0.0; rows * h],
        n: vec![0.0; rows * h],
        state_n: vec![0.0; rows * h],
    };
    for row in 0..rows {
        let base = row * 3 * h;
        for j in 0..h {
            let i = row * h + j;
            let r = sigmoid(gx[base + j] + gh[base + j]);
            let z = sigmoid(gx[base + h + j] + gh[base + h + j]);
            let sn = gh[base + 2 * h + j];
            let n = (gx[base + 2 * h + j] + r * sn).tanh();
            c.r[i] = r;
            c.z[i] = z;
            c.n[i] = n;
            c.state_n[i] = sn;
            out[i] = (1.0 - z) * n + z * z_prev[i];
        }
    }
    c
}

/// Accumulates parameter gradients; adds `∂/∂x` and `∂/∂z_prev`.
pub(crate) fn gru_bwd(
    x: &[f64],
    z_prev: &[f64],
    rows: usize,
    gru: &GruParams,
    cache: &GruCache,
    g_out: &[f64],
    g_x: &mut [f64],
    g_zprev: &mut [f64],
    grads: &mut GruParams,
) {
    let h = gru.bias.len() / 3;
    let mut g_gx = vec![0.0; rows * 3 * h];
    let mut g_gh = vec![0.0; rows * 3 * h];
    for row in 0..rows {
        let base = row * 3 * h;
        for j in 0..h {
            let i = row * h + j;
            let (r, z, n, sn) = (cache.r[i], cache.z[i], cache.n[i], cache.state_n[i]);
            let go = g_out[i];
            g_zprev[i] += go * z;
            let g_n = go * (1.0 - z);
            let g_z = go * (z_prev[i] - n);
            let g_an = g_n * (1.0 - n * n);
            let g_r = g_an * sn;
            let g_az = g_z * z * (1.0 - z);
            let g_ar = g_r * r * (1.0 - r);
            g_gx[base + j] = g_ar;
            g_gh[base + j] = g_ar;
            g_gx[base + h + j] = g_az;
            g_gh[base + h + j] = g_az;
            g_gx[base + 2 * h + j] = g_an;
            g_gh[base + 2 * h + j] = g_an * r;
        }
    }
    gemm_tn_acc(x, &g_gx, grads.w_input.data_mut(), rows, h, 3 * h);
    gemm_tn_acc(z_prev, &g_gh, grads.w_state.data_mut(), rows, h, 3 * h);
    let gb = grads.bias.data_mut();
    for row in 0..rows {
        for (b, g) in gb.iter_mut().zip(&g_gx[row * 3 * h..(row + 1) * 3 * h]) {
            *b += g;
        }
    }
    gemm_nt_acc(&g_gx, gru.w_input.data(), g_x, rows, h, 3 * h);
    gemm_nt_acc(&g_gh, gru.w_state.data(), g_zprev, rows, h, 3 * h);
}

fn check_rows(t: &Tensor, cols: usize, what: &str) -> Result<usize> {
    if t.shape().len() != 2 || t.cols() != cols {
        return Err(Error::dim(format!(
            "{what}: expected [rows, {cols}], got {:?}",
            t.shape()
        )));
    }
    Ok(t.rows())
}

/// RMS normalization of each row of `[n, d]` with per-feature gain.
pub fn rmsnorm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    let d = gain.len();
    let rows = check_rows(x, d, "rmsnorm")?;
    let mut out = Tensor::zeros(x.shape());
    let mut rms = vec![0.0; rows];
    rmsnorm_fwd(x.data(), d, gain.data(), eps, out.data_mut(), &mut rms);
    Ok(out)
}

/// Local-interaction branch `E = drop(MLP(RMSNorm(h)))`. `mask` holds the
/// already-scaled keep mask; `None` disables dropout.
pub fn lid_forward(h: &Tensor, params: &ModelParams, cfg: &ModelConfig, mask: Option<&Tensor>) -> Result<Tensor> {
    let rows = check_rows(h, params.hidden(), "lid_forward")?;
    if let Some(m) = mask {
        if m.shape() != h.shape() {
            return Err(Error::dim("dropout mask shape differs from input"));
        }
    }
    let mut out = Tensor::zeros(h.shape());
    lid_fwd(h.data(), rows, params, cfg, mask.map(|m| m.data().to_vec()), out.data_mut());
    Ok(out)
}

/// Graph transport message `M = Linear(L̃ h)`.
pub fn std_forward(h: &Tensor, g: &SpatialGraph, params: &ModelParams) -> Result<Tensor> {
    check_rows(h, params.hidden(), "std_forward")?;
    let lh = g.apply_laplacian(h)?;
    params.std_linear.forward(&lh)
}

/// One gated recurrent update `Z = (1 − z) ⊙ n + z ⊙ z_prev`.
pub fn gru_cell(h_in: &Tensor, z_prev: &Tensor, gru: &GruParams) -> Result<Tensor> {
    let h = gru.bias.len() / 3;
    let rows = check_rows(h_in, h, "gru_cell input")?;
    if z_prev.shape() != h_in.shape() {
        return Err(Error::dim(format!(
            "gru_cell state {:?} vs input {:?}",
            z_prev.shape(),
            h_in.shape()
        )));
    }
    let mut out = Tensor::zeros(h_in.shape());
    gru_fwd(h_in.data(), z_prev.data(), rows, gru, out.data_mut());
    Ok(out)
}
