//! The forecasting network: embedding, local-interaction MLP, graph
//! transport, recurrent accumulation and residual readout.

mod layers;
mod rollout;

pub use layers::{gru_cell, lid_forward, rmsnorm, std_forward};
pub use rollout::{persistence_forecast, predict, rollout, Mode, RolloutObjective, RolloutTrace, StepRecord};
pub(crate) use rollout::{sample_loss_and_grad, sample_loss};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{N_EMIS, N_MET, N_POLLUTANTS};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

/// Width of the concatenated `[X, P, Q]` input row.
pub const INPUT_WIDTH: usize = N_POLLUTANTS + N_MET + N_EMIS;

/// Residual branches that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Branches {
    pub lid: bool,
    pub std: bool,
    pub tad: bool,
    /// When false the emission channels are zeroed before embedding.
    pub emissions: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Branches {
            lid: true,
            std: true,
            tad: true,
            emissions: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub mlp_depth: usize,
    pub dropout_rate: f64,
    pub rmsnorm_eps: f64,
    pub branches: Branches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            mlp_depth: 2,
            dropout_rate: 0.1,
            rmsnorm_eps: 1e-6,
            branches: Branches::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::Config("hidden width must be ≥ 1".into()));
        }
        if self.mlp_depth < 1 {
            return Err(Error::Config("mlp_depth must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.rmsnorm_eps >= 0.0) {
            return Err(Error::Config("rmsnorm_eps must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).unwrap(),
            bias: Tensor::new(vec![fan_out], draw(fan_out)).unwrap(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies the layer to `[rows, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let out = self.fan_out();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += self.bias.data()[i % out];
        }
        Ok(y)
    }
}

/// Gated recurrent cell weights; gate blocks ordered reset, update, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// `[hidden, 3·hidden]`, input to gates.
    pub w_input: Tensor,
    /// `[hidden, 3·hidden]`, previous state to gates.
    pub w_state: Tensor,
    /// `[3·hidden]`.
    pub bias: Tensor,
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embed: Linear,
    pub lid_gain: Tensor,
    pub lid_layers: Vec<Linear>,
    pub std_linear: Linear,
    pub gru: GruParams,
    pub readout: Linear,
    pub std_readout: Linear,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        ModelParams {
            embed: Linear::zeros(INPUT_WIDTH, h),
            lid_gain: Tensor::zeros(&[h]),
            lid_layers: (0..cfg.mlp_depth).map(|_| Linear::zeros(h, h)).collect(),
            std_linear: Linear::zeros(h, h),
            gru: GruParams {
                w_input: Tensor::zeros(&[h, 3 * h]),
                w_state: Tensor::zeros(&[h, 3 * h]),
                bias: Tensor::zeros(&[3 * h]),
            },
            readout: Linear::zeros(h, N_POLLUTANTS),
            std_readout: Linear::zeros(h, N_POLLUTANTS),
        }
    }

    /// Seeded initialization: uniform fan-in scaling for linear maps, unit
    /// RMSNorm gains, zero recurrent biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Linear::init(INPUT_WIDTH, h, &mut rng);
        let lid_layers = (0..cfg.mlp_depth)
            .map(|_| Linear::init(h, h, &mut rng))
            .collect();
        let std_linear = Linear::init(h, h, &mut rng);
        let bound = 1.0 / (h as f64).sqrt();
        let mut gru_w = || {
            let d = (0..h * 3 * h).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(vec![h, 3 * h], d).unwrap()
        };
        let gru = GruParams {
            w_input: gru_w(),
            w_state: gru_w(),
            bias: Tensor::zeros(&[3 * h]),
        };
        Ok(ModelParams {
            embed,
            lid_gain: Tensor::full(&[h], 1.0),
            lid_layers,
            std_linear,
            gru,
            readout: Linear::init(h, N_POLLUTANTS, &mut rng),
            std_readout: Linear::init(h, N_POLLUTANTS, &mut rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.lid_gain.len()
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embed.weight".to_owned(), &self.embed.weight),
            ("embed.bias".to_owned(), &self.embed.bias),
            ("lid.gain".to_owned(), &self.lid_gain),
        ];
        for (i, l) in self.lid_layers.iter().enumerate() {
            out.push((format!("lid.fc{i}.weight"), &l.weight));
            out.push((format!("lid.fc{i}.bias"), &l.bias));
        }
        out.extend([
            ("std.weight".to_owned(), &self.std_linear.weight),
            ("std.bias".to_owned(), &self.std_linear.bias),
            ("gru.w_input".to_owned(), &self.gru.w_input),
            ("gru.w_state".to_owned(), &self.gru.w_state),
            ("gru.bias".to_owned(), &self.gru.bias),
            ("readout.weight".to_owned(), &self.readout.weight),
            ("readout.bias".to_owned(), &self.readout.bias),
            ("std_readout.weight".to_owned(), &self.std_readout.weight),
            ("std_readout.bias".to_owned(), &self.std_readout.bias),
        ]);
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("embed.weight".to_owned(), &mut self.embed.weight),
            ("embed.bias".to_owned(), &mut self.embed.bias),
            ("lid.gain".to_owned(), &mut self.lid_gain),
        ];
        for (i, l) in self.lid_layers.iter_mut().enumerate() {
            out.push((format!("lid.fc{i}.weight"), &mut l.weight));
            out.push((format!("lid.fc{i}.bias"), &mut l.bias));
        }
        out.extend([
            ("std.weight".to_owned(), &mut self.std_linear.weight),
            ("std.bias".to_owned(), &mut self.std_linear.bias),
            ("gru.w_input".to_owned(), &mut self.gru.w_input),
            ("gru.w_state".to_owned(), &mut self.gru.w_state),
            ("gru.bias".to_owned(), &mut self.gru.bias),
            ("readout.weight".to_owned(), &mut self.readout.weight),
            ("readout.bias".to_owned(), &mut self.readout.bias),
            ("std_readout.weight".to_owned(), &mut self.std_readout.weight),
            ("std_readout.bias".to_owned(), &mut self.std_readout.bias),
        ]);
        out
    }

    pub fn to_param_set(&self) -> ParamSet {
        self.named()
            .into_iter()
            .map(|(k, v)| (k, v.clone()))
            .collect()
    }

    /// Rebuilds parameters from a set with exactly the names and shapes
    /// `cfg` implies.
    pub fn from_param_set(set: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let mut out = ModelParams::zeros(cfg);
        out.check_and_copy(set)?;
        Ok(out)
    }

    /// Overwrites every tensor from `set` after a name/shape check.
    pub fn check_and_copy(&mut self, set: &ParamSet) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != set.len() {
            return Err(Error::dim(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                set.len()
            )));
        }
        for (name, slot) in slots.iter_mut() {
            let src = set
                .get(name)
                .ok_or_else(|| Error::dim(format!("missing parameter `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(Error::dim(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn accumulate(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.named_mut() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn numel(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_set_round_trip() {
        let cfg = ModelConfig {
            hidden: 5,
            mlp_depth: 3,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 11).unwrap();
        let set = p.to_param_set();
        assert_eq!(set.len(), 3 + 2 * 3 + 2 + 3 + 4);
        assert_eq!(set.numel(), p.numel());
        assert_eq!(ModelParams::from_param_set(&set, &cfg).unwrap(), p);
        let other = ModelConfig { hidden: 6, ..cfg };
        assert!(ModelParams::from_param_set(&set, &other).is_err());
    }

    #[test]
    fn init_follows_fan_in_bounds() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 1).unwrap();
        let bound = 1.0 / (INPUT_WIDTH as f64).sqrt();
        assert!(p.embed.weight.max_abs() <= bound);
        assert!(p.lid_gain.data().iter().all(|&g| g == 1.0));
        assert!(p.gru.bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(p, ModelParams::init(&cfg, 1).unwrap());
        assert_ne!(p, ModelParams::init(&cfg, 2).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { hidden: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
