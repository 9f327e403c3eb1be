//! Synthetic ground truth: an explicit-Euler transport–reaction simulator on
//! the station graph.
//!
//! Per station `v` and species `c ∈ {pm, o3}`:
//!
//! ```text
//! dC_vc/dt = Σ_edges upwind advective flux + k Σ_{v'} (C_v'c − C_vc)
//!            − dep_c C_vc + S_vc + [c = o3] r·rad_v·Π_v
//! dΠ_v/dt  = S^Π_v − r·rad_v·Π_v
//! ```
//!
//! `Π` is a hidden precursor reservoir fed by NOx/VOC-like emissions and
//! converted into the ozone-like species under radiation. It is never
//! observed directly. The reaction only moves mass between `Π` and `o3`, and
//! advection and diffusion only move mass along edges, so with deposition
//! and sources switched off the total `Σ C + Σ Π` is conserved.
//!
//! This is a toy parameterization of chemistry and deposition, not a real
//! mechanism.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{SeriesBundle, N_MET, N_EMIS, N_POLLUTANTS};
use crate::error::{Error, Result};
use crate::graph::{bearing_unit, SpatialGraph, Station};
use crate::numerics::Tensor;

/// Simulator and synthetic-forcing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Step length in hours.
    pub dt: f64,
    /// Edge diffusion coefficient `k` (1/h).
    pub diffusion: f64,
    /// Per-species first-order deposition (1/h), `[pm, o3]`.
    pub deposition: [f64; 2],
    /// Precursor → ozone conversion rate at full radiation (1/h).
    pub reaction_rate: f64,
    /// Multiplier on the advective edge transfer.
    pub advection_scale: f64,
    /// Standard deviation of the synthetic regional wind (m/s).
    pub wind_speed: f64,
    /// Mean primary PM source strength (µg/m³/h).
    pub pm_emission: f64,
    /// Mean precursor source strength (µg/m³/h).
    pub precursor_emission: f64,
    /// Relative amplitude of the multi-day emission modulation.
    pub emission_variability: f64,
    /// Initial concentrations `[pm, o3]` (µg/m³).
    pub initial: [f64; 2],
    pub start: String,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            dt: 1.0,
            diffusion: 0.01,
            deposition: [0.06, 0.08],
            reaction_rate: 0.25,
            advection_scale: 1.0,
            wind_speed: 3.0,
            pm_emission: 3.0,
            precursor_emission: 4.0,
            emission_variability: 0.5,
            initial: [45.0, 40.0],
            start: "2024-01-01T00:00:00Z".into(),
            seed: 7,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.diffusion,
            self.deposition[0],
            self.deposition[1],
            self.reaction_rate,
            self.advection_scale,
            self.wind_speed,
            self.pm_emission,
            self.precursor_emission,
            self.emission_variability,
        ];
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("oracle dt must be > 0, got {}", self.dt)));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("oracle rates must be finite and ≥ 0".into()));
        }
        if self.initial.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("initial concentrations must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.start)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Config(format!("oracle start `{}`: {e}", self.start)))
    }

    /// Static part of the stability bound: `dt·(k·max_degree + max deposition) < 1`.
    pub fn check_stability(&self, g: &SpatialGraph) -> Result<()> {
        let dep = self.deposition[0].max(self.deposition[1]);
        let bound = self.dt * (self.diffusion * g.max_degree() + dep);
        if bound >= 1.0 {
            return Err(Error::Config(format!(
                "explicit scheme unstable: dt·(k·max_degree + deposition) = {bound:.4} ≥ 1"
            )));
        }
        Ok(())
    }
}

/// Time-varying drivers, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    /// `[steps, V, 2]` wind (east, north) in m/s.
    pub wind: Tensor,
    /// `[steps, V, 2]` sources: primary PM and precursor (µg/m³/h).
    pub emission: Tensor,
    /// `[steps, V]` radiation as a fraction of clear-sky peak, in `[0, 1]`.
    pub radiation: Tensor,
}

impl Forcing {
    pub fn zeros(steps: usize, stations: usize) -> Self {
        Forcing {
            wind: Tensor::zeros(&[steps, stations, 2]),
            emission: Tensor::zeros(&[steps, stations, 2]),
            radiation: Tensor::zeros(&[steps, stations]),
        }
    }

    pub fn steps(&self) -> usize {
        self.wind.shape()[0]
    }

    fn check(&self, g: &SpatialGraph, steps: usize) -> Result<()> {
        let n = g.len();
        let ok = self.wind.shape() == [steps, n, 2]
            && self.emission.shape() == [steps, n, 2]
            && self.radiation.shape() == [steps, n];
        if !ok {
            return Err(Error::dim(format!(
                "forcing shapes {:?}/{:?}/{:?} do not cover {steps} steps × {n} stations",
                self.wind.shape(),
                self.emission.shape(),
                self.radiation.shape()
            )));
        }
        if self.emission.data().iter().any(|&s| !(s >= 0.0))
            || self.radiation.data().iter().any(|&r| !(r >= 0.0))
        {
            return Err(Error::Config("emissions and radiation must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Concentrations plus the hidden precursor reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    /// `[V, 2]`, µg/m³.
    pub conc: Tensor,
    /// `[V]`.
    pub precursor: Vec<f64>,
}

impl OracleState {
    pub fn total_mass(&self) -> f64 {
        self.conc.sum() + self.precursor.iter().sum::<f64>()
    }
}

/// Advective transfer rates (1/h) for each edge at step `t`: positive means
/// flow from `i` to `j`.
fn edge_advection(cfg: &OracleConfig, g: &SpatialGraph, wind: &[f64], t: usize) -> Vec<(usize, usize, f64)> {
    let n = g.len();
    let at = |v: usize| {
        let o = (t * n + v) * 2;
        [wind[o], wind[o + 1]]
    };
    g.edges()
        .into_iter()
        .map(|(i, j)| {
            let b = bearing_unit(&g.stations()[i], &g.stations()[j]);
            let (wi, wj) = (at(i), at(j));
            let proj = 0.5 * ((wi[0] + wj[0]) * b[0] + (wi[1] + wj[1]) * b[1]);
            // m/s → km/h over the edge length, shared among the busier
            // endpoint's edges so a node's total outflow stays bounded.
            let share = g.degree()[i].max(g.degree()[j]);
            let rate = cfg.advection_scale * proj * 3.6 / (g.distance_km(i, j) * share);
            (i, j, rate)
        })
        .collect()
}

/// Largest per-node outflow coefficient `dt·(advection + k·deg + dep)` at step `t`.
fn outflow_bound(cfg: &OracleConfig, g: &SpatialGraph, forcing: &Forcing, t: usize) -> f64 {
    let n = g.len();
    let mut out = vec![0.0; n];
    for (i, j, rate) in edge_advection(cfg, g, forcing.wind.data(), t) {
        if rate > 0.0 {
            out[i] += rate;
        } else {
            out[j] -= rate;
        }
    }
    let dep = cfg.deposition[0].max(cfg.deposition[1]);
    let rad_max = (0..n)
        .map(|v| forcing.radiation.get(&[t, v]))
        .fold(0.0, f64::max);
    let node = (0..n)
        .map(|v| out[v] + cfg.diffusion * g.degree()[v] + dep)
        .fold(0.0, f64::max);
    cfg.dt * node.max(cfg.reaction_rate * rad_max)
}

fn check_all_steps(cfg: &OracleConfig, g: &SpatialGraph, forcing: &Forcing, steps: usize) -> Result<()> {
    cfg.validate()?;
    cfg.check_stability(g)?;
    forcing.check(g, steps)?;
    for t in 0..steps {
        let b = outflow_bound(cfg, g, forcing, t);
        if b >= 1.0 {
            return Err(Error::Config(format!(
                "explicit scheme unstable at step {t}: outflow coefficient {b:.4} ≥ 1"
            )));
        }
    }
    Ok(())
}

/// One explicit Euler step. Returns the new state and the mass removed by
/// clamping negative values to zero.
pub fn step(
    state: &OracleState,
    cfg: &OracleConfig,
    g: &SpatialGraph,
    forcing: &Forcing,
    t: usize,
) -> Result<(OracleState, f64)> {
    let n = g.len();
    if state.conc.shape() != [n, N_POLLUTANTS] || state.precursor.len() != n {
        return Err(Error::dim(format!(
            "oracle state {:?} on {n} stations",
            state.conc.shape()
        )));
    }
    if t >= forcing.steps() {
        return Err(Error::dim(format!("forcing has no step {t}")));
    }
    if state.conc.data().iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::validation("oracle state must be finite and ≥ 0"));
    }
    let bound = outflow_bound(cfg, g, forcing, t);
    if bound >= 1.0 {
        return Err(Error::Config(format!(
            "explicit scheme unstable at step {t}: outflow coefficient {bound:.4} ≥ 1"
        )));
    }

    let dt = cfg.dt;
    let c = state.conc.data();
    let mut tend = vec![0.0; n * 2];

    for (i, j, rate) in edge_advection(cfg, g, forcing.wind.data(), t) {
        for s in 0..2 {
            // Upwind: the donor cell's concentration is carried downwind.
            let flux = if rate > 0.0 {
                rate * c[i * 2 + s]
            } else {
                rate * c[j * 2 + s]
            };
            let diff = cfg.diffusion * (c[i * 2 + s] - c[j * 2 + s]);
            tend[i * 2 + s] -= flux + diff;
            tend[j * 2 + s] += flux + diff;
        }
    }

    let emis = forcing.emission.slice0_data(t);
    let rad = forcing.radiation.slice0_data(t);
    let mut precursor = state.precursor.clone();
    for v in 0..n {
        for s in 0..2 {
            tend[v * 2 + s] -= cfg.deposition[s] * c[v * 2 + s];
        }
        tend[v * 2] += emis[v * 2];
        let react = cfg.reaction_rate * rad[v] * state.precursor[v];
        tend[v * 2 + 1] += react;
        precursor[v] += dt * (emis[v * 2 + 1] - react);
    }

    let mut clamped = 0.0;
    let mut next = c.to_vec();
    for (x, d) in next.iter_mut().zip(&tend) {
        *x += dt * d;
        if *x < 0.0 {
            clamped -= *x;
            *x = 0.0;
        }
    }
    for p in &mut precursor {
        if *p < 0.0 {
            clamped -= *p;
            *p = 0.0;
        }
    }
    if clamped > 0.0 {
        log::warn!("oracle step {t}: clamped {clamped:.3e} µg/m³ of negative mass");
    }
    Ok((
        OracleState {
            conc: Tensor::new(vec![n, 2], next)?,
            precursor,
        },
        clamped,
    ))
}

/// Rolls the simulator over `steps` frames; frame 0 is `init`.
pub fn simulate(
    init: &OracleState,
    cfg: &OracleConfig,
    g: &SpatialGraph,
    forcing: &Forcing,
    steps: usize,
) -> Result<(Vec<OracleState>, f64)> {
    if steps == 0 {
        return Err(Error::validation("steps must be ≥ 1"));
    }
    check_all_steps(cfg, g, forcing, steps)?;
    let mut frames = Vec::with_capacity(steps);
    frames.push(init.clone());
    let mut clamped = 0.0;
    for t in 1..steps {
        let (next, c) = step(&frames[t - 1], cfg, g, forcing, t - 1)?;
        clamped += c;
        frames.push(next);
    }
    Ok((frames, clamped))
}

/// Smooth stationary AR(1) series with unit variance and the given
/// correlation time in steps.
fn ar1(rng: &mut ChaCha8Rng, steps: usize, tau: f64) -> Vec<f64> {
    let phi = (-1.0 / tau).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut x = normal.sample(rng);
    (0..steps)
        .map(|_| {
            let out = x;
            x = phi * x + innov * normal.sample(rng);
            out
        })
        .collect()
}

fn hour_of_day(start: &DateTime<Utc>, t: usize) -> f64 {
    use chrono::Timelike;
    ((start.hour() as usize + t) % 24) as f64
}

/// Traffic-like profile with morning and evening peaks; mean ≈ 1.
fn diurnal_profile(hour: f64) -> f64 {
    let bump = |c: f64, w: f64| (-((hour - c).powi(2)) / (2.0 * w * w)).exp();
    0.45 + 0.9 * bump(8.0, 1.5) + 1.1 * bump(18.0, 2.0) + 0.25 * bump(13.0, 3.0)
}

/// Seeded drivers and auxiliary meteorology/emission channels.
#[derive(Debug, Clone)]
pub struct SyntheticDrivers {
    pub forcing: Forcing,
    /// `[steps, V, 8]` meteorology in roster order.
    pub met: Tensor,
    /// `[steps, V, 6]` emissions in roster order.
    pub emis: Tensor,
}

/// Builds wind, radiation, emission and the remaining roster channels from
/// the oracle seed.
pub fn synthetic_drivers(cfg: &OracleConfig, g: &SpatialGraph, steps: usize) -> Result<SyntheticDrivers> {
    cfg.validate()?;
    let start = cfg.start_time()?;
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Regional weather: shared slow components plus small local departures.
    let wu = ar1(&mut rng, steps, 18.0);
    let wv = ar1(&mut rng, steps, 18.0);
    let cloud = ar1(&mut rng, steps, 10.0);
    let temp_anom = ar1(&mut rng, steps, 48.0);
    let dew_anom = ar1(&mut rng, steps, 24.0);
    let rain = ar1(&mut rng, steps, 6.0);
    let press = ar1(&mut rng, steps, 72.0);
    let blh_anom = ar1(&mut rng, steps, 8.0);

    let mut wind = Tensor::zeros(&[steps, n, 2]);
    let mut radiation = Tensor::zeros(&[steps, n]);
    let mut emission = Tensor::zeros(&[steps, n, 2]);
    let mut met = Tensor::zeros(&[steps, n, N_MET]);
    let mut emis = Tensor::zeros(&[steps, n, N_EMIS]);

    let cap = 2.5 * cfg.wind_speed;
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    for v in 0..n {
        // Urban/rural contrast in source strength.
        let base_pm: f64 = (0.6 * normal.sample(&mut rng)).exp();
        let base_pre: f64 = (0.5 * normal.sample(&mut rng)).exp();
        let base_nh3: f64 = rng.gen_range(0.5..1.5);
        let base_so2: f64 = rng.gen_range(0.5..1.5);
        let local_u = ar1(&mut rng, steps, 6.0);
        let local_v = ar1(&mut rng, steps, 6.0);
        let mod_pm = ar1(&mut rng, steps, 60.0);
        let mod_pre = ar1(&mut rng, steps, 60.0);
        let noise = ar1(&mut rng, steps, 3.0);
        for t in 0..steps {
            let hour = hour_of_day(&start, t);
            let (mut u, mut w) = (
                cfg.wind_speed * (wu[t] + 0.3 * local_u[t]),
                cfg.wind_speed * (wv[t] + 0.3 * local_v[t]),
            );
            let speed = (u * u + w * w).sqrt();
            if speed > cap {
                u *= cap / speed;
                w *= cap / speed;
            }
            wind.set(&[t, v, 0], u);
            wind.set(&[t, v, 1], w);

            let clear = (std::f64::consts::PI * (hour - 6.0) / 12.0).sin().max(0.0);
            let cloudiness = (0.75 + 0.2 * cloud[t]).clamp(0.2, 1.0);
            let rad = clear * cloudiness;
            radiation.set(&[t, v], rad);

            let prof = diurnal_profile(hour);
            let ev = cfg.emission_variability;
            let f_pm = (ev * mod_pm[t] - 0.5 * ev * ev).exp();
            let f_pre = (ev * mod_pre[t] - 0.5 * ev * ev).exp();
            let s_pm = cfg.pm_emission * base_pm * prof * f_pm;
            let s_pre = cfg.precursor_emission * base_pre * prof * f_pre;
            emission.set(&[t, v, 0], s_pm);
            emission.set(&[t, v, 1], s_pre);

            // Roster: e_pm25, e_pm10, e_nox, e_voc, e_nh3, e_so2 (tons-like units).
            let q = [
                0.1 * s_pm,
                0.1 * s_pm * (1.6 + 0.1 * noise[t]),
                0.06 * s_pre,
                0.04 * s_pre,
                0.02 * base_nh3 * (1.0 + 0.2 * noise[t]),
                0.03 * base_so2 * (0.8 + 0.2 * prof),
            ];
            for (k, val) in q.iter().enumerate() {
                emis.set(&[t, v, k], *val);
            }

            // Roster: t2m, d2m, tp, sp, blh, swr, u100, v100.
            let t2m = 283.0 + 6.0 * (std::f64::consts::PI * (hour - 9.0) / 12.0).sin()
                + 4.0 * temp_anom[t]
                + 0.3 * noise[t];
            let p = [
                t2m,
                t2m - 6.0 - 2.0 * dew_anom[t].abs(),
                ((rain[t] - 1.2) * 1e-3).max(0.0),
                101_325.0 + 600.0 * press[t] - 8.0 * v as f64,
                (250.0 + 1100.0 * rad + 150.0 * blh_anom[t]).max(50.0),
                850.0 * rad,
                u,
                w,
            ];
            for (k, val) in p.iter().enumerate() {
                met.set(&[t, v, k], *val);
            }
        }
    }
    Ok(SyntheticDrivers {
        forcing: Forcing {
            wind,
            emission,
            radiation,
        },
        met,
        emis,
    })
}

/// Deterministic initial state: configured levels with ±20 % station jitter.
pub fn initial_state(cfg: &OracleConfig, g: &SpatialGraph) -> OracleState {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = g.len();
    let mut conc = Tensor::zeros(&[n, 2]);
    for v in 0..n {
        for s in 0..2 {
            conc.set(&[v, s], cfg.initial[s] * rng.gen_range(0.8..1.2));
        }
    }
    OracleState {
        conc,
        precursor: vec![cfg.precursor_emission * 2.0; n],
    }
}

/// Full synthetic dataset: simulated pollutants and their drivers.
pub fn generate(cfg: &OracleConfig, g: &SpatialGraph, steps: usize) -> Result<SeriesBundle> {
    if steps == 0 {
        return Err(Error::validation("steps must be ≥ 1"));
    }
    let drivers = synthetic_drivers(cfg, g, steps)?;
    let init = initial_state(cfg, g);
    let (frames, clamped) = simulate(&init, cfg, g, &drivers.forcing, steps)?;
    if clamped > 0.0 {
        log::warn!("oracle clamped {clamped:.3e} total mass over {steps} steps");
    }
    let x = Tensor::stack(&frames.iter().map(|f| f.conc.clone()).collect::<Vec<_>>())?;
    let start = cfg.start_time()?;
    let timestamps = (0..steps)
        .map(|t| start + Duration::hours(t as i64))
        .collect();
    SeriesBundle::new(
        g.stations().iter().map(|s| s.id.clone()).collect(),
        timestamps,
        x,
        drivers.met,
        drivers.emis,
    )
}

/// Jittered-grid station layout around a center point.
pub fn synthetic_stations(n: usize, center: (f64, f64), spread_km: f64, seed: u64) -> Vec<Station> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols.max(1));
    let km_per_deg_lat = 111.195;
    let km_per_deg_lon = km_per_deg_lat * center.0.to_radians().cos();
    let cell = spread_km / cols.max(rows).max(1) as f64;
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let x = (c as f64 + 0.5 - cols as f64 / 2.0) * cell + rng.gen_range(-0.25..0.25) * cell;
            let y = (r as f64 + 0.5 - rows as f64 / 2.0) * cell + rng.gen_range(-0.25..0.25) * cell;
            Station::new(
                format!("st{i:03}"),
                center.0 + y / km_per_deg_lat,
                center.1 + x / km_per_deg_lon,
            )
        })
        .collect()
}
