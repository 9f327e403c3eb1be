//! Aligned station series, the long-format CSV reader/writer, z-score
//! normalization and sliding-window sampling.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{csv_err, SpatialGraph};
use crate::numerics::Tensor;

pub const POLLUTANTS: [&str; 2] = ["pm25", "o3"];
pub const MET: [&str; 8] = ["t2m", "d2m", "tp", "sp", "blh", "swr", "u100", "v100"];
pub const EMISSIONS: [&str; 6] = ["e_pm25", "e_pm10", "e_nox", "e_voc", "e_nh3", "e_so2"];
pub const N_POLLUTANTS: usize = POLLUTANTS.len();
pub const N_MET: usize = MET.len();
pub const N_EMIS: usize = EMISSIONS.len();

/// Longest run of missing hours that is forward-filled.
pub const MAX_FILL_GAP: usize = 3;

/// Which tensor of a bundle a channel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    X,
    P,
    Q,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::X, Kind::P, Kind::Q];

    pub fn channels(self) -> &'static [&'static str] {
        match self {
            Kind::X => &POLLUTANTS,
            Kind::P => &MET,
            Kind::Q => &EMISSIONS,
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        match s {
            "X" => Some(Kind::X),
            "P" => Some(Kind::P),
            "Q" => Some(Kind::Q),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Kind::X => "X",
            Kind::P => "P",
            Kind::Q => "Q",
        }
    }
}

/// Hourly pollutant, meteorology and emission tensors for one station set.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBundle {
    station_ids: Vec<String>,
    timestamps: Vec<DateTime<Utc>>,
    x: Tensor,
    p: Tensor,
    q: Tensor,
    /// Steps where at least one value was forward-filled.
    filled: Vec<bool>,
    /// Steps inside a gap too long to fill; windows touching them are dropped.
    excluded: Vec<bool>,
}

impl SeriesBundle {
    pub fn new(
        station_ids: Vec<String>,
        timestamps: Vec<DateTime<Utc>>,
        x: Tensor,
        p: Tensor,
        q: Tensor,
    ) -> Result<Self> {
        let steps = timestamps.len();
        let n = station_ids.len();
        for (t, c) in [(&x, N_POLLUTANTS), (&p, N_MET), (&q, N_EMIS)] {
            if t.shape() != [steps, n, c] {
                return Err(Error::dim(format!(
                    "bundle tensor {:?}, expected [{steps}, {n}, {c}]",
                    t.shape()
                )));
            }
        }
        Ok(SeriesBundle {
            station_ids,
            timestamps,
            x,
            p,
            q,
            filled: vec![false; steps],
            excluded: vec![false; steps],
        })
    }

    pub fn steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn p(&self) -> &Tensor {
        &self.p
    }

    pub fn q(&self) -> &Tensor {
        &self.q
    }

    pub fn tensor(&self, kind: Kind) -> &Tensor {
        match kind {
            Kind::X => &self.x,
            Kind::P => &self.p,
            Kind::Q => &self.q,
        }
    }

    pub fn tensor_mut(&mut self, kind: Kind) -> &mut Tensor {
        match kind {
            Kind::X => &mut self.x,
            Kind::P => &mut self.p,
            Kind::Q => &mut self.q,
        }
    }

    pub fn filled(&self) -> &[bool] {
        &self.filled
    }

    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    /// Errors unless the station order matches the graph.
    pub fn check_graph(&self, g: &SpatialGraph) -> Result<()> {
        let ids: Vec<&str> = g.stations().iter().map(|s| s.id.as_str()).collect();
        if ids != self.station_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::validation(
                "bundle station order does not match the graph",
            ));
        }
        Ok(())
    }

    /// Writes the long-format CSV `timestamp,station_id,kind,channel,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["timestamp", "station_id", "kind", "channel", "value"])
            .map_err(|e| csv_err(path, e))?;
        for (t, ts) in self.timestamps.iter().enumerate() {
            let stamp = ts.format("%Y-%m-%dT%H:%M:%SZ").to_string();
            for (v, id) in self.station_ids.iter().enumerate() {
                for kind in Kind::ALL {
                    let tensor = self.tensor(kind);
                    for (c, name) in kind.channels().iter().enumerate() {
                        let value = tensor.get(&[t, v, c]).to_string();
                        w.write_record([stamp.as_str(), id, kind.as_str(), name, &value])
                            .map_err(|e| csv_err(path, e))?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: String,
    station_id: String,
    kind: String,
    channel: String,
    value: f64,
}

fn parse_hour(s: &str) -> Result<DateTime<Utc>> {
    let t = DateTime::parse_from_rfc3339(s)
        .map_err(|e| Error::Parse(format!("timestamp `{s}`: {e}")))?
        .with_timezone(&Utc);
    if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return Err(Error::validation(format!("timestamp `{s}` is not on the hour")));
    }
    Ok(t)
}

/// Loads a long-format series file, aligned to the graph's station order.
///
/// Missing hours (absent timestamps or absent values) are forward-filled
/// when a run is at most [`MAX_FILL_GAP`] long and flagged in
/// [`SeriesBundle::filled`]; longer runs, and leading gaps with nothing to
/// carry forward, are marked in [`SeriesBundle::excluded`].
pub fn load_bundle(path: &Path, g: &SpatialGraph) -> Result<SeriesBundle> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let want = ["timestamp", "station_id", "kind", "channel", "value"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::Parse(format!(
            "{}: expected header `{}`",
            path.display(),
            want.join(",")
        )));
    }
    let channel_index: HashMap<(Kind, &str), usize> = Kind::ALL
        .iter()
        .flat_map(|&k| k.channels().iter().enumerate().map(move |(i, c)| ((k, *c), i)))
        .collect();

    let mut values: BTreeMap<DateTime<Utc>, Vec<(usize, Kind, usize, f64)>> = BTreeMap::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        let t = parse_hour(&row.timestamp)?;
        let v = g.index_of(&row.station_id).ok_or_else(|| {
            Error::validation(format!("unknown station id `{}`", row.station_id))
        })?;
        let kind = Kind::parse(&row.kind)
            .ok_or_else(|| Error::validation(format!("unknown kind `{}`", row.kind)))?;
        let c = *channel_index
            .get(&(kind, row.channel.as_str()))
            .ok_or_else(|| {
                Error::validation(format!("unknown {} channel `{}`", row.kind, row.channel))
            })?;
        values.entry(t).or_default().push((v, kind, c, row.value));
    }
    let (Some(&first), Some(&last)) = (values.keys().next(), values.keys().next_back()) else {
        return Err(Error::validation(format!("{}: no rows", path.display())));
    };
    let steps = ((last - first).num_hours() + 1) as usize;
    let n = g.len();

    let mut tensors: Vec<Vec<Option<f64>>> = Kind::ALL
        .iter()
        .map(|k| vec![None; steps * n * k.channels().len()])
        .collect();
    for (t, rows) in &values {
        let s = (*t - first).num_hours() as usize;
        for &(v, kind, c, val) in rows {
            let nc = kind.channels().len();
            tensors[kind as usize][(s * n + v) * nc + c] = Some(val);
        }
    }

    let mut filled = vec![false; steps];
    let mut excluded = vec![false; steps];
    let mut dense = Vec::new();
    for (k, raw) in Kind::ALL.iter().zip(&tensors) {
        let nc = k.channels().len();
        let mut out = vec![0.0; raw.len()];
        for v in 0..n {
            for c in 0..nc {
                let mut last_seen: Option<f64> = None;
                let mut run = 0;
                for s in 0..steps {
                    let i = (s * n + v) * nc + c;
                    match raw[i] {
                        Some(val) => {
                            out[i] = val;
                            last_seen = Some(val);
                            run = 0;
                        }
                        None => {
                            run += 1;
                            out[i] = last_seen.unwrap_or(0.0);
                            if last_seen.is_some() && run <= MAX_FILL_GAP {
                                filled[s] = true;
                            } else {
                                excluded[s] = true;
                                // Earlier hours of an over-long run are excluded too.
                                for back in 1..run.min(s + 1) {
                                    excluded[s - back] = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        dense.push(Tensor::new(vec![steps, n, nc], out)?);
    }
    let q = dense.pop().unwrap();
    let p = dense.pop().unwrap();
    let x = dense.pop().unwrap();
    let timestamps = (0..steps).map(|s| first + Duration::hours(s as i64)).collect();
    let mut b = SeriesBundle::new(
        g.stations().iter().map(|s| s.id.clone()).collect(),
        timestamps,
        x,
        p,
        q,
    )?;
    b.filled = filled;
    b.excluded = excluded;
    Ok(b)
}

/// Per-channel mean and standard deviation of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Z-score statistics fitted on the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x: ChannelStats,
    pub p: ChannelStats,
    pub q: ChannelStats,
}

impl NormStats {
    pub fn get(&self, kind: Kind) -> &ChannelStats {
        match kind {
            Kind::X => &self.x,
            Kind::P => &self.p,
            Kind::Q => &self.q,
        }
    }

    /// Identity transform (mean 0, std 1) for every channel.
    pub fn identity() -> Self {
        let id = |n: usize| ChannelStats {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        };
        NormStats {
            x: id(N_POLLUTANTS),
            p: id(N_MET),
            q: id(N_EMIS),
        }
    }

    pub fn normalize(&self, b: &SeriesBundle) -> SeriesBundle {
        self.transform(b, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, b: &SeriesBundle) -> SeriesBundle {
        self.transform(b, |z, m, s| z * s + m)
    }

    fn transform(&self, b: &SeriesBundle, f: impl Fn(f64, f64, f64) -> f64) -> SeriesBundle {
        let mut out = b.clone();
        for kind in Kind::ALL {
            let st = self.get(kind);
            let nc = st.mean.len();
            for (i, x) in out.tensor_mut(kind).data_mut().iter_mut().enumerate() {
                let c = i % nc;
                *x = f(*x, st.mean[c], st.std[c]);
            }
        }
        out
    }

    /// Maps normalized pollutant values (`[..., 2]` layout) to raw units.
    pub fn denormalize_x(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            let c = i % N_POLLUTANTS;
            *x = *x * self.x.std[c] + self.x.mean[c];
        }
        out
    }
}

/// Fits z-score statistics using only the steps in `train`.
///
/// Channels with zero variance fall back to `std = 1`.
pub fn fit_normalize(b: &SeriesBundle, train: Range<usize>) -> Result<NormStats> {
    if train.is_empty() || train.end > b.steps() {
        return Err(Error::validation(format!(
            "training range {train:?} is empty or exceeds {} steps",
            b.steps()
        )));
    }
    let fit = |kind: Kind| -> ChannelStats {
        let t = b.tensor(kind);
        let nc = kind.channels().len();
        let n = b.stations();
        let count = (train.len() * n) as f64;
        let mut mean = vec![0.0; nc];
        for s in train.clone() {
            for v in 0..n {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += t.get(&[s, v, c]);
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; nc];
        for s in train.clone() {
            for v in 0..n {
                for (c, acc) in var.iter_mut().enumerate() {
                    *acc += (t.get(&[s, v, c]) - mean[c]).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(c, acc)| {
                let sd = (acc / count).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    log::warn!(
                        "channel {}:{} has zero variance on the training range; using std = 1",
                        kind.as_str(),
                        kind.channels()[c]
                    );
                    1.0
                }
            })
            .collect();
        ChannelStats { mean, std }
    };
    Ok(NormStats {
        x: fit(Kind::X),
        p: fit(Kind::P),
        q: fit(Kind::Q),
    })
}

/// Chronological split into train/val/test step ranges.
pub fn split_ranges(steps: usize, ratios: [f64; 3]) -> Result<[Range<usize>; 3]> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || !(total > 0.0) {
        return Err(Error::Config(format!("bad split ratios {ratios:?}")));
    }
    let a = ((steps as f64) * ratios[0] / total).round() as usize;
    let b = ((steps as f64) * (ratios[0] + ratios[1]) / total).round() as usize;
    Ok([0..a, a..b.min(steps), b.min(steps)..steps])
}

/// One model instance: `T′` observed hours and `T` future hours.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// `[T′, V, 2]`: observations at t = −T′+1 … 0.
    pub x_hist: Tensor,
    /// `[T′+T, V, 8]`: meteorology at t = −T′+1 … T.
    pub p_all: Tensor,
    /// `[T′+T, V, 6]`: emissions at t = −T′+1 … T.
    pub q_all: Tensor,
    /// `[T, V, 2]`: targets at t = 1 … T.
    pub x_future: Tensor,
    /// Bundle step of t = 0.
    pub origin_index: usize,
}

impl WindowedSample {
    pub fn history_len(&self) -> usize {
        self.x_hist.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.x_future.shape()[0]
    }

    pub fn stations(&self) -> usize {
        self.x_hist.shape()[1]
    }

    /// Observation at t = 0.
    pub fn last_observation(&self) -> Tensor {
        self.x_hist.slice0(self.history_len() - 1)
    }

    /// Copy with every emission channel set to zero.
    pub fn without_emissions(&self) -> WindowedSample {
        WindowedSample {
            q_all: Tensor::zeros(self.q_all.shape()),
            ..self.clone()
        }
    }

    /// Copy with the station axis reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> WindowedSample {
        let permute = |t: &Tensor| {
            let (steps, n, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mut out = Tensor::zeros(&[steps, n, c]);
            for s in 0..steps {
                for (i, &j) in perm.iter().enumerate() {
                    for k in 0..c {
                        out.set(&[s, i, k], t.get(&[s, j, k]));
                    }
                }
            }
            out
        };
        WindowedSample {
            x_hist: permute(&self.x_hist),
            p_all: permute(&self.p_all),
            q_all: permute(&self.q_all),
            x_future: permute(&self.x_future),
            origin_index: self.origin_index,
        }
    }
}

/// Cuts windows whose full `T′+T` span lies in `range`, skipping any that
/// touch an excluded step.
pub fn make_windows_in(
    b: &SeriesBundle,
    range: Range<usize>,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    if history < 2 || horizon < 1 || stride < 1 {
        return Err(Error::validation(format!(
            "need T′ ≥ 2, T ≥ 1, stride ≥ 1 (got {history}, {horizon}, {stride})"
        )));
    }
    let span = history + horizon;
    let range = range.start..range.end.min(b.steps());
    if range.len() < span {
        return Ok(Vec::new());
    }
    let count = (range.len() - span) / stride + 1;
    let cut = |t: &Tensor, from: usize, len: usize| -> Tensor {
        let inner: usize = t.shape()[1..].iter().product();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        Tensor::new(shape, t.data()[from * inner..(from + len) * inner].to_vec()).unwrap()
    };
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = range.start + k * stride;
        if b.excluded[start..start + span].iter().any(|&e| e) {
            continue;
        }
        out.push(WindowedSample {
            x_hist: cut(&b.x, start, history),
            p_all: cut(&b.p, start, span),
            q_all: cut(&b.q, start, span),
            x_future: cut(&b.x, start + history, horizon),
            origin_index: start + history - 1,
        });
    }
    Ok(out)
}

/// Windows over the whole bundle.
pub fn make_windows(
    b: &SeriesBundle,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    make_windows_in(b, 0..b.steps(), history, horizon, stride)
}

/// Number of windows [`make_windows`] yields on a gap-free series.
pub fn window_count(steps: usize, history: usize, horizon: usize, stride: usize) -> usize {
    if steps < history + horizon {
        0
    } else {
        (steps - history - horizon) / stride + 1
    }
}

/// Train/val/test windows plus the statistics used to normalize them.
#[derive(Debug, Clone)]
pub struct Splits {
    pub stats: NormStats,
    pub ranges: [Range<usize>; 3],
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

/// Splits chronologically, fits statistics on the training range and cuts
/// normalized windows inside each range.
pub fn prepare_splits(
    b: &SeriesBundle,
    ratios: [f64; 3],
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Splits> {
    let ranges = split_ranges(b.steps(), ratios)?;
    let stats = fit_normalize(b, ranges[0].clone())?;
    let norm = stats.normalize(b);
    let cut = |r: &Range<usize>| make_windows_in(&norm, r.clone(), history, horizon, stride);
    Ok(Splits {
        train: cut(&ranges[0])?,
        val: cut(&ranges[1])?,
        test: cut(&ranges[2])?,
        stats,
        ranges,
    })
}
