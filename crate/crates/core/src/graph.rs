//! Station graph: distance-threshold adjacency and the normalized Laplacian
//! `L̃ = I − D^{-1/2} A D^{-1/2}`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_THRESHOLD_KM: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Self {
        Station {
            id: id.into(),
            lat,
            lon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::validation(format!(
                "station `{}` has coordinates out of range ({}, {})",
                self.id, self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: &Station, b: &Station) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

/// Unit vector (east, north) pointing from `a` toward `b` in the local
/// tangent plane at the midpoint.
pub fn bearing_unit(a: &Station, b: &Station) -> [f64; 2] {
    let mid_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let east = (b.lon - a.lon) * mid_lat.cos();
    let north = b.lat - a.lat;
    let n = (east * east + north * north).sqrt();
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [east / n, north / n]
    }
}

/// Immutable station graph with dense adjacency and Laplacian operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    stations: Vec<Station>,
    threshold_km: f64,
    adjacency: Tensor,
    degree: Vec<f64>,
    laplacian: Tensor,
    distances: Tensor,
}

/// Builds the graph; edge `(u, v)` iff `0 < d(u, v) ≤ threshold_km`.
pub fn build_graph(stations: Vec<Station>, threshold_km: f64) -> Result<SpatialGraph> {
    if stations.is_empty() {
        return Err(Error::validation("graph needs at least one station"));
    }
    if !(threshold_km > 0.0) {
        return Err(Error::validation(format!(
            "threshold must be positive, got {threshold_km}"
        )));
    }
    let mut seen = HashSet::new();
    for s in &stations {
        s.validate()?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::validation(format!("duplicate station id `{}`", s.id)));
        }
    }
    let n = stations.len();
    let mut distances = Tensor::zeros(&[n, n]);
    let mut adjacency = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = haversine_km(&stations[i], &stations[j])?;
            distances.set(&[i, j], d);
            distances.set(&[j, i], d);
            if d > 0.0 && d <= threshold_km {
                adjacency.set(&[i, j], 1.0);
                adjacency.set(&[j, i], 1.0);
            }
        }
    }
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut laplacian = Tensor::identity(n);
    for i in 0..n {
        for j in 0..n {
            let a = adjacency.get(&[i, j]);
            if a != 0.0 {
                let v = laplacian.get(&[i, j]) - inv_sqrt[i] * a * inv_sqrt[j];
                laplacian.set(&[i, j], v);
            }
        }
    }
    Ok(SpatialGraph {
        stations,
        threshold_km,
        adjacency,
        degree,
        laplacian,
        distances,
    })
}

impl SpatialGraph {
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn threshold_km(&self) -> f64 {
        self.threshold_km
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn max_degree(&self) -> f64 {
        self.degree.iter().copied().fold(0.0, f64::max)
    }

    /// Normalized Laplacian; isolated nodes keep an identity row.
    pub fn laplacian(&self) -> &Tensor {
        &self.laplacian
    }

    pub fn distance_km(&self, i: usize, j: usize) -> f64 {
        self.distances.get(&[i, j])
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(v)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, _)| j)
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency.get(&[i, j]) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// `L̃ h` for `h` of shape `[|V|, d]`.
    pub fn apply_laplacian(&self, h: &Tensor) -> Result<Tensor> {
        if h.shape().len() != 2 || h.rows() != self.len() {
            return Err(Error::dim(format!(
                "laplacian on {} stations applied to {:?}",
                self.len(),
                h.shape()
            )));
        }
        self.laplacian.matmul(h)
    }

    /// Reorders stations by `perm` (new index `i` holds old station `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<SpatialGraph> {
        let stations = perm.iter().map(|&i| self.stations[i].clone()).collect();
        build_graph(stations, self.threshold_km)
    }

    /// Number of nodes with each degree, index = degree.
    pub fn degree_histogram(&self) -> Vec<usize> {
        let max = self.max_degree() as usize;
        let mut hist = vec![0; max + 1];
        for &d in &self.degree {
            hist[d as usize] += 1;
        }
        hist
    }
}

/// Reads a station CSV with header `id,lat,lon`.
pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "lat", "lon"] {
        return Err(Error::Parse(format!(
            "{}: expected header `id,lat,lon`, got `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<Station>() {
        let s = rec.map_err(|e| csv_err(path, e))?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for s in stations {
        w.serialize(s).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}
