//! Sectioned run configuration with dotted `key=value` overrides.
//!
//! ```toml
//! [graph]
//! stations = 10
//! [oracle]
//! [dataset]
//! horizon = 24
//! [model]
//! hidden = 32
//! [train]
//! lr = 1e-3
//! [sweep]
//! cells = ["full", "no-tad"]
//! ```
//!
//! Every section and key is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_bundle, prepare_splits, SeriesBundle, Splits};
use crate::error::{Error, Result};
use crate::evaluator::CELL_NAMES;
use crate::graph::{build_graph, read_stations, SpatialGraph, DEFAULT_THRESHOLD_KM};
use crate::model::ModelConfig;
use crate::oracle::{generate, synthetic_stations, OracleConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Station count for the synthetic layout.
    pub stations: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Side of the square the synthetic stations are spread over.
    pub spread_km: f64,
    pub threshold_km: f64,
    pub seed: u64,
    /// Reads stations from an `id,lat,lon` file instead.
    pub stations_file: Option<PathBuf>,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            stations: 10,
            center_lat: 40.0,
            center_lon: 116.0,
            spread_km: 250.0,
            threshold_km: DEFAULT_THRESHOLD_KM,
            seed: 1,
            stations_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Hours generated when no series file is given.
    pub steps: usize,
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
    pub ratios: [f64; 3],
    pub series_file: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            steps: 2000,
            history: 24,
            horizon: 72,
            stride: 1,
            ratios: [0.6, 0.2, 0.2],
            series_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub cells: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            cells: CELL_NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphSection,
    pub oracle: OracleConfig,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepSection,
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => match t.remove("v") {
            Some(toml::Value::Datetime(_)) | None => toml::Value::String(raw.to_owned()),
            Some(v) => v,
        },
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!(
            "override key `{}` must look like section.key",
            key.trim()
        )));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let slot = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = slot
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{}` is not a section", key.trim())))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("malformed config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        RunConfig::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.dataset;
        if d.history < 2 || d.horizon < 1 || d.stride < 1 {
            return Err(Error::Config("dataset needs history ≥ 2, horizon ≥ 1, stride ≥ 1".into()));
        }
        if self.graph.stations_file.is_none() && self.graph.stations < 1 {
            return Err(Error::Config("graph.stations must be ≥ 1".into()));
        }
        if !(self.graph.threshold_km > 0.0) {
            return Err(Error::Config("graph.threshold_km must be > 0".into()));
        }
        for c in &self.sweep.cells {
            if !CELL_NAMES.contains(&c.as_str()) {
                return Err(Error::Config(format!("unknown sweep cell `{c}`")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// The station graph from a file or the synthetic layout.
    pub fn build_graph(&self) -> Result<SpatialGraph> {
        let g = &self.graph;
        let stations = match &g.stations_file {
            Some(p) => read_stations(p)?,
            None => synthetic_stations(g.stations, (g.center_lat, g.center_lon), g.spread_km, g.seed),
        };
        build_graph(stations, g.threshold_km)
    }

    /// The series from a file or a fresh oracle run.
    pub fn load_series(&self, g: &SpatialGraph) -> Result<SeriesBundle> {
        match &self.dataset.series_file {
            Some(p) => load_bundle(p, g),
            None => generate(&self.oracle, g, self.dataset.steps),
        }
    }

    pub fn splits(&self, b: &SeriesBundle) -> Result<Splits> {
        let d = &self.dataset;
        prepare_splits(b, d.ratios, d.history, d.horizon, d.stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("", &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = RunConfig::from_toml_str(
            "[train]\nlr = 0.01\n",
            &[
                "train.lr=0.002".into(),
                "model.hidden=16".into(),
                "model.branches.tad=false".into(),
                "oracle.deposition=[0.1, 0.2]".into(),
                "oracle.start=2023-05-01T00:00:00Z".into(),
                "sweep.cells=[\"full\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.model.hidden, 16);
        assert!(!cfg.model.branches.tad);
        assert_eq!(cfg.oracle.deposition, [0.1, 0.2]);
        assert_eq!(cfg.oracle.start, "2023-05-01T00:00:00Z");
        assert_eq!(cfg.sweep.cells, vec!["full".to_string()]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["[train]\nlearning_rate = 1\n", "[nonsense]\nx = 1\n"] {
            match RunConfig::from_toml_str(bad, &[]) {
                Err(Error::Config(_)) => {}
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(RunConfig::from_toml_str("", &["model.widthh=3".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["hidden=3".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["model.hidden".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["train.lr=-1".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["sweep.cells=[\"bogus\"]".into()]).is_err());
        assert!(RunConfig::from_toml_str("[train\n", &[]).is_err());
    }

    #[test]
    fn snapshot_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml_str("", &["train.seed=9".into()]).unwrap();
        let p = cfg.write_snapshot(dir.path()).unwrap();
        let back = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(
            RunConfig::load(Some(&dir.path().join("missing.toml")), &[]),
            Err(Error::Io { .. })
        ));
    }
}
