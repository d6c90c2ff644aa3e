//! Parameter sweeps over a base configuration.
//!
//! A grid file lists dotted configuration paths and their values:
//!
//! ```toml
//! [grid]
//! "ensemble.n_ens" = [10, 20]
//! "flow.diffusion.alpha" = [0.0, 0.1]
//! ```
//!
//! Every point of the Cartesian product is run as its own experiment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::ExperimentConfig;
use crate::error::{ConfigError, HarnessError};
use crate::experiment::run_experiment;
use crate::output::write_result;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl Grid {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let g: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some((k, _)) = g.grid.iter().find(|(_, v)| v.is_empty()) {
            return Err(ConfigError::Invalid { field: format!("grid.{k}"), message: "no values".into() });
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
        Self::from_toml(&text)
    }

    /// Points of the Cartesian product, last key varying fastest.
    pub fn points(&self) -> Vec<Vec<(String, Value)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

/// Sets `path` (dot separated) in a TOML document, creating tables as needed.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let invalid = |m: &str| ConfigError::Invalid { field: path.into(), message: m.into() };
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| invalid("empty path"))?;
    let mut node = doc;
    for k in keys {
        let table = node.as_table_mut().ok_or_else(|| invalid("not a table"))?;
        node = table.entry(k).or_insert_with(|| Value::Table(Default::default()));
    }
    node.as_table_mut().ok_or_else(|| invalid("not a table"))?.insert(last.into(), value);
    Ok(())
}

/// Applies one grid point to a base configuration and re-validates it.
pub fn apply_point(base: &ExperimentConfig, point: &[(String, Value)]) -> Result<ExperimentConfig, ConfigError> {
    let mut doc: Value = toml::from_str(&base.to_toml()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for (k, v) in point {
        set_path(&mut doc, k, v.clone())?;
    }
    let text = toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
    ExperimentConfig::from_toml(&text)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub dir: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub method: String,
    pub mean_rmse: Option<f64>,
    /// Set when the point could not be run at all.
    pub error: Option<String>,
}

/// Runs every grid point into `out/point_NNN` and writes `out/sweep.json`.
/// A failing point is recorded and does not stop the sweep.
pub fn run_sweep(base: &ExperimentConfig, grid: &Grid, out: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    fs::create_dir_all(out)?;
    let mut records = Vec::new();
    for (index, point) in grid.points().into_iter().enumerate() {
        let dir = format!("point_{index:03}");
        let parameters = point
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null)))
            .collect();
        let mut rec =
            SweepPoint { index, dir: dir.clone(), parameters, method: String::new(), mean_rmse: None, error: None };
        let outcome = apply_point(base, &point).map_err(HarnessError::from).and_then(|cfg| {
            let result = run_experiment(&cfg)?;
            write_result(&out.join(&dir), &result)?;
            Ok(result.summary)
        });
        match outcome {
            Ok(summary) => {
                rec.method = summary.method;
                rec.mean_rmse = summary.mean_rmse;
            }
            Err(err) => rec.error = Some(err.to_string()),
        }
        records.push(rec);
    }
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_order() {
        let g = Grid::from_toml("[grid]\n\"a.b\" = [1, 2]\n\"c\" = [\"x\", \"y\", \"z\"]\n").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1][0].1, Value::Integer(1));
        assert_eq!(pts[1][1].1, Value::String("y".into()));
    }

    #[test]
    fn nested_paths_are_created() {
        let mut doc: Value = toml::from_str("x = 1").unwrap();
        set_path(&mut doc, "a.b.c", Value::Float(0.5)).unwrap();
        assert_eq!(doc["a"]["b"]["c"], Value::Float(0.5));
        assert!(set_path(&mut doc, "x.y", Value::Integer(1)).is_err());
    }

    #[test]
    fn empty_value_list_is_rejected() {
        assert!(Grid::from_toml("[grid]\n\"a\" = []\n").is_err());
    }
}
