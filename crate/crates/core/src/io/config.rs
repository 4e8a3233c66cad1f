//! Run configuration: one TOML file with a table per subcommand. Command
//! line flags override file values; the resolved configuration is written
//! into every output's metadata so any run can be repeated from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{Cell, McDesign};
use crate::model::ParamSet;
use crate::optim::OptimOptions;
use crate::presets::Preset;
use crate::stage2::Stage2Method;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: Preset,
    pub n_individuals: usize,
    pub horizon: f64,
    pub n_obs: usize,
    #[serde(default = "default_fine_step")]
    pub fine_step: f64,
    #[serde(default)]
    pub seed: u64,
    /// Y(0); the model's default (0) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<f64>,
    /// Parameters to simulate from; the preset's values when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ParamSet>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: Preset::Model1,
            n_individuals: 200,
            horizon: 5.0,
            n_obs: 1000,
            fine_step: default_fine_step(),
            seed: 0,
            initial_state: None,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: Preset,
    pub panel: PathBuf,
    /// Observation step for wide panels; read from the panel's metadata
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub method: Stage2Method,
    #[serde(default)]
    pub optim: OptimOptions,
    /// Number of trajectories simulated from the fitted model (0 = none).
    #[serde(default)]
    pub predictive: usize,
    /// Euler sub-steps per observation step for predictive trajectories.
    #[serde(default = "ten")]
    pub predictive_substeps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl FitConfig {
    pub fn new(model: Preset, panel: impl Into<PathBuf>) -> Self {
        FitConfig {
            model,
            panel: panel.into(),
            step: None,
            scale: 1.0,
            method: Stage2Method::Full,
            optim: OptimOptions::default(),
            predictive: 0,
            predictive_substeps: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum McScale {
    /// h = 0.005 cells, R = 100.
    #[default]
    Desk,
    /// Both observation steps, R = 500.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub model: Preset,
    #[serde(default)]
    pub scale: McScale,
    /// Explicit cells replace the scale's grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Stage2Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimOptions>,
}

impl McConfig {
    pub fn new(model: Preset) -> Self {
        McConfig { model, scale: McScale::Desk, cells: None, replications: None, fine_step: None, seed: 0, method: Stage2Method::Full, optim: None }
    }

    pub fn design(&self) -> McDesign {
        let mut d = match self.scale {
            McScale::Desk => McDesign::desk(self.model, self.seed),
            McScale::Full => McDesign::full(self.model, self.seed),
        };
        if let Some(cells) = &self.cells {
            d.cells = cells.clone();
        }
        if let Some(r) = self.replications {
            d.replications = r;
        }
        if let Some(f) = self.fine_step {
            d.fine_step = f;
        }
        if let Some(o) = &self.optim {
            d.optim = o.clone();
        }
        d.stage2_method = self.method;
        d
    }
}

fn default_fine_step() -> f64 {
    1e-4
}
fn one() -> f64 {
    1.0
}
fn ten() -> usize {
    10
}

/// Metadata written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_step: Option<f64>,
}

impl Metadata {
    pub fn new(command: &str, config: RunConfig) -> Self {
        Metadata {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            notes: Vec::new(),
            observation_step: None,
        }
    }
}

/// Load a TOML run configuration, or the `config` of a metadata JSON file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let meta: Metadata = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return Ok(meta.config);
    }
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_tables() {
        let text = r#"
            workers = 2
            [simulate]
            model = "model3"
            n_individuals = 4
            horizon = 1.0
            n_obs = 10
            seed = 9
            [fit]
            model = "model1"
            panel = "out/panel.csv"
            [mc]
            model = "model1"
            replications = 3
            cells = [{ n_individuals = 10, horizon = 1.0, n_obs = 20 }]
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let sim = cfg.simulate.unwrap();
        assert_eq!(sim.model, Preset::Model3);
        assert_eq!(sim.fine_step, 1e-4);
        let fit = cfg.fit.unwrap();
        assert_eq!((fit.scale, fit.predictive_substeps), (1.0, 10));
        let d = cfg.mc.unwrap().design();
        assert_eq!((d.replications, d.cells.len()), (3, 1));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[simulate]\nmodel='model1'\nn_individuals=1\nhorizon=1.0\nn_obs=1\nbogus=1").is_err());
    }

    #[test]
    fn metadata_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { simulate: Some(SimulateConfig::default()), ..Default::default() };
        let path = dir.path().join("metadata.json");
        crate::io::write_json(&path, &Metadata::new("simulate", cfg.clone())).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }
}
