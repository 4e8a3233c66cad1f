//! The simulate / fit / mc workflows behind the command-line tool.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{FitConfig, McConfig, Metadata, RunConfig, SimulateConfig};
use super::csv::{band_to_csv, column_to_csv, effects_to_csv, ingest_panel, panel_to_wide_csv};
use super::{atomic_write, write_json};
use crate::error::{Error, Result};
use crate::mc::{run_mc, write_outputs};
use crate::model::{ModelSpec, PanelData, ParamSet};
use crate::sim::{simulate_panel, SimConfig};
use crate::stage1::{fit_stage1, Stage1Estimate, Stage1Options};
use crate::stage2::{fit_stage2, Stage2Estimate, Stage2Options};

pub const PANEL_FILE: &str = "panel.csv";
pub const EFFECTS_FILE: &str = "effects.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const TAU_FILE: &str = "tau_hat.csv";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const BAND_FILE: &str = "predictive_band.csv";
pub const MC_STEM: &str = "mc";

/// Simulate a panel and write it with its true effects and metadata.
pub fn cli_simulate(cfg: &SimulateConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut model = cfg.model.model();
    if let Some(y0) = cfg.initial_state {
        model = model.with_initial_state(y0);
    }
    let truth = cfg.truth.clone().unwrap_or_else(|| cfg.model.truth());
    let sim = SimConfig::new(cfg.n_individuals, cfg.horizon, cfg.n_obs, cfg.fine_step, cfg.seed);
    let (panel, effects) = simulate_panel(&model, &truth, &sim, true)?;
    let labels: Vec<String> = model.mu_labels()[model.p_fixed()..].to_vec();
    let mut resolved = cfg.clone();
    resolved.initial_state = Some(model.initial_state());
    resolved.truth = Some(truth);
    let mut meta = Metadata::new("simulate", RunConfig { simulate: Some(resolved), ..Default::default() });
    meta.observation_step = Some(panel.h());
    let paths = [out_dir.join(PANEL_FILE), out_dir.join(EFFECTS_FILE), out_dir.join(METADATA_FILE)];
    atomic_write(&paths[0], panel_to_wide_csv(&panel)?.as_bytes())?;
    atomic_write(&paths[1], effects_to_csv(&effects, &labels)?.as_bytes())?;
    write_json(&paths[2], &meta)?;
    Ok(paths.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub n_individuals: usize,
    pub n_steps: usize,
    pub h: f64,
    pub scale: f64,
    pub eta_labels: Vec<String>,
    pub theta_labels: Vec<String>,
    pub mu_labels: Vec<String>,
    pub sigma_labels: Vec<String>,
    pub stage1: Stage1Estimate,
    pub stage2: Stage2Estimate,
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Fitted parameters as a [`ParamSet`].
    pub fn params(&self) -> Result<ParamSet> {
        ParamSet::new(
            self.stage1.eta_hat.clone(),
            self.stage1.theta_tau_hat.clone(),
            self.stage2.mu_hat.clone(),
            self.stage2.sigma_r_hat.clone(),
        )
    }
}

/// Observation step from the metadata written next to a simulated panel.
fn step_from_metadata(panel: &Path) -> Option<f64> {
    let meta = panel.parent()?.join(METADATA_FILE);
    let text = std::fs::read_to_string(meta).ok()?;
    serde_json::from_str::<Metadata>(&text).ok()?.observation_step
}

/// Check S(t, y; η) > 0 on a grid spanning the observed values and times.
pub fn check_positivity(model: &ModelSpec, panel: &PanelData, eta: &[f64]) -> Result<()> {
    let (lo, hi) = panel.min_max();
    let times = [panel.t0(), panel.t0() + 0.5 * panel.horizon(), panel.t0() + panel.horizon()];
    for k in 0..=200 {
        let y = lo + (hi - lo) * k as f64 / 200.0;
        for &t in &times {
            model.eval_s(t, y, eta).map_err(|e| {
                Error::InvalidModel(format!(
                    "diffusion is not positive over the data range [{lo}, {hi}] at eta={eta:?}: {e}"
                ))
            })?;
        }
    }
    Ok(())
}

/// Fit both stages to an ingested panel; returns the report and the files
/// written.
pub fn cli_fit(cfg: &FitConfig, out_dir: &Path) -> Result<(FitReport, Vec<PathBuf>)> {
    let step = cfg.step.or_else(|| step_from_metadata(&cfg.panel));
    let panel = ingest_panel(&cfg.panel, cfg.scale, step)?;
    let model = cfg.model.model();
    check_positivity(&model, &panel, model.eta_start())?;
    let s1 = fit_stage1(&panel, &model, &Stage1Options { optim: cfg.optim.clone(), parallel: true })?;
    let mut warnings = s1.warnings.clone();
    if let Err(e) = check_positivity(&model, &panel, &s1.eta_hat) {
        warnings.push(e.to_string());
    }
    let s2 = fit_stage2(&panel, &model, &s1, &Stage2Options { optim: cfg.optim.clone(), method: cfg.method, parallel: true })?;
    warnings.extend(s2.warnings.iter().cloned());
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = FitReport {
        model: cfg.model.name().into(),
        n_individuals: panel.n_individuals(),
        n_steps: panel.n_steps(),
        h: panel.h(),
        scale: cfg.scale,
        eta_labels: model.eta_labels().to_vec(),
        theta_labels: model.tau_family().param_names().iter().map(|s| s.to_string()).collect(),
        mu_labels: model.mu_labels().to_vec(),
        sigma_labels: model.sigma_labels(),
        stage1: s1,
        stage2: s2,
        warnings,
    };
    let mut paths = vec![out_dir.join(FIT_REPORT_FILE), out_dir.join(TAU_FILE)];
    write_json(&paths[0], &report)?;
    atomic_write(&paths[1], column_to_csv("tau_hat", &report.stage1.tau_hat)?.as_bytes())?;
    let mut resolved = cfg.clone();
    resolved.step = Some(panel.h());
    let mut meta = Metadata::new("fit", RunConfig { fit: Some(resolved), ..Default::default() });
    meta.observation_step = Some(panel.h());
    if cfg.predictive > 0 {
        let y0 = panel.rows().map(|r| r[0]).sum::<f64>() / panel.n_individuals() as f64;
        meta.notes.push(format!("predictive trajectories start at the mean observed Y(0) = {y0}"));
        let predictive = simulate_predictive(&model.with_initial_state(y0), &report.params()?, &panel, cfg)?;
        paths.push(out_dir.join(PREDICTIVE_FILE));
        paths.push(out_dir.join(BAND_FILE));
        atomic_write(&paths[2], panel_to_wide_csv(&predictive)?.as_bytes())?;
        atomic_write(&paths[3], band_to_csv(&predictive, 0.025, 0.975)?.as_bytes())?;
    }
    paths.push(out_dir.join(METADATA_FILE));
    write_json(paths.last().expect("non-empty"), &meta)?;
    Ok((report, paths))
}

fn simulate_predictive(model: &ModelSpec, params: &ParamSet, panel: &PanelData, cfg: &FitConfig) -> Result<PanelData> {
    let substeps = cfg.predictive_substeps.max(1);
    let sim = SimConfig::new(cfg.predictive, panel.horizon(), panel.n_steps(), panel.h() / substeps as f64, cfg.seed);
    let (p, _) = simulate_panel(model, params, &sim, true)?;
    Ok(p)
}

/// Files produced by [`cli_mc`] in `out_dir`.
pub fn mc_output_paths(out_dir: &Path) -> Vec<PathBuf> {
    vec![
        out_dir.join(format!("{MC_STEM}_table.csv")),
        out_dir.join(format!("{MC_STEM}.json")),
        out_dir.join(format!("{MC_STEM}_boxplot.csv")),
        out_dir.join(format!("{MC_STEM}_metadata.json")),
    ]
}

/// Run a Monte Carlo design. Existing outputs are kept unless `force`.
pub fn cli_mc(cfg: &McConfig, out_dir: &Path, workers: usize, force: bool) -> Result<Vec<PathBuf>> {
    let paths = mc_output_paths(out_dir);
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!("{} already exists; pass --force to overwrite", p.display())));
        }
    }
    let design = cfg.design();
    log::info!("running {} replications of {} cells on {workers} worker(s)", design.replications, design.cells.len());
    let summary = run_mc(&design, workers)?;
    let mut written = write_outputs(&summary, out_dir, MC_STEM)?;
    let mut resolved = cfg.clone();
    resolved.cells = Some(design.cells.clone());
    resolved.replications = Some(design.replications);
    resolved.fine_step = Some(design.fine_step);
    resolved.optim = Some(design.optim.clone());
    let meta = Metadata::new("mc", RunConfig { mc: Some(resolved), ..Default::default() });
    write_json(&paths[3], &meta)?;
    written.push(paths[3].clone());
    Ok(written)
}
