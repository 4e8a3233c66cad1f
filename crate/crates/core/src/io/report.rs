//! Plain-text rendering of fit reports and Monte Carlo summaries.

use std::fmt::Write as _;
use std::path::Path;

use super::commands::FitReport;
use crate::error::{Error, Result};
use crate::mc::McSummary;
use crate::presets::Preset;

pub fn render_fit(r: &FitReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model {}: N = {}, n = {}, h = {}, scale = {}", r.model, r.n_individuals, r.n_steps, r.h, r.scale);
    let _ = writeln!(out, "\nstage 1");
    if r.stage1.known_diffusion {
        let _ = writeln!(out, "  diffusion known; time scales profiled directly");
    }
    for (k, name) in r.eta_labels.iter().enumerate() {
        let _ = writeln!(out, "  {name:<10} {:>12.6}  (se {:.6})", r.stage1.eta_hat[k], r.stage1.se_eta[k]);
    }
    for (k, name) in r.theta_labels.iter().enumerate() {
        let _ = writeln!(out, "  {name:<10} {:>12.6}  (se {:.6})", r.stage1.theta_tau_hat[k], r.stage1.se_theta[k]);
    }
    let _ = writeln!(out, "\nstage 2 ({:?}, {} used, {} dropped)", r.stage2.method, r.stage2.n_used(), r.stage2.dropped.len());
    let p = r.mu_labels.len();
    for (k, name) in r.mu_labels.iter().enumerate() {
        let _ = writeln!(out, "  {name:<10} {:>12.6}  (se {:.6})", r.stage2.mu_hat[k], r.stage2.se[k]);
    }
    let vech = crate::cholesky::vech(&r.stage2.sigma_r_hat);
    for (k, name) in r.sigma_labels.iter().enumerate() {
        let _ = writeln!(out, "  {name:<10} {:>12.6}  (se {:.6})", vech[k], r.stage2.se[p + k]);
    }
    if r.stage2.sigma_boundary {
        let _ = writeln!(out, "  covariance estimate on the boundary; its standard errors are unreliable");
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn render_mc(s: &McSummary) -> String {
    let mut out = String::new();
    let d = &s.design;
    let _ = writeln!(
        out,
        "{}: {} replications per cell, fine step {}, seed {}, stage 2 {:?}",
        d.preset.name(),
        d.replications,
        d.fine_step,
        d.seed,
        d.stage2_method
    );
    for c in &s.cells {
        let _ = writeln!(out, "\n{}  (h = {}, {} used)", c.cell.label(), c.cell.h(), c.n_used);
        for (k, name) in s.parameters.iter().enumerate() {
            let mc_se = c.sd[k] / (c.n_used as f64).sqrt();
            let _ = writeln!(out, "  {name:<14} {}   mc se {mc_se:.4}", crate::mc::format_entry(c.mean[k], c.sd[k]));
        }
        if !c.excluded.is_empty() {
            let _ = writeln!(out, "  excluded replications: {:?}", c.excluded);
        }
    }
    if d.preset == Preset::Model3 && d.cells.iter().any(|c| c.horizon == 10.0 && c.n_obs == 2000) {
        let _ = writeln!(out, "\nnote: cells use n = T/h, so T = 10 with h = 0.005 gives n = 2000 (not 5000).");
    }
    out
}

/// Render a `fit_report.json` or an `mc.json`.
pub fn report(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("design").is_some() {
        Ok(render_mc(&serde_json::from_value(value)?))
    } else if value.get("stage1").is_some() {
        Ok(render_fit(&serde_json::from_value(value)?))
    } else {
        Err(Error::data(format!("{} is neither a fit report nor a Monte Carlo summary", path.display())))
    }
}
