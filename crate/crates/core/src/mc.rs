//! Monte Carlo harness: simulate, fit both stages and the oracle θ_τ fit
//! over R replications of a grid of (N, T, n) cells, then summarize.
//!
//! Replication r draws from the stream key (seed, r) in every cell, and
//! individual i always reads stream i. Cells that share T therefore share
//! their fine-grid paths: one simulation at the largest N and the finest
//! observation grid is made per replication and per T, and each cell takes
//! its leading individuals and a subsample of the grid. The result is
//! identical to simulating every cell on its own.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cholesky::vech;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::model::{ModelSpec, PanelData, ParamSet};
use crate::optim::OptimOptions;
use crate::presets::Preset;
use crate::reduce::det_sum;
use crate::sim::{simulate_panel, SimConfig};
use crate::stage1::{fit_stage1, fit_theta_tau, Stage1Options};
use crate::stage2::{fit_stage2, Stage2Method, Stage2Options};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n_individuals: usize,
    pub horizon: f64,
    pub n_obs: usize,
}

impl Cell {
    pub fn new(n_individuals: usize, horizon: f64, n_obs: usize) -> Self {
        Cell { n_individuals, horizon, n_obs }
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n_obs as f64
    }

    pub fn label(&self) -> String {
        format!("N={} T={} n={}", self.n_individuals, self.horizon, self.n_obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub preset: Preset,
    /// Parameters to simulate from; the preset's reference values if absent.
    #[serde(default)]
    pub truth: Option<ParamSet>,
    pub cells: Vec<Cell>,
    pub replications: usize,
    pub fine_step: f64,
    pub seed: u64,
    #[serde(default)]
    pub stage2_method: Stage2Method,
    #[serde(default)]
    pub optim: OptimOptions,
}

/// The observation steps of the simulation study.
pub const DESK_STEP: f64 = 0.005;
pub const FINE_OBS_STEP: f64 = 0.001;

impl McDesign {
    /// Grid N ∈ {200, 500}, T ∈ {5, 10} at h = 0.005, R = 100.
    pub fn desk(preset: Preset, seed: u64) -> Self {
        Self::grid(preset, seed, &[DESK_STEP], 100)
    }

    /// The full study: both observation steps h ∈ {0.005, 0.001}, R = 500.
    /// Hours of single-core compute.
    pub fn full(preset: Preset, seed: u64) -> Self {
        Self::grid(preset, seed, &[DESK_STEP, FINE_OBS_STEP], 500)
    }

    fn grid(preset: Preset, seed: u64, steps: &[f64], replications: usize) -> Self {
        let mut cells = Vec::new();
        for &n_ind in &[200, 500] {
            for &t in &[5.0, 10.0] {
                for &h in steps {
                    cells.push(Cell::new(n_ind, t, (t / h).round() as usize));
                }
            }
        }
        McDesign {
            preset,
            truth: None,
            cells,
            replications,
            fine_step: 1e-4,
            seed,
            stage2_method: Stage2Method::Full,
            optim: OptimOptions { starts: 1, ..OptimOptions::default() },
        }
    }

    pub fn truth(&self) -> ParamSet {
        self.truth.clone().unwrap_or_else(|| self.preset.truth())
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config(format!("need at least 2 replications, got {}", self.replications)));
        }
        if self.cells.is_empty() {
            return Err(Error::Config("design has no cells".into()));
        }
        for cell in &self.cells {
            if cell.h() < self.fine_step {
                return Err(Error::Config(format!("{}: observation step {} is below the fine step {}", cell.label(), cell.h(), self.fine_step)));
            }
            SimConfig::new(cell.n_individuals, cell.horizon, cell.n_obs, self.fine_step, self.seed).substeps()?;
        }
        model.validate_params(&self.truth())
    }
}

/// Estimates from one replication of one cell, in [`parameter_names`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub replication: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub n_used: usize,
    /// Replications excluded because they failed or did not converge.
    pub excluded: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub design: McDesign,
    pub parameters: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl McSummary {
    pub fn column(&self, cell: usize, parameter: &str) -> Option<Vec<f64>> {
        let k = self.parameters.iter().position(|p| p == parameter)?;
        Some(
            self.records
                .iter()
                .filter(|r| r.cell == cell && r.converged)
                .map(|r| r.values[k])
                .collect(),
        )
    }

    pub fn stat(&self, cell: usize, parameter: &str) -> Option<(f64, f64)> {
        let k = self.parameters.iter().position(|p| p == parameter)?;
        let c = self.cells.get(cell)?;
        Some((c.mean[k], c.sd[k]))
    }
}

/// Column names: η, θ_τ fitted to τ̂ (`.Y`) and to the true τ (`.tau`),
/// μ, then vech Σ_r.
pub fn parameter_names(model: &ModelSpec) -> Vec<String> {
    let mut names: Vec<String> = model.eta_labels().to_vec();
    let theta = model.tau_family().param_names();
    names.extend(theta.iter().map(|n| format!("{n}.Y")));
    names.extend(theta.iter().map(|n| format!("{n}.tau")));
    names.extend(model.mu_labels().iter().cloned());
    names.extend(model.sigma_labels());
    names
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Run the design with the preset model.
pub fn run_mc(design: &McDesign, workers: usize) -> Result<McSummary> {
    run_mc_with_model(&design.preset.model(), design, workers)
}

/// Run the design with an arbitrary model (the preset field then only
/// labels the output).
pub fn run_mc_with_model(model: &ModelSpec, design: &McDesign, workers: usize) -> Result<McSummary> {
    design.validate(model)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let truth = design.truth();
    let per_rep: Vec<Vec<ReplicationRecord>> = pool.install(|| {
        (0..design.replications)
            .into_par_iter()
            .map(|r| run_replication(model, &truth, design, r))
            .collect()
    });
    let mut records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.cell, r.replication));
    let parameters = parameter_names(model);
    let cells = summarize(&design.cells, parameters.len(), &records);
    for (c, s) in cells.iter().enumerate() {
        if !s.excluded.is_empty() {
            log::warn!("cell {c} ({}): excluded replications {:?}", s.cell.label(), s.excluded);
        }
    }
    Ok(McSummary { design: design.clone(), parameters, cells, records })
}

fn failed(cell: usize, replication: usize, err: &Error) -> ReplicationRecord {
    ReplicationRecord { cell, replication, converged: false, error: Some(err.to_string()), values: Vec::new() }
}

fn run_replication(model: &ModelSpec, truth: &ParamSet, design: &McDesign, r: usize) -> Vec<ReplicationRecord> {
    // group cells by horizon so they can share one simulation
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (c, cell) in design.cells.iter().enumerate() {
        groups.entry(cell.horizon.to_bits()).or_default().push(c);
    }
    let mut out = Vec::with_capacity(design.cells.len());
    for members in groups.values() {
        let cells: Vec<Cell> = members.iter().map(|&c| design.cells[c]).collect();
        let n_max = cells.iter().map(|c| c.n_individuals).max().unwrap_or(0);
        let lcm = cells.iter().fold(1, |acc, c| acc / gcd(acc, c.n_obs) * c.n_obs);
        let mut shared = SimConfig::new(n_max, cells[0].horizon, lcm, design.fine_step, design.seed);
        shared.replication = r as u64;
        if shared.substeps().is_ok() {
            match simulate_panel(model, truth, &shared, false) {
                Ok((panel, effects)) => {
                    for (&c, cell) in members.iter().zip(&cells) {
                        let taus: Vec<f64> = effects[..cell.n_individuals].iter().map(|e| e.tau).collect();
                        out.push(match cell_panel(&panel, cell, lcm) {
                            Ok(p) => estimate(model, design, &p, &taus, c, r),
                            Err(e) => failed(c, r, &e),
                        });
                    }
                }
                Err(e) => out.extend(members.iter().map(|&c| failed(c, r, &e))),
            }
        } else {
            for (&c, cell) in members.iter().zip(&cells) {
                let mut cfg = SimConfig::new(cell.n_individuals, cell.horizon, cell.n_obs, design.fine_step, design.seed);
                cfg.replication = r as u64;
                out.push(match simulate_panel(model, truth, &cfg, false) {
                    Ok((p, effects)) => {
                        let taus: Vec<f64> = effects.iter().map(|e| e.tau).collect();
                        estimate(model, design, &p, &taus, c, r)
                    }
                    Err(e) => failed(c, r, &e),
                });
            }
        }
    }
    out
}

/// Leading individuals on the cell's grid, with h = T/n computed exactly as a
/// direct simulation would.
fn cell_panel(shared: &PanelData, cell: &Cell, n_shared: usize) -> Result<PanelData> {
    let idx: Vec<usize> = (0..cell.n_individuals).collect();
    let sub = shared.select(&idx)?.subsample(n_shared / cell.n_obs)?;
    let values: Vec<f64> = sub.rows().flat_map(|row| row.iter().copied()).collect();
    PanelData::from_flat(values, cell.n_individuals, cell.n_obs, cell.h(), 0.0)
}

fn estimate(model: &ModelSpec, design: &McDesign, panel: &PanelData, true_taus: &[f64], cell: usize, r: usize) -> ReplicationRecord {
    let run = || -> Result<(Vec<f64>, bool)> {
        let s1_opts = Stage1Options { optim: design.optim.clone(), parallel: false };
        let s1 = fit_stage1(panel, model, &s1_opts)?;
        let oracle = fit_theta_tau(true_taus, model.tau_family(), &model.bounds().theta_tau, &design.optim)?;
        let s2_opts = Stage2Options { optim: design.optim.clone(), method: design.stage2_method, parallel: false };
        let s2 = fit_stage2(panel, model, &s1, &s2_opts)?;
        let converged = s1.eta_optim.as_ref().is_none_or(|o| o.converged)
            && s1.theta_optim.converged
            && oracle.converged
            && s2.optim.as_ref().is_none_or(|o| o.converged);
        let mut values = s1.eta_hat.clone();
        values.extend(&s1.theta_tau_hat);
        values.extend(&oracle.argmax);
        values.extend(&s2.mu_hat);
        values.extend(vech(&s2.sigma_r_hat));
        Ok((values, converged))
    };
    match run() {
        Ok((values, converged)) => ReplicationRecord { cell, replication: r, converged, error: None, values },
        Err(e) => failed(cell, r, &e),
    }
}

/// Mean and sample standard deviation (denominator R − 1) by two passes.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = det_sum(values) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    (mean, (det_sum(&sq) / (n - 1) as f64).sqrt())
}

/// Per-cell mean and sd of every parameter over converged replications.
pub fn summarize(cells: &[Cell], n_params: usize, records: &[ReplicationRecord]) -> Vec<CellSummary> {
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let used: Vec<&ReplicationRecord> = records.iter().filter(|r| r.cell == c && r.converged).collect();
            let mut excluded: Vec<usize> = records.iter().filter(|r| r.cell == c && !r.converged).map(|r| r.replication).collect();
            excluded.sort_unstable();
            let (mean, sd) = (0..n_params)
                .map(|k| mean_sd(&used.iter().map(|r| r.values[k]).collect::<Vec<_>>()))
                .unzip();
            CellSummary { cell: *cell, n_used: used.len(), excluded, mean, sd }
        })
        .collect()
}

/// "mean (sd)" with three decimals, as in the printed tables.
pub fn format_entry(mean: f64, sd: f64) -> String {
    format!("{mean:.3} ({sd:.3})")
}

/// One row per cell, one "mean (sd)" column per parameter.
pub fn table_csv(summary: &McSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["N".to_string(), "T".into(), "n".into(), "h".into(), "R_used".into()];
    header.extend(summary.parameters.iter().cloned());
    w.write_record(&header)?;
    for s in &summary.cells {
        let mut row = vec![
            s.cell.n_individuals.to_string(),
            s.cell.horizon.to_string(),
            s.cell.n_obs.to_string(),
            s.cell.h().to_string(),
            s.n_used.to_string(),
        ];
        row.extend(s.mean.iter().zip(&s.sd).map(|(&m, &sd)| format_entry(m, sd)));
        w.write_record(&row)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub cell: String,
    pub parameter: String,
    pub replication: usize,
    /// Empty for excluded replications.
    pub value: Option<f64>,
}

/// Long-format rows (cell, parameter, replication, value).
pub fn boxplot_rows(summary: &McSummary) -> Vec<BoxplotRow> {
    let mut rows = Vec::new();
    for rec in &summary.records {
        let label = summary.design.cells[rec.cell].label();
        for (k, name) in summary.parameters.iter().enumerate() {
            rows.push(BoxplotRow {
                cell: label.clone(),
                parameter: name.clone(),
                replication: rec.replication,
                value: if rec.converged { rec.values.get(k).copied() } else { None },
            });
        }
    }
    rows
}

pub fn boxplot_csv(rows: &[BoxplotRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell", "parameter", "replication", "value"])?;
    for row in rows {
        let value = row.value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([row.cell.as_str(), row.parameter.as_str(), &row.replication.to_string(), &value])?;
    }
    finish_csv(w)
}

pub fn parse_boxplot_csv(text: &str) -> Result<Vec<BoxplotRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes the boxplot data to `path` atomically.
pub fn export_boxplot_data(summary: &McSummary, path: &Path) -> Result<()> {
    atomic_write(path, boxplot_csv(&boxplot_rows(summary))?.as_bytes())
}

/// Writes `<stem>_table.csv`, `<stem>.json` and `<stem>_boxplot.csv` into
/// `dir` and returns their paths.
pub fn write_outputs(summary: &McSummary, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
    let table = dir.join(format!("{stem}_table.csv"));
    let json = dir.join(format!("{stem}.json"));
    let boxplot = dir.join(format!("{stem}_boxplot.csv"));
    atomic_write(&table, table_csv(summary)?.as_bytes())?;
    crate::io::write_json(&json, summary)?;
    export_boxplot_data(summary, &boxplot)?;
    Ok(vec![table, json, boxplot])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_cases() {
        assert_eq!(mean_sd(&[3.0; 10]), (3.0, 0.0));
        let (m, s) = mean_sd(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn two_pass_matches_streaming_moments() {
        let xs: Vec<f64> = (0..997).map(|k| ((k as f64) * 0.731).sin() * 3.0 + 10.0).collect();
        // Welford
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in &xs {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let (a, s) = mean_sd(&xs);
        assert!((a - mean).abs() < 1e-12);
        assert!((s - (m2 / (n - 1.0)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn summarize_excludes_failures() {
        let cells = [Cell::new(10, 1.0, 10)];
        let records = vec![
            ReplicationRecord { cell: 0, replication: 0, converged: true, error: None, values: vec![1.0] },
            ReplicationRecord { cell: 0, replication: 1, converged: false, error: Some("x".into()), values: vec![] },
            ReplicationRecord { cell: 0, replication: 2, converged: true, error: None, values: vec![3.0] },
        ];
        let s = summarize(&cells, 1, &records);
        assert_eq!(s[0].n_used, 2);
        assert_eq!(s[0].excluded, vec![1]);
        assert_eq!(s[0].mean, vec![2.0]);
    }

    #[test]
    fn boxplot_round_trip() {
        let rows = vec![
            BoxplotRow { cell: "N=2 T=1 n=4".into(), parameter: "mu".into(), replication: 0, value: Some(0.1 + 0.2) },
            BoxplotRow { cell: "N=2 T=1 n=4".into(), parameter: "cov(1,2), \"raw\"".into(), replication: 0, value: Some(-1e-300) },
            BoxplotRow { cell: "N=2 T=1 n=4".into(), parameter: "mu".into(), replication: 1, value: None },
        ];
        let text = boxplot_csv(&rows).unwrap();
        assert!(text.starts_with("cell,parameter,replication,value\n"));
        assert!(text.contains("\"cov(1,2), \"\"raw\"\"\""));
        assert_eq!(parse_boxplot_csv(&text).unwrap(), rows);
        assert_eq!(parse_boxplot_csv(&boxplot_csv(&[]).unwrap()).unwrap(), vec![]);
    }

    #[test]
    fn grid_rule_cells() {
        let d = McDesign::full(Preset::Model3, 1);
        let ns: Vec<usize> = d.cells.iter().map(|c| c.n_obs).collect();
        assert_eq!(ns, vec![1000, 5000, 2000, 10000, 1000, 5000, 2000, 10000]);
        assert_eq!(McDesign::desk(Preset::Model1, 1).cells.len(), 4);
    }

    fn smoke(preset: Preset) -> McDesign {
        McDesign {
            cells: vec![Cell::new(12, 1.0, 50), Cell::new(20, 1.0, 100)],
            replications: 2,
            fine_step: 0.002,
            ..McDesign::desk(preset, 77)
        }
    }

    #[test]
    fn shared_simulation_equals_direct() {
        let d = smoke(Preset::Model1);
        let s = run_mc(&d, 1).unwrap();
        let single = McDesign { cells: vec![d.cells[0]], ..d.clone() };
        let t = run_mc(&single, 1).unwrap();
        let a: Vec<_> = s.records.iter().filter(|r| r.cell == 0).collect();
        let b: Vec<_> = t.records.iter().collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let d = McDesign { replications: 3, ..smoke(Preset::Model3) };
        let one = run_mc(&d, 1).unwrap();
        let three = run_mc(&d, 3).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
        assert_eq!(one.parameters.len(), one.records[0].values.len());
        assert!(one.parameters.iter().any(|p| p == "lambda.tau"));
    }

    #[test]
    fn invalid_designs() {
        let mut d = smoke(Preset::Model1);
        d.replications = 1;
        assert!(matches!(run_mc(&d, 1), Err(Error::Config(_))));
        let mut d = smoke(Preset::Model1);
        d.fine_step = 0.003;
        assert!(matches!(run_mc(&d, 1), Err(Error::Config(_))));
    }
}
