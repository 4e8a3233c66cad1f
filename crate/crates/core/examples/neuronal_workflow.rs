//! Real-data style workflow with the neuronal preset: ingest a wide CSV of
//! membrane potentials, rescale, check that the fitted diffusion stays
//! positive over the data, fit, and simulate predictive trajectories.
//!
//! Without an input file a stand-in panel (N = 240, n = 2000,
//! h = 0.00015) is simulated first.
//!
//!     cargo run --release --example neuronal_workflow -- [panel.csv step scale]

use std::path::PathBuf;

use mesde::io::commands::cli_fit;
use mesde::io::config::{FitConfig, SimulateConfig};
use mesde::io::report::render_fit;
use mesde::Preset;

fn main() -> mesde::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from("neuronal_out");
    std::fs::create_dir_all(&out)?;

    let mut cfg = match args.as_slice() {
        [path, step, scale, ..] => {
            let mut c = FitConfig::new(Preset::Neuronal, path);
            c.step = Some(step.parse().map_err(|_| mesde::Error::Config("step must be a number".into()))?);
            c.scale = scale.parse().map_err(|_| mesde::Error::Config("scale must be a number".into()))?;
            c
        }
        _ => {
            let sim = SimulateConfig {
                model: Preset::Neuronal,
                n_individuals: 240,
                horizon: 0.3,
                n_obs: 2000,
                fine_step: 3e-5,
                seed: 1,
                initial_state: None,
                truth: None,
            };
            mesde::io::commands::cli_simulate(&sim, &out)?;
            FitConfig::new(Preset::Neuronal, out.join("panel.csv"))
        }
    };
    cfg.predictive = 100;

    let (report, paths) = cli_fit(&cfg, &out)?;
    print!("{}", render_fit(&report));
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
