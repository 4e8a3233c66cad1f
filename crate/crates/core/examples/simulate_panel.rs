//! Simulate a panel from any preset and write it, with the drawn random
//! effects, as CSV.
//!
//!     cargo run --example simulate_panel -- model3 out_dir

use std::path::PathBuf;

use mesde::io::atomic_write;
use mesde::io::csv::{effects_to_csv, panel_to_wide_csv};
use mesde::{simulate_panel, Preset, SimConfig};

fn main() -> mesde::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = Preset::from_name(&args.next().unwrap_or_else(|| "model1".into()))?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "simulated".into()));
    std::fs::create_dir_all(&out)?;

    let model = preset.model();
    let truth = preset.truth();
    // 50 individuals, T = 5, n = 500 (h = 0.01), Euler step 1e-4
    let cfg = SimConfig::new(50, 5.0, 500, 1e-4, 7);
    let (panel, effects) = simulate_panel(&model, &truth, &cfg, true)?;

    let labels = model.mu_labels()[model.p_fixed()..].to_vec();
    atomic_write(&out.join("panel.csv"), panel_to_wide_csv(&panel)?.as_bytes())?;
    atomic_write(&out.join("effects.csv"), effects_to_csv(&effects, &labels)?.as_bytes())?;

    let (lo, hi) = panel.min_max();
    println!("{}: {} paths, {} steps of h = {}", preset.name(), panel.n_individuals(), panel.n_steps(), panel.h());
    println!("values span [{lo:.3}, {hi:.3}]");
    let mean_tau = effects.iter().map(|e| e.tau).sum::<f64>() / effects.len() as f64;
    println!("mean drawn tau {mean_tau:.3}");
    println!("wrote {}", out.display());
    Ok(())
}
