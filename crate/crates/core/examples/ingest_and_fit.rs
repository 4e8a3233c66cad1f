//! Write a panel in long format, read it back, and fit it: the path for
//! data that did not come from the simulator.
//!
//!     cargo run --release --example ingest_and_fit

use mesde::io::csv::{ingest_panel, panel_to_long_csv};
use mesde::{fit_stage1, fit_stage2, simulate_panel, Preset, SimConfig};

fn main() -> mesde::Result<()> {
    let preset = Preset::Model2;
    let model = preset.model();
    let (panel, _) = simulate_panel(&model, &preset.truth(), &SimConfig::new(150, 5.0, 1000, 1e-4, 21), true)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("long.csv");
    std::fs::write(&path, panel_to_long_csv(&panel)?)?;
    // long files carry their own time column, so no step is needed
    let read = ingest_panel(&path, 1.0, None)?;
    assert_eq!(read, panel);

    let s1 = fit_stage1(&read, &model, &Default::default())?;
    let s2 = fit_stage2(&read, &model, &s1, &Default::default())?;
    let truth = preset.truth();
    println!("eta       {:.4} (truth {})", s1.eta_hat[0], truth.eta[0]);
    println!("weibull   {:.3?} (truth {:?})", s1.theta_tau_hat, truth.theta_tau);
    for (k, name) in model.mu_labels().iter().enumerate() {
        println!("{name:<9} {:.3} (truth {})", s2.mu_hat[k], truth.mu[k]);
    }
    println!("omega1_2  {:.3} (truth {})", s2.sigma_r_hat[(0, 0)], truth.sigma_r[(0, 0)]);
    Ok(())
}
