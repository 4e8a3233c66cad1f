//! How much the starting value Y(0) matters: the same Model 1 fit on panels
//! simulated from several initial states with common random numbers.
//!
//!     cargo run --release --example initial_state_sensitivity

use mesde::{fit_stage1, fit_stage2, simulate_panel, Preset, SimConfig};

fn main() -> mesde::Result<()> {
    let preset = Preset::Model1;
    let truth = preset.truth();
    println!("{:>6} {:>8} {:>8} {:>8}", "Y(0)", "eta", "mu", "omega2");
    for y0 in [-2.0, 0.0, 1.0, 3.0] {
        let model = preset.model().with_initial_state(y0);
        let (panel, _) = simulate_panel(&model, &truth, &SimConfig::new(200, 5.0, 1000, 1e-4, 99), true)?;
        let s1 = fit_stage1(&panel, &model, &Default::default())?;
        let s2 = fit_stage2(&panel, &model, &s1, &Default::default())?;
        println!("{y0:>6.1} {:>8.4} {:>8.3} {:>8.3}", s1.eta_hat[0], s2.mu_hat[0], s2.sigma_r_hat[(0, 0)]);
    }
    Ok(())
}
