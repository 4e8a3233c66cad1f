//! Simulate one Model 1 panel and fit both stages, printing the estimates
//! next to the simulation truth.
//!
//!     cargo run --release --example fit_model1 -- [N] [n] [seed]

use std::time::Instant;

use mesde::{fit_stage1, fit_stage2, simulate_panel, Preset, SimConfig};

fn main() -> mesde::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_individuals = args.first().copied().unwrap_or(200) as usize;
    let n_obs = args.get(1).copied().unwrap_or(1000) as usize;
    let seed = args.get(2).copied().unwrap_or(1);

    let model = Preset::Model1.model();
    let truth = Preset::Model1.truth();
    let clock = Instant::now();
    let (panel, effects) = simulate_panel(&model, &truth, &SimConfig::new(n_individuals, 5.0, n_obs, 1e-4, seed), true)?;
    println!("simulated {n_individuals} paths of {n_obs} steps in {:.2?}", clock.elapsed());

    let clock = Instant::now();
    let s1 = fit_stage1(&panel, &model, &Default::default())?;
    let evals = s1.eta_optim.as_ref().map_or(0, |o| o.n_evals);
    println!("stage 1 in {:.2?} ({evals} H11 evaluations)", clock.elapsed());
    let clock = Instant::now();
    let s2 = fit_stage2(&panel, &model, &s1, &Default::default())?;
    println!("stage 2 in {:.2?}", clock.elapsed());

    let se = 2.0 * 6f64.sqrt() / (5.0 * ((n_individuals * n_obs) as f64).sqrt());
    println!("\n{:<8} {:>10} {:>10} {:>10}", "", "truth", "estimate", "se");
    println!("{:<8} {:>10.4} {:>10.4} {:>10.4}  (asymptotic {se:.4})", "eta", 0.5, s1.eta_hat[0], s1.se_eta[0]);
    for (k, name) in ["alpha", "sigma"].iter().enumerate() {
        println!("{name:<8} {:>10.4} {:>10.4} {:>10.4}", truth.theta_tau[k], s1.theta_tau_hat[k], s1.se_theta[k]);
    }
    println!("{:<8} {:>10.4} {:>10.4} {:>10.4}", "mu", 2.0, s2.mu_hat[0], s2.se[0]);
    println!("{:<8} {:>10.4} {:>10.4} {:>10.4}", "omega2", 1.0, s2.sigma_r_hat[(0, 0)], s2.se[1]);

    // profiled time scales track the simulated ones
    let tau: Vec<f64> = effects.iter().map(|e| e.tau).collect();
    let rel: f64 = tau.iter().zip(&s1.tau_hat).map(|(t, h)| (h / t - 1.0).abs()).sum::<f64>() / tau.len() as f64;
    println!("\nmean |tau_hat/tau - 1| = {rel:.4}");
    Ok(())
}
