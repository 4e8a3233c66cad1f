//! When the diffusion has no unknown parameter, stage 1 skips the η search
//! and the time scales are profiled directly from the data.
//!
//!     cargo run --release --example known_diffusion

use nalgebra::DMatrix;

use mesde::{fit_stage1, fit_stage2, simulate_panel, ModelSpec, ParamSet, SimConfig, TauFamily};

fn main() -> mesde::Result<()> {
    // dY = τ(φ₁ − φ₂ Y) dt + √τ √(1 + Y²/4) dW
    let model = ModelSpec::builder("known-c")
        .random_basis(2, |y, out| {
            out[0] = 1.0;
            out[1] = -y;
        })
        .diffusion(0, |_, y, _| (1.0 + 0.25 * y * y).sqrt())
        .tau_family(TauFamily::Weibull)
        .mu_labels(["level", "reversion"])
        .build()?;
    let truth = ParamSet::new(vec![], vec![3.0, 1.5], vec![1.0, 2.0], DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]))?;
    let (panel, effects) = simulate_panel(&model, &truth, &SimConfig::new(300, 5.0, 1000, 1e-3, 11), true)?;

    let s1 = fit_stage1(&panel, &model, &Default::default())?;
    assert!(s1.known_diffusion && s1.eta_optim.is_none());
    println!("Weibull (shape, scale): {:.3?} (truth {:?})", s1.theta_tau_hat, truth.theta_tau);

    let corr = {
        let tau: Vec<f64> = effects.iter().map(|e| e.tau).collect();
        let n = tau.len() as f64;
        let (ma, mb) = (tau.iter().sum::<f64>() / n, s1.tau_hat.iter().sum::<f64>() / n);
        let cov: f64 = tau.iter().zip(&s1.tau_hat).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = tau.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = s1.tau_hat.iter().map(|b| (b - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    println!("corr(tau_hat, tau) = {corr:.4}");

    let s2 = fit_stage2(&panel, &model, &s1, &Default::default())?;
    println!("mu: {:.3?} (truth {:?})", s2.mu_hat, truth.mu);
    println!("sigma_r:{:.3}", s2.sigma_r_hat);
    Ok(())
}
