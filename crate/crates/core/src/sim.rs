//! Euler–Maruyama simulation of mixed-effects panels on a fine grid,
//! subsampled to the observation grid.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PanelData, ParamSet};
use crate::reduce::map_individuals;
use crate::rng::StreamKey;
use crate::tau::TauFamily;

/// |Y| beyond this is treated as a blow-up.
pub const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectDraw {
    pub tau: f64,
    pub phi_r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub n_obs: usize,
    pub horizon: f64,
    pub fine_step: f64,
    pub seed: u64,
    #[serde(default)]
    pub replication: u64,
}

impl SimConfig {
    pub fn new(n_individuals: usize, horizon: f64, n_obs: usize, fine_step: f64, seed: u64) -> Self {
        SimConfig { n_individuals, n_obs, horizon, fine_step, seed, replication: 0 }
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n_obs as f64
    }

    /// Number of fine steps per observation interval.
    pub fn substeps(&self) -> Result<usize> {
        if self.n_individuals == 0 || self.n_obs == 0 {
            return Err(Error::Config("N and n must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.fine_step > 0.0 && self.fine_step.is_finite()) {
            return Err(Error::Config(format!("fine step must be positive, got {}", self.fine_step)));
        }
        let h = self.h();
        let ratio = h / self.fine_step;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
            return Err(Error::Config(format!(
                "fine step {} does not divide the observation step {h}",
                self.fine_step
            )));
        }
        Ok(k as usize)
    }
}

/// One draw (τ, φ_r) from the random-effect law.
pub fn draw_effect<R: Rng + ?Sized>(
    params: &ParamSet,
    family: TauFamily,
    p_fixed: usize,
    chol_factor: &nalgebra::DMatrix<f64>,
    rng: &mut R,
) -> RandomEffectDraw {
    let tau = family.sample(&params.theta_tau, rng);
    let p_r = chol_factor.nrows();
    let z = DVector::from_iterator(p_r, (0..p_r).map(|_| StandardNormal.sample(rng)));
    let phi = chol_factor * z;
    let phi_r = (0..p_r).map(|k| params.mu[p_fixed + k] + phi[k]).collect();
    RandomEffectDraw { tau, phi_r }
}

fn sigma_factor(params: &ParamSet) -> Result<nalgebra::DMatrix<f64>> {
    let p = params.sigma_r.nrows();
    if p == 0 {
        return Ok(nalgebra::DMatrix::zeros(0, 0));
    }
    params
        .sigma_r
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidParams("sigma_r is not positive definite".into()))
}

/// N independent draws, individual i read from stream i of `key`.
pub fn draw_effects(
    params: &ParamSet,
    family: TauFamily,
    p_fixed: usize,
    n: usize,
    key: StreamKey,
) -> Result<Vec<RandomEffectDraw>> {
    let l = sigma_factor(params)?;
    Ok((0..n)
        .map(|i| draw_effect(params, family, p_fixed, &l, &mut key.stream(i as u64)))
        .collect())
}

/// Simulate one trajectory on the fine grid, recording every `substeps`-th
/// value. The stream is consumed after the effect draw.
#[allow(clippy::too_many_arguments)]
fn simulate_path<R: Rng + ?Sized>(
    model: &ModelSpec,
    params: &ParamSet,
    effect: &RandomEffectDraw,
    individual: usize,
    n_obs: usize,
    substeps: usize,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p_fixed = model.p_fixed();
    let p_phi = model.p_phi();
    let mut phi = Vec::with_capacity(p_phi);
    phi.extend_from_slice(&params.mu[..p_fixed]);
    phi.extend_from_slice(&effect.phi_r);
    let tau = effect.tau;
    let sqrt_tau_delta = (tau * delta).sqrt();
    let eta = &params.eta;
    let mut basis = vec![0.0; p_phi];
    let mut out = Vec::with_capacity(n_obs + 1);
    let mut y = model.initial_state();
    out.push(y);
    let mut step: u64 = 0;
    for _ in 0..n_obs {
        for _ in 0..substeps {
            let t = step as f64 * delta;
            model.drift_basis(y, &mut basis);
            let mut drift = 0.0;
            for k in 0..p_phi {
                drift += phi[k] * basis[k];
            }
            let c = model.diffusion_raw(t, y, eta);
            let z: f64 = StandardNormal.sample(rng);
            y += tau * drift * delta + sqrt_tau_delta * c * z;
            step += 1;
            if !y.is_finite() || y.abs() > BLOW_UP {
                return Err(Error::Simulation {
                    individual,
                    time: step as f64 * delta,
                    value: y,
                });
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Simulate the panel. Individual i uses stream i of the (seed,
/// replication) key for both its effects and its Brownian increments, so
/// the result does not depend on `parallel` or on scheduling.
pub fn simulate_panel(
    model: &ModelSpec,
    params: &ParamSet,
    cfg: &SimConfig,
    parallel: bool,
) -> Result<(PanelData, Vec<RandomEffectDraw>)> {
    model.validate_params(params)?;
    let substeps = cfg.substeps()?;
    let key = StreamKey::replication(cfg.seed, cfg.replication);
    let l = sigma_factor(params)?;
    let family = model.tau_family();
    let p_fixed = model.p_fixed();
    let results = map_individuals(cfg.n_individuals, parallel, |i| {
        let mut rng = key.stream(i as u64);
        let effect = draw_effect(params, family, p_fixed, &l, &mut rng);
        let path = simulate_path(model, params, &effect, i, cfg.n_obs, substeps, cfg.fine_step, &mut rng)?;
        Ok::<_, Error>((path, effect))
    });
    let mut values = Vec::with_capacity(cfg.n_individuals * (cfg.n_obs + 1));
    let mut effects = Vec::with_capacity(cfg.n_individuals);
    for r in results {
        let (path, effect) = r?;
        values.extend(path);
        effects.push(effect);
    }
    let panel = PanelData::from_flat(values, cfg.n_individuals, cfg.n_obs, cfg.h(), 0.0)?;
    Ok((panel, effects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::Preset;
    use nalgebra::DMatrix;

    fn brownian(tau_fixed: f64) -> (ModelSpec, ParamSet) {
        // A degenerate LogNormal (σ tiny) pins τ at the requested value.
        let model = ModelSpec::builder("bm")
            .random_basis(1, |_, out| out[0] = 0.0)
            .diffusion(0, |_, _, _| 1.0)
            .tau_family(TauFamily::LogNormal)
            .build()
            .unwrap();
        let p = ParamSet::new(vec![], vec![tau_fixed.ln(), 1e-4], vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        (model, p)
    }

    fn increment_variance(panel: &PanelData) -> (f64, f64) {
        let ys: Vec<f64> = (0..panel.n_individuals()).flat_map(|i| panel.normalized_increments(i)).collect();
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        (v, n)
    }

    #[test]
    fn brownian_increments_have_unit_variance() {
        let (model, p) = brownian(1.0);
        let cfg = SimConfig::new(200, 1.0, 1000, 0.001, 11);
        let (panel, _) = simulate_panel(&model, &p, &cfg, false).unwrap();
        let (v, n) = increment_variance(&panel);
        // Var of the sample variance of Gaussians is 2σ⁴/(n−1)
        let se = (2.0 / (n - 1.0)).sqrt();
        assert!((v - 1.0).abs() < 3.0 * se * 1.0001 + 2e-4, "variance {v}");
    }

    #[test]
    fn tau_scales_increment_variance() {
        let (model, p) = brownian(4.0);
        let cfg = SimConfig::new(200, 1.0, 1000, 0.001, 12);
        let (panel, _) = simulate_panel(&model, &p, &cfg, false).unwrap();
        let (v, n) = increment_variance(&panel);
        let se = 4.0 * (2.0 / (n - 1.0)).sqrt();
        assert!((v - 4.0).abs() < 3.0 * se + 4.0 * 2e-4, "variance {v}");
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let model = Preset::Model3.model();
        let truth = Preset::Model3.truth();
        let cfg = SimConfig::new(16, 1.0, 50, 0.001, 99);
        let (a, ea) = simulate_panel(&model, &truth, &cfg, false).unwrap();
        let (b, eb) = simulate_panel(&model, &truth, &cfg, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        // simulating a subset gives the same rows for shared individuals
        let small = SimConfig { n_individuals: 5, ..cfg.clone() };
        let (c, _) = simulate_panel(&model, &truth, &small, false).unwrap();
        for i in 0..5 {
            assert_eq!(a.path(i), c.path(i));
        }
    }

    #[test]
    fn effects_match_draw_effects() {
        let model = Preset::Model1.model();
        let truth = Preset::Model1.truth();
        let cfg = SimConfig::new(8, 1.0, 10, 0.01, 5);
        let (_, effects) = simulate_panel(&model, &truth, &cfg, false).unwrap();
        let direct = draw_effects(&truth, model.tau_family(), 0, 8, StreamKey::replication(5, 0)).unwrap();
        assert_eq!(effects, direct);
    }

    #[test]
    fn fine_step_must_divide_h() {
        let cfg = SimConfig::new(2, 1.0, 10, 0.03, 1);
        assert!(matches!(cfg.substeps(), Err(Error::Config(_))));
        let cfg = SimConfig::new(2, 1.0, 10, 0.2, 1);
        assert!(cfg.substeps().is_err());
        assert_eq!(SimConfig::new(2, 5.0, 1000, 0.0001, 1).substeps().unwrap(), 50);
    }

    #[test]
    fn blow_up_is_reported() {
        let model = ModelSpec::builder("explode")
            .random_basis(1, |y, out| out[0] = y)
            .diffusion(0, |_, _, _| 1.0)
            .tau_family(TauFamily::Exponential)
            .build()
            .unwrap();
        let p = ParamSet::new(vec![], vec![1.0], vec![90.0], DMatrix::from_element(1, 1, 1e-6)).unwrap();
        let cfg = SimConfig::new(1, 10.0, 10, 0.01, 3);
        let err = simulate_panel(&model, &p, &cfg, false).unwrap_err();
        assert!(matches!(err, Error::Simulation { individual: 0, .. }), "{err}");
    }

    #[test]
    fn effect_moments() {
        // Σ_r = I, μ_r = 0
        let model = ModelSpec::builder("iid")
            .random_basis(2, |_, out| out.fill(0.0))
            .diffusion(0, |_, _, _| 1.0)
            .tau_family(TauFamily::Exponential)
            .build()
            .unwrap();
        let p = ParamSet::new(vec![], vec![1.0], vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let n = 100_000;
        let d = draw_effects(&p, model.tau_family(), 0, n, StreamKey::new(21)).unwrap();
        let nf = n as f64;
        let tau_mean = d.iter().map(|e| e.tau).sum::<f64>() / nf;
        assert!((tau_mean - 1.0).abs() < 3.0 / nf.sqrt(), "{tau_mean}");
        let c11 = d.iter().map(|e| e.phi_r[0] * e.phi_r[0]).sum::<f64>() / nf;
        let c12 = d.iter().map(|e| e.phi_r[0] * e.phi_r[1]).sum::<f64>() / nf;
        let c22 = d.iter().map(|e| e.phi_r[1] * e.phi_r[1]).sum::<f64>() / nf;
        let se_var = (2.0 / nf).sqrt();
        let se_cov = (1.0 / nf).sqrt();
        assert!((c11 - 1.0).abs() < 3.0 * se_var);
        assert!((c22 - 1.0).abs() < 3.0 * se_var);
        assert!(c12.abs() < 3.0 * se_cov);
    }

    #[test]
    fn model3_effect_moments() {
        let model = Preset::Model3.model();
        let truth = Preset::Model3.truth();
        let n = 100_000;
        let d = draw_effects(&truth, model.tau_family(), 0, n, StreamKey::new(33)).unwrap();
        let nf = n as f64;
        let m1 = d.iter().map(|e| e.phi_r[0]).sum::<f64>() / nf;
        let m2 = d.iter().map(|e| e.phi_r[1]).sum::<f64>() / nf;
        assert!((m1 - 2.0).abs() < 3.0 * (1.0 / nf).sqrt());
        assert!((m2 - 1.0).abs() < 3.0 * (0.5 / nf).sqrt());
        let cov = d.iter().map(|e| (e.phi_r[0] - m1) * (e.phi_r[1] - m2)).sum::<f64>() / (nf - 1.0);
        // Var of the product of a bivariate normal pair: σ₁²σ₂² + σ₁₂²
        let se = ((1.0 * 0.5 + 0.04) / nf).sqrt();
        assert!((cov + 0.2).abs() < 3.0 * se, "{cov}");
        let tau_mean = d.iter().map(|e| e.tau).sum::<f64>() / nf;
        assert!((tau_mean - 1.0).abs() < 3.0 / nf.sqrt());
    }
}
