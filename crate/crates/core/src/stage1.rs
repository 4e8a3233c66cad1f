//! First stage: profile quasi-likelihood for the diffusion parameters.
//!
//! τᵢ is profiled out through its explicit maximizer
//! τ̂ᵢ(η) = n⁻¹ Σⱼ S⁻¹_{i,j−1}(η) y²ᵢⱼ, η is estimated by maximizing H₁₁,
//! and θ_τ by maximizing H₁₂ = Σᵢ log f(τ̂ᵢ(η̂); θ_τ). The two maximizations
//! are strictly sequential.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxBounds, ModelSpec, PanelData};
use crate::optim::{maximize, OptimOptions, OptimResult};
use crate::reduce::{det_sum, det_sum_matrices, map_individuals, ordered_sum};
use crate::tau::TauFamily;

const LOG_BLOCK: usize = 8;

/// τ̂ below this is treated as a degenerate (flat) trajectory.
pub const TAU_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Options {
    pub optim: OptimOptions,
    /// Evaluate per-individual terms on the rayon pool.
    pub parallel: bool,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options { optim: OptimOptions::default(), parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Estimate {
    pub eta_hat: Vec<f64>,
    pub theta_tau_hat: Vec<f64>,
    pub tau_hat: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub q11_hat: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub i12_hat: DMatrix<f64>,
    /// √diag(Q̂₁₁⁻¹ / (nN)).
    pub se_eta: Vec<f64>,
    /// √diag(Î₁₂⁻¹ / N).
    pub se_theta: Vec<f64>,
    pub h11_value: f64,
    pub h12_value: f64,
    pub known_diffusion: bool,
    pub q11_singular: bool,
    pub eta_optim: Option<OptimResult>,
    pub theta_optim: OptimResult,
    pub warnings: Vec<String>,
}

/// Σⱼ log S_{i,j−1}(η) and τ̂ᵢ(η) for one trajectory. Sums run in time
/// order, which is fixed, so they are reproducible without sorting.
fn individual_terms(panel: &PanelData, model: &ModelSpec, i: usize, eta: &[f64]) -> Result<(f64, f64)> {
    let path = panel.path(i);
    let n = panel.n_steps();
    let inv_h = panel.h().recip();
    let mut log_s = 0.0;
    let mut scaled = 0.0;
    // log S is taken once per block of products; a block whose product
    // leaves the normal range is redone term by term
    let mut block = [0.0; LOG_BLOCK];
    let mut j = 1;
    while j <= n {
        let len = LOG_BLOCK.min(n + 1 - j);
        let mut prod = 1.0;
        for (k, slot) in block[..len].iter_mut().enumerate() {
            let t = panel.time(j + k - 1);
            let y = path[j + k - 1];
            let c = model.diffusion_raw(t, y, eta);
            let mut s = c * c;
            if !(s > 0.0 && s.is_finite()) {
                s = model.eval_s(t, y, eta)?;
            }
            let dy = path[j + k] - y;
            scaled += dy * dy * inv_h / s;
            prod *= s;
            *slot = s;
        }
        if prod.is_normal() {
            log_s += prod.ln();
        } else {
            log_s += block[..len].iter().map(|s| s.ln()).sum::<f64>();
        }
        j += len;
    }
    let tau = scaled / n as f64;
    if !(tau >= TAU_FLOOR) {
        return Err(Error::DegenerateTrajectory {
            individual: i,
            reason: format!("profiled time scale {tau:e} (all increments zero?)"),
        });
    }
    Ok((log_s, tau))
}

/// τ̂ᵢ(η) = n⁻¹ Σⱼ S⁻¹_{i,j−1}(η) y²ᵢⱼ.
pub fn profile_tau(panel: &PanelData, model: &ModelSpec, i: usize, eta: &[f64]) -> Result<f64> {
    if i >= panel.n_individuals() {
        return Err(Error::data(format!("individual {i} out of range")));
    }
    individual_terms(panel, model, i, eta).map(|(_, tau)| tau)
}

/// τ̂ᵢ(η) for every individual.
pub fn profile_taus(panel: &PanelData, model: &ModelSpec, eta: &[f64], parallel: bool) -> Result<Vec<f64>> {
    map_individuals(panel.n_individuals(), parallel, |i| profile_tau(panel, model, i, eta))
        .into_iter()
        .collect()
}

/// H₁₁(η) = −½ Σᵢ { Σⱼ log S_{i,j−1}(η) + n log τ̂ᵢ(η) }.
pub fn h11(panel: &PanelData, model: &ModelSpec, eta: &[f64], parallel: bool) -> Result<f64> {
    let n = panel.n_steps() as f64;
    let terms: Vec<f64> = map_individuals(panel.n_individuals(), parallel, |i| {
        individual_terms(panel, model, i, eta).map(|(log_s, tau)| -0.5 * (log_s + n * tau.ln()))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(det_sum(&terms))
}

/// argmax of H₁₁ over the η box.
pub fn fit_eta(panel: &PanelData, model: &ModelSpec, opts: &Stage1Options) -> Result<OptimResult> {
    if model.known_diffusion() {
        return Err(Error::estimation("diffusion has no unknown parameter; nothing to fit"));
    }
    let objective = |eta: &[f64]| h11(panel, model, eta, opts.parallel).unwrap_or(f64::NEG_INFINITY);
    maximize(objective, model.eta_start(), &model.bounds().eta, &opts.optim)
}

/// H₁₂(θ) = Σᵢ log f(τ̂ᵢ; θ); −∞ if any τ̂ᵢ is outside the support.
pub fn h12(taus: &[f64], family: TauFamily, theta: &[f64]) -> f64 {
    let terms: Vec<f64> = taus.iter().map(|&t| family.log_density(t, theta)).collect();
    if terms.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    det_sum(&terms)
}

/// argmax of H₁₂ over the θ_τ box. Pass the true τᵢ instead of τ̂ᵢ for the
/// oracle estimate.
pub fn fit_theta_tau(taus: &[f64], family: TauFamily, bounds: &BoxBounds, opts: &OptimOptions) -> Result<OptimResult> {
    if taus.is_empty() {
        return Err(Error::estimation("no time-scale values to fit"));
    }
    let mut start = family.initial_guess(taus);
    for (k, v) in start.iter_mut().enumerate() {
        let margin = 1e-6 * bounds.width(k);
        *v = v.clamp(bounds.lower[k] + margin, bounds.upper[k] - margin);
    }
    if !h12(taus, family, &start).is_finite() {
        start = bounds.midpoint();
    }
    maximize(|theta| h12(taus, family, theta), &start, bounds, opts)
}

/// Q̂₁₁ = (2N)⁻¹ Σᵢ { n⁻¹Σⱼ g_{i,j−1}^{⊗2} − (n⁻¹Σⱼ g_{i,j−1})^{⊗2} }, g = ∂_η log S.
pub fn estimate_q11(panel: &PanelData, model: &ModelSpec, eta: &[f64], parallel: bool) -> Result<DMatrix<f64>> {
    let p = model.p_eta();
    let n = panel.n_steps();
    let terms: Vec<DMatrix<f64>> = map_individuals(panel.n_individuals(), parallel, |i| {
        let path = panel.path(i);
        let mut g = vec![0.0; p];
        let mut sum = vec![vec![0.0; n]; p];
        let mut outer = vec![vec![vec![0.0; n]; p]; p];
        for j in 1..=n {
            model.log_s_grad(panel.time(j - 1), path[j - 1], eta, &mut g)?;
            for a in 0..p {
                sum[a][j - 1] = g[a];
                for b in 0..p {
                    outer[a][b][j - 1] = g[a] * g[b];
                }
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| ordered_sum(s) / nf).collect();
        Ok(DMatrix::from_fn(p, p, |a, b| ordered_sum(&outer[a][b]) / nf - mean[a] * mean[b]))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let total = det_sum_matrices(&terms, p, p);
    let mut q = total / (2.0 * panel.n_individuals() as f64);
    crate::cholesky::symmetrize(&mut q);
    Ok(q)
}

/// Î₁₂ = N⁻¹ Σᵢ (∂_θ log f(τ̂ᵢ; θ̂))^{⊗2}.
pub fn estimate_i12(taus: &[f64], family: TauFamily, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = family.dim();
    let terms: Vec<DMatrix<f64>> = taus
        .iter()
        .map(|&t| {
            let g = family.log_density_grad_vec(t, theta);
            DMatrix::from_fn(p, p, |a, b| g[a] * g[b])
        })
        .collect();
    let total = det_sum_matrices(&terms, p, p);
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("score outside the family support"));
    }
    Ok(total / taus.len() as f64)
}

/// Inverse of a symmetric information matrix, falling back to the
/// pseudo-inverse when it is (numerically) singular.
pub fn robust_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if m.nrows() == 0 {
        return (m.clone(), false);
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let singular = !(min > 1e-12 * max.max(f64::MIN_POSITIVE));
    if !singular {
        if let Some(c) = m.clone().cholesky() {
            return (c.inverse(), false);
        }
    }
    let pinv = m.clone().pseudo_inverse(1e-12 * max.max(1e-300)).unwrap_or_else(|_| DMatrix::zeros(m.nrows(), m.ncols()));
    (pinv, true)
}

/// √diag(inverse / scale).
pub fn standard_errors(inverse: &DMatrix<f64>, scale: f64) -> Vec<f64> {
    (0..inverse.nrows()).map(|k| (inverse[(k, k)] / scale).max(0.0).sqrt()).collect()
}

/// Full first stage: η̂, τ̂ᵢ(η̂), θ̂_τ, Q̂₁₁ and Î₁₂.
pub fn fit_stage1(panel: &PanelData, model: &ModelSpec, opts: &Stage1Options) -> Result<Stage1Estimate> {
    let n_ind = panel.n_individuals() as f64;
    let nn = n_ind * panel.n_steps() as f64;
    let mut warnings = Vec::new();
    let (eta_hat, eta_optim, h11_value) = if model.known_diffusion() {
        let v = h11(panel, model, &[], opts.parallel)?;
        (Vec::new(), None, v)
    } else {
        let r = fit_eta(panel, model, opts)?;
        if !r.converged {
            warnings.push("eta optimizer did not meet its tolerance".to_string());
        }
        (r.argmax.clone(), Some(r.clone()), r.value)
    };
    let tau_hat = profile_taus(panel, model, &eta_hat, opts.parallel)?;
    let family = model.tau_family();
    let theta_optim = fit_theta_tau(&tau_hat, family, &model.bounds().theta_tau, &opts.optim)?;
    if !theta_optim.converged {
        warnings.push("theta_tau optimizer did not meet its tolerance".to_string());
    }
    let theta_tau_hat = theta_optim.argmax.clone();
    let q11_hat = if model.known_diffusion() {
        DMatrix::zeros(0, 0)
    } else {
        estimate_q11(panel, model, &eta_hat, opts.parallel)?
    };
    let (q_inv, q11_singular) = robust_inverse(&q11_hat);
    if q11_singular {
        let msg = "Q11 is singular: eta is not identifiable from the diffusion (pseudo-inverse used for SEs)";
        log::warn!("{msg}");
        warnings.push(msg.to_string());
    }
    let i12_hat = estimate_i12(&tau_hat, family, &theta_tau_hat)?;
    let (i_inv, i_singular) = robust_inverse(&i12_hat);
    if i_singular {
        warnings.push("I12 is singular (pseudo-inverse used for SEs)".to_string());
    }
    Ok(Stage1Estimate {
        se_eta: standard_errors(&q_inv, nn),
        se_theta: standard_errors(&i_inv, n_ind),
        eta_hat,
        theta_tau_hat,
        tau_hat,
        q11_hat,
        i12_hat,
        h11_value,
        h12_value: theta_optim.value,
        known_diffusion: model.known_diffusion(),
        q11_singular,
        eta_optim: eta_optim.map(|mut r| {
            r.trace = None;
            r
        }),
        theta_optim: OptimResult { trace: None, ..theta_optim },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::Preset;
    use crate::sim::{simulate_panel, SimConfig};

    fn toy_panel() -> PanelData {
        PanelData::from_rows(
            vec![
                vec![0.0, 0.3, -0.1, 0.4, 0.2],
                vec![1.0, 0.7, 1.5, 1.1, 0.9],
                vec![-0.5, -0.2, -0.9, -0.4, -1.3],
            ],
            0.25,
        )
        .unwrap()
    }

    fn atan_model() -> ModelSpec {
        ModelSpec::builder("atan")
            .random_basis(1, |y, out| out[0] = -1.0 / (1.0 + y * y).sqrt())
            .diffusion(1, |_, y, eta| (eta[0] * y.atan()).exp())
            .build()
            .unwrap()
    }

    fn scaled_model(k: f64) -> ModelSpec {
        ModelSpec::builder("scaled")
            .random_basis(1, |y, out| out[0] = -1.0 / (1.0 + y * y).sqrt())
            .diffusion(1, move |_, y, eta| k.sqrt() * (eta[0] * y.atan()).exp())
            .build()
            .unwrap()
    }

    #[test]
    fn tau_of_unit_increments() {
        // h = 1 and unit jumps: y² = 1 everywhere
        let p = PanelData::from_rows(vec![vec![0.0, 1.0, 0.0, 1.0, 2.0]], 1.0).unwrap();
        let m = ModelSpec::builder("c1")
            .random_basis(1, |_, out| out[0] = 1.0)
            .diffusion(0, |_, _, _| 1.0)
            .build()
            .unwrap();
        assert_eq!(profile_tau(&p, &m, 0, &[]).unwrap(), 1.0);
        let m2 = ModelSpec::builder("c2")
            .random_basis(1, |_, out| out[0] = 1.0)
            .diffusion(0, |_, _, _| 2f64.sqrt())
            .build()
            .unwrap();
        let half = profile_tau(&p, &m2, 0, &[]).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_trajectory_is_degenerate() {
        let p = PanelData::from_rows(vec![vec![1.0; 5]], 0.1).unwrap();
        let err = profile_tau(&p, &atan_model(), 0, &[0.1]).unwrap_err();
        assert!(matches!(err, Error::DegenerateTrajectory { individual: 0, .. }));
    }

    #[test]
    fn h11_matches_brute_force_on_toy_panel() {
        let panel = toy_panel();
        let model = atan_model();
        for eta in [-0.4, 0.0, 0.5, 1.3] {
            // direct transcription of the displayed formula
            let mut total = 0.0;
            for i in 0..3 {
                let y = panel.path(i);
                let n = 4.0;
                let mut log_sum = 0.0;
                let mut tau = 0.0;
                for j in 1..=4 {
                    let s = (2.0 * eta * y[j - 1].atan()).exp();
                    log_sum += s.ln();
                    tau += (y[j] - y[j - 1]).powi(2) / 0.25 / s;
                }
                total += -0.5 * (log_sum + n * (tau / n).ln());
            }
            let ours = h11(&panel, &model, &[eta], false).unwrap();
            assert!((ours - total).abs() < 1e-10, "eta={eta}: {ours} vs {total}");
        }
    }

    #[test]
    fn h11_invariant_to_constant_rescaling() {
        let panel = toy_panel();
        let base = atan_model();
        for k in [0.01, 0.5, 3.0, 250.0] {
            let scaled = scaled_model(k);
            for eta in [-0.3, 0.2, 0.9] {
                let a = h11(&panel, &base, &[eta], false).unwrap();
                let b = h11(&panel, &scaled, &[eta], false).unwrap();
                assert!((a - b).abs() < 1e-9, "k={k} eta={eta}");
            }
        }
    }

    #[test]
    fn multiplicative_family_is_flat() {
        let panel = toy_panel();
        let m = ModelSpec::builder("mult")
            .random_basis(1, |_, out| out[0] = 1.0)
            .diffusion(1, |_, y, eta| (eta[0] * (1.0 + y * y)).sqrt())
            .bounds(crate::model::ModelBounds {
                eta: BoxBounds::new(vec![0.1], vec![10.0]),
                ..crate::model::ModelBounds::default_for(1, TauFamily::LogNormal, 0, 1)
            })
            .build()
            .unwrap();
        let a = h11(&panel, &m, &[0.5], false).unwrap();
        for eta in [0.2, 1.0, 7.0] {
            assert!((h11(&panel, &m, &[eta], false).unwrap() - a).abs() < 1e-9);
        }
        let q = estimate_q11(&panel, &m, &[1.0], false).unwrap();
        assert!(q[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn profiled_gaussian_likelihood_differs_by_constant() {
        let panel = toy_panel();
        let model = atan_model();
        let full = |eta: f64| {
            let mut total = 0.0;
            for i in 0..3 {
                let tau = profile_tau(&panel, &model, i, &[eta]).unwrap();
                let y = panel.path(i);
                for j in 1..=4 {
                    let var = 0.25 * tau * model.eval_s(0.0, y[j - 1], &[eta]).unwrap();
                    let d = y[j] - y[j - 1];
                    total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * d * d / var;
                }
            }
            total
        };
        let offsets: Vec<f64> = [-1.0, -0.2, 0.4, 1.1]
            .iter()
            .map(|&e| full(e) - h11(&panel, &model, &[e], false).unwrap())
            .collect();
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn q11_zero_when_s_free_of_y() {
        let panel = toy_panel();
        let m = ModelSpec::builder("const")
            .random_basis(1, |_, out| out[0] = 1.0)
            .diffusion(1, |_, _, eta| eta[0].exp())
            .build()
            .unwrap();
        let q = estimate_q11(&panel, &m, &[0.3], false).unwrap();
        assert_eq!(q[(0, 0)], 0.0);
        let (_, singular) = robust_inverse(&q);
        assert!(singular);
    }

    #[test]
    fn q11_matches_brute_force() {
        let panel = toy_panel();
        let model = atan_model();
        let mut acc = 0.0;
        for i in 0..3 {
            let y = panel.path(i);
            let g: Vec<f64> = (0..4).map(|j| 2.0 * y[j].atan()).collect();
            let m2 = g.iter().map(|v| v * v).sum::<f64>() / 4.0;
            let m1 = g.iter().sum::<f64>() / 4.0;
            acc += m2 - m1 * m1;
        }
        let expected = acc / 6.0;
        let q = estimate_q11(&panel, &model, &[0.7], false).unwrap();
        assert!((q[(0, 0)] - expected).abs() < 1e-10);
    }

    #[test]
    fn exponential_h12_and_mle() {
        let taus = [1.0, 1.0];
        for lambda in [0.5f64, 1.0, 2.0] {
            let v = h12(&taus, TauFamily::Exponential, &[lambda]);
            assert!((v - (2.0 * lambda.ln() - 2.0 * lambda)).abs() < 1e-14);
        }
        let r = fit_theta_tau(&taus, TauFamily::Exponential, &TauFamily::Exponential.default_bounds(), &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lognormal_numerical_mle_matches_closed_form() {
        let taus: Vec<f64> = (1..=50).map(|k| (0.37 * k as f64).sin().abs() + 0.2 + 0.01 * k as f64).collect();
        let logs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        let m = logs.iter().sum::<f64>() / 50.0;
        let s = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / 50.0).sqrt();
        let r = fit_theta_tau(&taus, TauFamily::LogNormal, &TauFamily::LogNormal.default_bounds(), &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - m).abs() < 1e-6, "{:?} vs {m}", r.argmax);
        assert!((r.argmax[1] - s).abs() < 1e-6, "{:?} vs {s}", r.argmax);
    }

    #[test]
    fn i12_single_score_is_outer_product() {
        let g = TauFamily::LogNormal.log_density_grad_vec(1.7, &[0.1, 0.8]);
        let i = estimate_i12(&[1.7], TauFamily::LogNormal, &[0.1, 0.8]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(i[(a, b)], g[a] * g[b]);
            }
        }
    }

    #[test]
    fn stage1_recovers_model1_eta() {
        let model = Preset::Model1.model();
        let truth = Preset::Model1.truth();
        let cfg = SimConfig::new(100, 5.0, 1000, 0.001, 2024);
        let (panel, _) = simulate_panel(&model, &truth, &cfg, false).unwrap();
        let est = fit_stage1(&panel, &model, &Stage1Options::default()).unwrap();
        let theory = 2.0 * 6f64.sqrt() / (5.0 * (100.0f64 * 1000.0).sqrt());
        assert!((est.se_eta[0] - theory).abs() < 0.15 * theory, "{:?} vs {theory}", est.se_eta);
        assert!((est.eta_hat[0] - 0.5).abs() < 4.0 * theory, "{:?}", est.eta_hat);
        assert!(est.tau_hat.iter().all(|t| *t > 0.0));
    }

    #[test]
    fn known_diffusion_skips_eta() {
        let model = ModelSpec::builder("ou")
            .random_basis(1, |y, out| out[0] = -y)
            .diffusion(0, |_, _, _| 1.0)
            .tau_family(TauFamily::Exponential)
            .build()
            .unwrap();
        let truth = crate::model::ParamSet::new(vec![], vec![1.0], vec![1.0], DMatrix::from_element(1, 1, 0.2)).unwrap();
        let (panel, _) = simulate_panel(&model, &truth, &SimConfig::new(30, 2.0, 200, 0.01, 8), false).unwrap();
        let est = fit_stage1(&panel, &model, &Stage1Options::default()).unwrap();
        assert!(est.known_diffusion && est.eta_hat.is_empty() && est.eta_optim.is_none());
        let direct: Vec<f64> = (0..30).map(|i| profile_tau(&panel, &model, i, &[]).unwrap()).collect();
        assert_eq!(est.tau_hat, direct);
    }
}
