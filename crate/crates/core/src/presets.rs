//! Named models from the simulation study and the membrane-potential
//! application, with their reference parameter values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxBounds, ModelBounds, ModelSpec, ParamSet};
use crate::tau::TauFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// dY = −τφ/√(1+Y²) dt + √τ exp(ηt/2) dW, τ ~ LogNormal, φ ~ N(μ, ω²).
    Model1,
    /// dY = τ(−φ₁Y/√(1+Y²) − φ₂/√(1+Y²)) dt + √τ exp(η atan Y) dW,
    /// τ ~ Weibull, φ₁ random, φ₂ fixed.
    Model2,
    /// As Model 2 with τ ~ Exp and (φ₁, φ₂) jointly Gaussian.
    Model3,
    /// Y = τ∫(φ₁ + φ₂Y)dt + ∫√(τ(1+ηY²)) dW, τ ~ shifted Weibull.
    Neuronal,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Model1, Preset::Model2, Preset::Model3, Preset::Neuronal];

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "model1" | "m1" => Ok(Preset::Model1),
            "model2" | "m2" => Ok(Preset::Model2),
            "model3" | "m3" => Ok(Preset::Model3),
            "neuronal" | "neuron" => Ok(Preset::Neuronal),
            _ => Err(Error::Config(format!("unknown model preset '{name}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Model1 => "model1",
            Preset::Model2 => "model2",
            Preset::Model3 => "model3",
            Preset::Neuronal => "neuronal",
        }
    }

    pub fn model(&self) -> ModelSpec {
        let built = match self {
            Preset::Model1 => model1(),
            Preset::Model2 => model2(),
            Preset::Model3 => model3(),
            Preset::Neuronal => neuronal(),
        };
        built.expect("preset models are valid by construction")
    }

    /// Reference parameter values used to simulate from the preset.
    pub fn truth(&self) -> ParamSet {
        let p = match self {
            Preset::Model1 => ParamSet::new(vec![0.5], vec![-0.7, 0.7], vec![2.0], DMatrix::from_element(1, 1, 1.0)),
            // μ storage order is (φ_f, μ_r) = (μ₂, μ₁).
            Preset::Model2 => ParamSet::new(vec![0.5], vec![1.0, 0.6], vec![1.0, 2.0], DMatrix::from_element(1, 1, 1.0)),
            Preset::Model3 => ParamSet::new(
                vec![0.5],
                vec![1.0],
                vec![2.0, 1.0],
                DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]),
            ),
            // Drift signs chosen so that simulated paths are mean reverting.
            Preset::Neuronal => ParamSet::new(
                vec![-0.013],
                vec![3.447, 4.592, 3.699],
                vec![5.056, -10.344],
                DMatrix::from_row_slice(2, 2, &[0.098, 0.122, 0.122, 2.322]),
            ),
        };
        p.expect("preset parameters are valid by construction")
    }
}

fn inv_sqrt1p(y: f64) -> f64 {
    1.0 / (1.0 + y * y).sqrt()
}

fn model1() -> Result<ModelSpec> {
    ModelSpec::builder("model1")
        .random_basis(1, |y, out| out[0] = -inv_sqrt1p(y))
        .diffusion(1, |t, _, eta| (0.5 * eta[0] * t).exp())
        .log_s_grad(|t, _, _, out| out[0] = t)
        .tau_family(TauFamily::LogNormal)
        .check_domain(-10.0, 10.0, 10.0)
        .mu_labels(["mu"])
        .sigma_labels(["omega2"])
        .build()
}

fn model2() -> Result<ModelSpec> {
    ModelSpec::builder("model2")
        .fixed_basis(1, |y, out| out[0] = -inv_sqrt1p(y))
        .random_basis(1, |y, out| out[0] = -y * inv_sqrt1p(y))
        .diffusion(1, |_, y, eta| (eta[0] * y.atan()).exp())
        .log_s_grad(|_, y, _, out| out[0] = 2.0 * y.atan())
        .tau_family(TauFamily::Weibull)
        .check_domain(-10.0, 10.0, 10.0)
        .mu_labels(["mu2", "mu1"])
        .sigma_labels(["omega1_2"])
        .build()
}

fn model3() -> Result<ModelSpec> {
    ModelSpec::builder("model3")
        .random_basis(2, |y, out| {
            let s = inv_sqrt1p(y);
            out[0] = -y * s;
            out[1] = -s;
        })
        .diffusion(1, |_, y, eta| (eta[0] * y.atan()).exp())
        .log_s_grad(|_, y, _, out| out[0] = 2.0 * y.atan())
        .tau_family(TauFamily::Exponential)
        .check_domain(-10.0, 10.0, 10.0)
        .mu_labels(["mu1", "mu2"])
        .sigma_labels(["omega1_2", "omega3", "omega2_2"])
        .build()
}

fn neuronal() -> Result<ModelSpec> {
    let family = TauFamily::GeneralizedWeibull;
    let mut bounds = ModelBounds::default_for(1, family, 0, 2);
    bounds.eta = BoxBounds::new(vec![-0.5], vec![2.0]);
    ModelSpec::builder("neuronal")
        .random_basis(2, |y, out| {
            out[0] = 1.0;
            out[1] = y;
        })
        .diffusion(1, |_, y, eta| (1.0 + eta[0] * y * y).sqrt())
        .log_s_grad(|_, y, eta, out| out[0] = y * y / (1.0 + eta[0] * y * y))
        .tau_family(family)
        .bounds(bounds)
        .check_domain(-1.2, 1.2, 1.0)
        .mu_labels(["mu1", "mu2"])
        .sigma_labels(["sigma11", "sigma21", "sigma22"])
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_and_truth_validates() {
        for p in Preset::ALL {
            let m = p.model();
            m.validate_params(&p.truth()).unwrap();
            assert_eq!(Preset::from_name(p.name()).unwrap(), p);
        }
    }

    #[test]
    fn model3_truth_matches_study_values() {
        let t = Preset::Model3.truth();
        assert_eq!(t.sigma_r[(0, 1)], -0.2);
        assert_eq!(t.sigma_r[(1, 1)], 0.5);
        assert_eq!(t.theta_tau, vec![1.0]);
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(Preset::from_name("model9"), Err(Error::Config(_))));
    }
}
