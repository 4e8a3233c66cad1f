//! Parametric laws for the positive time-scale random effect τ.
//!
//! Parameter conventions (θ vectors are in this order):
//!
//! | family               | θ                         | density                                        |
//! |----------------------|---------------------------|------------------------------------------------|
//! | `LogNormal`          | (α, σ)                    | log τ ~ N(α, σ²)                               |
//! | `Weibull`            | (α shape, λ scale)        | (α/λ)(τ/λ)^{α−1} exp(−(τ/λ)^α)                 |
//! | `Exponential`        | (λ rate)                  | λ exp(−λτ)                                     |
//! | `GeneralizedWeibull` | (γ shape, σ scale, λ loc) | (γ/σ) u^{γ−1} exp(−u^γ), u = (τ−λ)/σ, τ > λ    |
//!
//! The generalized Weibull is the three-parameter (shifted) Weibull and is
//! normalized to integrate to one.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::BoxBounds;

/// Margin below which the shifted Weibull treats τ as outside its support.
const SHIFT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauFamily {
    LogNormal,
    Weibull,
    Exponential,
    GeneralizedWeibull,
}

impl TauFamily {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "lognormal" | "log_normal" => Ok(TauFamily::LogNormal),
            "weibull" => Ok(TauFamily::Weibull),
            "exponential" | "exp" => Ok(TauFamily::Exponential),
            "generalized_weibull" | "gen_weibull" | "shifted_weibull" => {
                Ok(TauFamily::GeneralizedWeibull)
            }
            other => Err(Error::Config(format!("unknown tau family '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TauFamily::LogNormal => "lognormal",
            TauFamily::Weibull => "weibull",
            TauFamily::Exponential => "exponential",
            TauFamily::GeneralizedWeibull => "generalized_weibull",
        }
    }

    /// Number of parameters p_τ.
    pub fn dim(&self) -> usize {
        match self {
            TauFamily::LogNormal | TauFamily::Weibull => 2,
            TauFamily::Exponential => 1,
            TauFamily::GeneralizedWeibull => 3,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            TauFamily::LogNormal => &["alpha", "sigma"],
            TauFamily::Weibull => &["alpha", "lambda"],
            TauFamily::Exponential => &["lambda"],
            TauFamily::GeneralizedWeibull => &["gamma", "sigma", "lambda"],
        }
    }

    pub fn default_bounds(&self) -> BoxBounds {
        match self {
            TauFamily::LogNormal => BoxBounds::new(vec![-20.0, 1e-4], vec![20.0, 20.0]),
            TauFamily::Weibull => BoxBounds::new(vec![0.02, 1e-6], vec![50.0, 1e4]),
            TauFamily::Exponential => BoxBounds::new(vec![1e-6], vec![1e4]),
            TauFamily::GeneralizedWeibull => {
                BoxBounds::new(vec![0.05, 1e-6, 0.0], vec![50.0, 1e4, 1e4])
            }
        }
    }

    /// Whether θ is admissible for the family (positivity of scales etc.).
    pub fn valid_params(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            TauFamily::LogNormal => theta[1] > 0.0,
            TauFamily::Weibull => theta[0] > 0.0 && theta[1] > 0.0,
            TauFamily::Exponential => theta[0] > 0.0,
            TauFamily::GeneralizedWeibull => theta[0] > 0.0 && theta[1] > 0.0,
        }
    }

    /// Natural log of the density; `f64::NEG_INFINITY` outside the support or
    /// for inadmissible parameters.
    pub fn log_density(&self, tau: f64, theta: &[f64]) -> f64 {
        if !self.valid_params(theta) || !(tau > 0.0) || !tau.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self {
            TauFamily::LogNormal => {
                let (alpha, sigma) = (theta[0], theta[1]);
                let z = (tau.ln() - alpha) / sigma;
                -tau.ln() - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
            }
            TauFamily::Weibull => {
                let (k, lambda) = (theta[0], theta[1]);
                let r = tau / lambda;
                k.ln() - lambda.ln() + (k - 1.0) * r.ln() - r.powf(k)
            }
            TauFamily::Exponential => {
                let lambda = theta[0];
                lambda.ln() - lambda * tau
            }
            TauFamily::GeneralizedWeibull => {
                let (g, s, loc) = (theta[0], theta[1], theta[2]);
                if tau <= loc + SHIFT_MARGIN {
                    return f64::NEG_INFINITY;
                }
                let u = (tau - loc) / s;
                g.ln() - s.ln() + (g - 1.0) * u.ln() - u.powf(g)
            }
        }
    }

    /// Gradient of the log-density with respect to θ, written into `out`.
    /// Leaves NaN entries outside the support.
    pub fn log_density_grad(&self, tau: f64, theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        if !self.log_density(tau, theta).is_finite() {
            out.fill(f64::NAN);
            return;
        }
        match self {
            TauFamily::LogNormal => {
                let (alpha, sigma) = (theta[0], theta[1]);
                let d = tau.ln() - alpha;
                out[0] = d / (sigma * sigma);
                out[1] = -1.0 / sigma + d * d / (sigma * sigma * sigma);
            }
            TauFamily::Weibull => {
                let (k, lambda) = (theta[0], theta[1]);
                let r = tau / lambda;
                let lr = r.ln();
                let rk = r.powf(k);
                out[0] = 1.0 / k + lr - rk * lr;
                out[1] = (k / lambda) * (rk - 1.0);
            }
            TauFamily::Exponential => {
                out[0] = 1.0 / theta[0] - tau;
            }
            TauFamily::GeneralizedWeibull => {
                let (g, s, loc) = (theta[0], theta[1], theta[2]);
                let u = (tau - loc) / s;
                let lu = u.ln();
                let ug = u.powf(g);
                out[0] = 1.0 / g + lu - ug * lu;
                out[1] = (g / s) * (ug - 1.0);
                out[2] = (g * ug - (g - 1.0)) / (s * u);
            }
        }
    }

    pub fn log_density_grad_vec(&self, tau: f64, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.log_density_grad(tau, theta, &mut out);
        out
    }

    /// Draw one τ.
    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> f64 {
        match self {
            TauFamily::LogNormal => {
                let z: f64 = StandardNormal.sample(rng);
                (theta[0] + theta[1] * z).exp()
            }
            TauFamily::Weibull => {
                let u = open_unit(rng);
                theta[1] * (-u.ln()).powf(1.0 / theta[0])
            }
            TauFamily::Exponential => {
                let u = open_unit(rng);
                -u.ln() / theta[0]
            }
            TauFamily::GeneralizedWeibull => {
                let u = open_unit(rng);
                theta[2] + theta[1] * (-u.ln()).powf(1.0 / theta[0])
            }
        }
    }

    pub fn mean(&self, theta: &[f64]) -> f64 {
        match self {
            TauFamily::LogNormal => (theta[0] + 0.5 * theta[1] * theta[1]).exp(),
            TauFamily::Weibull => theta[1] * gamma(1.0 + 1.0 / theta[0]),
            TauFamily::Exponential => 1.0 / theta[0],
            TauFamily::GeneralizedWeibull => theta[2] + theta[1] * gamma(1.0 + 1.0 / theta[0]),
        }
    }

    pub fn variance(&self, theta: &[f64]) -> f64 {
        match self {
            TauFamily::LogNormal => {
                let s2 = theta[1] * theta[1];
                (s2.exp() - 1.0) * (2.0 * theta[0] + s2).exp()
            }
            TauFamily::Weibull | TauFamily::GeneralizedWeibull => {
                let (k, scale) = (theta[0], theta[1]);
                let g1 = gamma(1.0 + 1.0 / k);
                scale * scale * (gamma(1.0 + 2.0 / k) - g1 * g1)
            }
            TauFamily::Exponential => 1.0 / (theta[0] * theta[0]),
        }
    }

    /// Moment-based starting value for maximum likelihood on a sample.
    pub fn initial_guess(&self, taus: &[f64]) -> Vec<f64> {
        let n = taus.len().max(1) as f64;
        let mean = taus.iter().sum::<f64>() / n;
        let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-12);
        match self {
            TauFamily::LogNormal => {
                let logs: Vec<f64> = taus.iter().map(|t| t.max(1e-300).ln()).collect();
                let m = logs.iter().sum::<f64>() / n;
                let v = logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / n;
                vec![m, v.sqrt().max(1e-3)]
            }
            TauFamily::Weibull => {
                let (k, scale) = weibull_moments(mean, sd);
                vec![k, scale]
            }
            TauFamily::Exponential => vec![1.0 / mean.max(1e-12)],
            TauFamily::GeneralizedWeibull => {
                let min = taus.iter().cloned().fold(f64::INFINITY, f64::min);
                let loc = (min - 0.25 * sd).max(0.0);
                let (k, scale) = weibull_moments(mean - loc, sd);
                vec![k, scale, loc]
            }
        }
    }
}

/// Shape/scale from mean and sd using the usual power-law approximation
/// for the Weibull coefficient of variation.
fn weibull_moments(mean: f64, sd: f64) -> (f64, f64) {
    let cv = (sd / mean.max(1e-12)).max(1e-3);
    let k = cv.powf(-1.086).clamp(0.1, 40.0);
    let scale = mean.max(1e-12) / gamma(1.0 + 1.0 / k);
    (k, scale)
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_points() -> Vec<(TauFamily, Vec<f64>)> {
        vec![
            (TauFamily::LogNormal, vec![-0.7, 0.7]),
            (TauFamily::LogNormal, vec![0.3, 0.4]),
            (TauFamily::Weibull, vec![1.0, 0.6]),
            (TauFamily::Weibull, vec![2.5, 1.7]),
            (TauFamily::Exponential, vec![1.0]),
            (TauFamily::Exponential, vec![3.0]),
            (TauFamily::GeneralizedWeibull, vec![3.447, 4.592, 3.699]),
            (TauFamily::GeneralizedWeibull, vec![1.5, 0.8, 0.2]),
        ]
    }

    // Composite Simpson on a substituted variable τ = loc + e^s, which handles
    // both the heavy right tail and the behaviour near the lower support edge.
    fn integrate_density(family: TauFamily, theta: &[f64]) -> f64 {
        let loc = if family == TauFamily::GeneralizedWeibull { theta[2] } else { 0.0 };
        let (a, b, m) = (-40.0f64, 8.0f64, 200_000usize);
        let h = (b - a) / m as f64;
        let f = |s: f64| {
            let tau = loc + s.exp();
            (family.log_density(tau, theta)).exp() * s.exp()
        };
        let mut acc = f(a) + f(b);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        for (family, theta) in reference_points() {
            let total = integrate_density(family, &theta);
            assert!((total - 1.0).abs() < 1e-6, "{family:?} {theta:?} integrates to {total}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (family, theta) in reference_points() {
            let taus = [0.3, 0.9, 2.0];
            for &t0 in &taus {
                let tau = if family == TauFamily::GeneralizedWeibull { theta[2] + t0 * theta[1] } else { t0 };
                let grad = family.log_density_grad_vec(tau, &theta);
                for k in 0..theta.len() {
                    let step = 1e-6 * (1.0 + theta[k].abs());
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[k] += step;
                    dn[k] -= step;
                    let fd = (family.log_density(tau, &up) - family.log_density(tau, &dn)) / (2.0 * step);
                    let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
                    assert!(rel < 1e-5, "{family:?} θ={theta:?} τ={tau} k={k}: fd {fd} vs {}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn exponential_at_one() {
        assert!((TauFamily::Exponential.log_density(1.0, &[1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn standard_lognormal_at_one() {
        let v = TauFamily::LogNormal.log_density(1.0, &[0.0, 1.0]);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn generalized_weibull_relates_to_printed_form() {
        // Independent evaluation of the unnormalized printed density
        // γ u^{γ−1} exp(−u^γ); the family carries the extra 1/σ.
        let (g, s, loc) = (3.447f64, 4.592f64, 3.699f64);
        let tau = 8.0f64;
        let u = (tau - loc) / s;
        let printed = g * u.powf(g - 1.0) * (-u.powf(g)).exp();
        let ours = TauFamily::GeneralizedWeibull.log_density(tau, &[g, s, loc]);
        assert!((ours - (printed.ln() - s.ln())).abs() < 1e-12);
        // frozen value of the normalized log-density
        assert!((ours - (-1.244_994_367_173_669_7)).abs() < 1e-9, "{ours}");
    }

    #[test]
    fn outside_support_is_neg_infinity() {
        assert_eq!(TauFamily::Exponential.log_density(-1.0, &[1.0]), f64::NEG_INFINITY);
        assert_eq!(TauFamily::LogNormal.log_density(0.0, &[0.0, 1.0]), f64::NEG_INFINITY);
        let th = [2.0, 1.0, 3.0];
        assert_eq!(TauFamily::GeneralizedWeibull.log_density(3.0, &th), f64::NEG_INFINITY);
        assert_eq!(TauFamily::GeneralizedWeibull.log_density(2.0, &th), f64::NEG_INFINITY);
        assert_eq!(TauFamily::Weibull.log_density(1.0, &[-1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn sampler_means_within_three_se() {
        let draws = 100_000;
        for (idx, (family, theta)) in reference_points().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + idx as u64);
            let xs: Vec<f64> = (0..draws).map(|_| family.sample(&theta, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / draws as f64;
            let se = (family.variance(&theta) / draws as f64).sqrt();
            let target = family.mean(&theta);
            assert!((mean - target).abs() < 3.0 * se, "{family:?}: {mean} vs {target} (se {se})");
        }
    }
}
