//! Second stage: marginal Gaussian quasi-likelihood for the drift effects.
//!
//! Each trajectory is summarized by the pair (M̂ᵢ, v̂ᵢ) and enters the
//! objective through b̂ᵢ = M̂ᵢ⁻¹v̂ᵢ ~ N(μ, M̂ᵢ⁻¹ + diag(0, Σ_r)). The fixed
//! block of Σ is never materialized: Σ_r is added into the random-effect
//! block of M̂ᵢ⁻¹ only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cholesky::{from_log_cholesky, lower_indices, symmetrize, to_log_cholesky, tri_len};
use crate::error::{Error, Result};
use crate::model::{BoxBounds, ModelBounds, ModelSpec, PanelData};
use crate::optim::{fd_gradient, fd_hessian, maximize, OptimOptions, OptimResult};
use crate::reduce::{det_sum, det_sum_matrices, det_sum_vectors, map_individuals};
use crate::stage1::{robust_inverse, Stage1Estimate};

/// Pairs with a larger condition number of M̂ᵢ are dropped.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Log-Cholesky diagonal below which Σ̂_r is reported as degenerate when no
/// box is involved.
const DEGENERATE_LOG_DIAG: f64 = -11.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientPair {
    #[serde(with = "crate::serde_matrix")]
    pub m_hat: DMatrix<f64>,
    pub v_hat: Vec<f64>,
    /// M̂ᵢ⁻¹v̂ᵢ; zeros when the pair is flagged.
    pub b_hat: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub m_inv: DMatrix<f64>,
    pub condition: f64,
    pub flagged: bool,
}

impl SufficientPair {
    pub fn new(m_hat: DMatrix<f64>, v_hat: Vec<f64>) -> Result<Self> {
        let p = v_hat.len();
        if m_hat.nrows() != p || m_hat.ncols() != p {
            return Err(Error::InvalidParams(format!("M is {}x{} but v has length {p}", m_hat.nrows(), m_hat.ncols())));
        }
        let mut m_hat = m_hat;
        symmetrize(&mut m_hat);
        let finite = m_hat.iter().chain(v_hat.iter()).all(|v| v.is_finite());
        let condition = if finite {
            let eig = m_hat.clone().symmetric_eigenvalues();
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > 0.0 { max / min } else { f64::INFINITY }
        } else {
            f64::INFINITY
        };
        let inverse = (condition <= CONDITION_LIMIT).then(|| m_hat.clone().cholesky()).flatten();
        match inverse {
            Some(chol) => {
                let m_inv = {
                    let mut inv = chol.inverse();
                    symmetrize(&mut inv);
                    inv
                };
                let b = chol.solve(&DVector::from_column_slice(&v_hat));
                Ok(SufficientPair { b_hat: b.as_slice().to_vec(), m_inv, m_hat, v_hat, condition, flagged: false })
            }
            None => Ok(SufficientPair {
                b_hat: vec![0.0; p],
                m_inv: DMatrix::zeros(p, p),
                m_hat,
                v_hat,
                condition,
                flagged: true,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.v_hat.len()
    }

    /// Build directly from (M̂⁻¹, b̂); handy for synthetic inputs.
    pub fn from_inverse(m_inv: DMatrix<f64>, b_hat: Vec<f64>) -> Result<Self> {
        let m = m_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numeric("M inverse is singular"))?;
        let v = (&m * DVector::from_column_slice(&b_hat)).as_slice().to_vec();
        SufficientPair::new(m, v)
    }
}

/// M̂ᵢ = τ̂ᵢ h Σⱼ Ŝ⁻¹ a a^T and v̂ᵢ = Σⱼ Ŝ⁻¹ a ΔⱼYᵢ with a = (a_f, a_r).
pub fn sufficient_stats(panel: &PanelData, model: &ModelSpec, i: usize, eta: &[f64], tau: f64) -> Result<SufficientPair> {
    if !(tau > 0.0) {
        return Err(Error::Numeric { message: format!("time scale must be positive, got {tau}"), individual: Some(i) });
    }
    let p = model.p_phi();
    let path = panel.path(i);
    let h = panel.h();
    let mut a = vec![0.0; p];
    let mut m = DMatrix::zeros(p, p);
    let mut v = vec![0.0; p];
    for j in 1..=panel.n_steps() {
        let y = path[j - 1];
        let s_inv = model.eval_s(panel.time(j - 1), y, eta)?.recip();
        model.drift_basis(y, &mut a);
        let dy = path[j] - y;
        for r in 0..p {
            v[r] += s_inv * a[r] * dy;
            for c in 0..=r {
                m[(r, c)] += s_inv * a[r] * a[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            m[(c, r)] = m[(r, c)];
        }
    }
    SufficientPair::new(m * (tau * h), v)
}

/// Pairs for every individual, using the stage-one η̂ and τ̂ᵢ.
pub fn all_sufficient_stats(
    panel: &PanelData,
    model: &ModelSpec,
    eta: &[f64],
    taus: &[f64],
    parallel: bool,
) -> Result<Vec<SufficientPair>> {
    if taus.len() != panel.n_individuals() {
        return Err(Error::data(format!("{} time scales for {} individuals", taus.len(), panel.n_individuals())));
    }
    map_individuals(panel.n_individuals(), parallel, |i| sufficient_stats(panel, model, i, eta, taus[i]))
        .into_iter()
        .collect()
}

/// M̂ᵢ⁻¹ + diag(0, Σ_r).
fn marginal_cov(pair: &SufficientPair, sigma_r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = pair.dim();
    let off = p - sigma_r.nrows();
    let mut c = pair.m_inv.clone();
    for r in 0..sigma_r.nrows() {
        for k in 0..sigma_r.ncols() {
            c[(off + r, off + k)] += sigma_r[(r, k)];
        }
    }
    c
}

fn log_normal_density(x: &[f64], mean: &[f64], cov: DMatrix<f64>, individual: usize) -> Result<f64> {
    let p = x.len();
    let chol = cov.cholesky().ok_or_else(|| Error::Numeric {
        message: "marginal covariance is not positive definite".into(),
        individual: Some(individual),
    })?;
    let r = DVector::from_fn(p, |k, _| x[k] - mean[k]);
    let z = chol.l().solve_lower_triangular(&r).expect("triangular factor is invertible");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (p as f64 * LN_2PI + log_det + z.norm_squared()))
}

fn check_shapes(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<()> {
    let p = pairs.first().map_or(mu.len(), |p| p.dim());
    if mu.len() != p || sigma_r.nrows() > p || sigma_r.nrows() != sigma_r.ncols() {
        return Err(Error::InvalidParams(format!(
            "mu has length {} and Sigma_r is {}x{} for {p}-dimensional pairs",
            mu.len(),
            sigma_r.nrows(),
            sigma_r.ncols()
        )));
    }
    Ok(())
}

/// Per-individual terms log φ(b̂ᵢ; μ, M̂ᵢ⁻¹ + diag(0, Σ_r)); `None` for
/// flagged pairs.
pub fn h2_terms(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<Vec<Option<f64>>> {
    check_shapes(pairs, mu, sigma_r)?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            if pair.flagged {
                return Ok(None);
            }
            log_normal_density(&pair.b_hat, mu, marginal_cov(pair, sigma_r), i).map(Some)
        })
        .collect()
}

/// H₂(μ, Σ_r), summed over the usable pairs.
pub fn h2(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<f64> {
    let terms: Vec<f64> = h2_terms(pairs, mu, sigma_r)?.into_iter().flatten().collect();
    Ok(det_sum(&terms))
}

/// ∂_μ H₂ = Σᵢ (M̂ᵢ⁻¹ + Σ)⁻¹ (b̂ᵢ − μ).
pub fn score_mu(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shapes(pairs, mu, sigma_r)?;
    let p = mu.len();
    let terms: Vec<DVector<f64>> = pairs
        .iter()
        .enumerate()
        .filter(|(_, pair)| !pair.flagged)
        .map(|(i, pair)| {
            let chol = marginal_cov(pair, sigma_r).cholesky().ok_or_else(|| Error::Numeric {
                message: "marginal covariance is not positive definite".into(),
                individual: Some(i),
            })?;
            Ok(chol.solve(&DVector::from_fn(p, |k, _| pair.b_hat[k] - mu[k])))
        })
        .collect::<Result<_>>()?;
    Ok(det_sum_vectors(&terms, p).as_slice().to_vec())
}

/// argmax_μ H₂(μ, Σ_r) for fixed Σ_r: the GLS mean
/// (Σᵢ Cᵢ⁻¹)⁻¹ Σᵢ Cᵢ⁻¹ b̂ᵢ with Cᵢ = M̂ᵢ⁻¹ + diag(0, Σ_r).
pub fn mu_given_sigma(pairs: &[SufficientPair], sigma_r: &DMatrix<f64>) -> Result<Vec<f64>> {
    weighted_mean(pairs, |pair| marginal_cov(pair, sigma_r))
}

/// μ̂₀(I) = (Σᵢ (M̂ᵢ⁻¹ + I)⁻¹)⁻¹ Σᵢ (M̂ᵢ⁻¹ + I)⁻¹ M̂ᵢ⁻¹ v̂ᵢ.
pub fn mu0_explicit(pairs: &[SufficientPair]) -> Result<Vec<f64>> {
    weighted_mean(pairs, |pair| &pair.m_inv + DMatrix::identity(pair.dim(), pair.dim()))
}

fn weighted_mean(pairs: &[SufficientPair], cov: impl Fn(&SufficientPair) -> DMatrix<f64>) -> Result<Vec<f64>> {
    let usable: Vec<&SufficientPair> = pairs.iter().filter(|p| !p.flagged).collect();
    let p = usable.first().map(|p| p.dim()).ok_or_else(|| Error::estimation("no usable individuals"))?;
    let mut weights = Vec::with_capacity(usable.len());
    let mut weighted = Vec::with_capacity(usable.len());
    for pair in &usable {
        let w = cov(pair)
            .cholesky()
            .ok_or_else(|| Error::numeric("weight matrix is not positive definite"))?
            .inverse();
        weighted.push(&w * DVector::from_column_slice(&pair.b_hat));
        weights.push(w);
    }
    let total = det_sum_matrices(&weights, p, p);
    let rhs = det_sum_vectors(&weighted, p);
    let solved = total
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::numeric("sum of weight matrices is singular"))?;
    Ok(solved.as_slice().to_vec())
}

/// Value, gradient and Hessian of one term in ϑ₂ = (μ, vech Σ_r).
fn term_derivatives(pair: &SufficientPair, mu: &[f64], sigma_r: &DMatrix<f64>, individual: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = mu.len();
    let pr = sigma_r.nrows();
    let off = p - pr;
    let q = p + tri_len(pr);
    let chol = marginal_cov(pair, sigma_r).cholesky().ok_or_else(|| Error::Numeric {
        message: "marginal covariance is not positive definite".into(),
        individual: Some(individual),
    })?;
    let ci = chol.inverse();
    let w = &ci * DVector::from_fn(p, |k, _| pair.b_hat[k] - mu[k]);
    let units: Vec<DMatrix<f64>> = lower_indices(pr)
        .into_iter()
        .map(|(r, c)| {
            let mut e = DMatrix::zeros(p, p);
            e[(off + r, off + c)] = 1.0;
            e[(off + c, off + r)] = 1.0;
            e
        })
        .collect();
    let mut grad = DVector::zeros(q);
    let mut hess = DMatrix::zeros(q, q);
    for k in 0..p {
        grad[k] = w[k];
        for l in 0..p {
            hess[(k, l)] = -ci[(k, l)];
        }
    }
    let ci_e: Vec<DMatrix<f64>> = units.iter().map(|e| &ci * e).collect();
    for (a, e) in units.iter().enumerate() {
        grad[p + a] = 0.5 * ((w.transpose() * e * &w)[(0, 0)] - ci_e[a].trace());
        let cross = -(&ci_e[a] * &w);
        for k in 0..p {
            hess[(k, p + a)] = cross[k];
            hess[(p + a, k)] = cross[k];
        }
        for (b, f) in units.iter().enumerate() {
            let v = -(w.transpose() * e * &ci * f * &w)[(0, 0)] + 0.5 * (&ci_e[b] * &ci_e[a]).trace();
            hess[(p + a, p + b)] = v;
        }
    }
    symmetrize(&mut hess);
    Ok((grad, hess))
}

/// Analytic gradient of H₂ in (μ, vech Σ_r).
pub fn gradient(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shapes(pairs, mu, sigma_r)?;
    let q = mu.len() + tri_len(sigma_r.nrows());
    let grads: Vec<DVector<f64>> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.flagged)
        .map(|(i, pair)| term_derivatives(pair, mu, sigma_r, i).map(|(g, _)| g))
        .collect::<Result<_>>()?;
    Ok(det_sum_vectors(&grads, q).as_slice().to_vec())
}

/// Sandwich estimate H⁻¹ S H⁻¹ of the asymptotic covariance of
/// √N(ϑ̂₂ − ϑ₂), with H = −N⁻¹ ∂²H₂ and S the mean score outer product,
/// in (μ, vech Σ_r) coordinates.
pub fn estimate_cov2(pairs: &[SufficientPair], mu: &[f64], sigma_r: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    check_shapes(pairs, mu, sigma_r)?;
    let q = mu.len() + tri_len(sigma_r.nrows());
    let mut hessians = Vec::new();
    let mut outers = Vec::new();
    for (i, pair) in pairs.iter().enumerate().filter(|(_, p)| !p.flagged) {
        let (g, h) = term_derivatives(pair, mu, sigma_r, i)?;
        outers.push(&g * g.transpose());
        hessians.push(h);
    }
    let n = hessians.len() as f64;
    if n == 0.0 {
        return Err(Error::estimation("no usable individuals"));
    }
    let mut h = -det_sum_matrices(&hessians, q, q) / n;
    let s = det_sum_matrices(&outers, q, q) / n;
    symmetrize(&mut h);
    let (h_inv, singular) = robust_inverse(&h);
    let mut cov = &h_inv * s * &h_inv;
    symmetrize(&mut cov);
    Ok((cov, singular))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Method {
    /// Numerical maximization of H₂ over (μ, Σ_r).
    #[default]
    Full,
    /// μ̂₀(I), then Σ̂₀ = argmax H₂(μ̂₀, ·), then one Newton–Raphson step.
    OneStep,
}

impl Stage2Method {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Stage2Method::Full),
            "one_step" | "one-step" => Ok(Stage2Method::OneStep),
            other => Err(Error::Config(format!("unknown stage-2 method '{other}' (expected full or one_step)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Options {
    pub optim: OptimOptions,
    pub method: Stage2Method,
    pub parallel: bool,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options { optim: OptimOptions::default(), method: Stage2Method::Full, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Estimate {
    pub mu_hat: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub sigma_r_hat: DMatrix<f64>,
    /// Estimated asymptotic covariance of √N(ϑ̂₂ − ϑ₂), ϑ₂ = (μ, vech Σ_r).
    #[serde(with = "crate::serde_matrix")]
    pub cov_hat: DMatrix<f64>,
    /// √diag(cov_hat / N).
    pub se: Vec<f64>,
    pub h2_value: f64,
    pub method: Stage2Method,
    pub pairs: Vec<SufficientPair>,
    /// Individuals whose M̂ᵢ was too ill-conditioned to use.
    pub dropped: Vec<usize>,
    /// Some Σ̂_r direction sits at the lower box edge.
    pub sigma_boundary: bool,
    pub optim: Option<OptimResult>,
    pub warnings: Vec<String>,
}

impl Stage2Estimate {
    pub fn n_used(&self) -> usize {
        self.pairs.len() - self.dropped.len()
    }
}

fn at_lower_edge(chol: &[f64], bounds: &BoxBounds, p_r: usize) -> bool {
    lower_indices(p_r)
        .into_iter()
        .enumerate()
        .any(|(k, (r, c))| r == c && chol[k] < bounds.lower[k] + 1.0)
}

fn usable_count(pairs: &[SufficientPair]) -> usize {
    pairs.iter().filter(|p| !p.flagged).count()
}

/// Moment start for Σ_r: sample covariance of the random block of b̂ᵢ minus
/// the mean random block of M̂ᵢ⁻¹, with eigenvalues floored.
pub fn moment_sigma(pairs: &[SufficientPair], p_fixed: usize, centre: Option<&[f64]>) -> DMatrix<f64> {
    let usable: Vec<&SufficientPair> = pairs.iter().filter(|p| !p.flagged).collect();
    let p = usable.first().map_or(p_fixed, |p| p.dim());
    let pr = p - p_fixed;
    let n = usable.len().max(2) as f64;
    let mean: Vec<f64> = match centre {
        Some(c) => c[p_fixed..].to_vec(),
        None => (0..pr)
            .map(|k| det_sum(&usable.iter().map(|u| u.b_hat[p_fixed + k]).collect::<Vec<_>>()) / usable.len().max(1) as f64)
            .collect(),
    };
    let outers: Vec<DMatrix<f64>> = usable
        .iter()
        .map(|u| {
            let d = DVector::from_fn(pr, |k, _| u.b_hat[p_fixed + k] - mean[k]);
            &d * d.transpose()
        })
        .collect();
    let blocks: Vec<DMatrix<f64>> = usable.iter().map(|u| u.m_inv.view((p_fixed, p_fixed), (pr, pr)).into_owned()).collect();
    let cov = det_sum_matrices(&outers, pr, pr) / (n - 1.0);
    let noise = det_sum_matrices(&blocks, pr, pr) / n;
    let mut s = &cov - noise;
    symmetrize(&mut s);
    let floor = 0.05 * cov.diagonal().iter().cloned().fold(0.0, f64::max) + 1e-8;
    let eig = s.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

fn clamp_into(x: &mut [f64], bounds: &BoxBounds) {
    for (k, v) in x.iter_mut().enumerate() {
        let margin = 1e-6 * bounds.width(k);
        *v = v.clamp(bounds.lower[k] + margin, bounds.upper[k] - margin);
    }
}

/// argmax over Σ_r (log-Cholesky) of `objective(Σ_r)`.
fn maximize_sigma(
    objective: impl Fn(&DMatrix<f64>) -> f64,
    start: &DMatrix<f64>,
    bounds: &BoxBounds,
    opts: &OptimOptions,
) -> Result<OptimResult> {
    let pr = start.nrows();
    let mut x0 = to_log_cholesky(start)?;
    clamp_into(&mut x0, bounds);
    maximize(|l| objective(&from_log_cholesky(l, pr)), &x0, bounds, opts)
}

fn finish(
    pairs: Vec<SufficientPair>,
    mu_hat: Vec<f64>,
    sigma_r_hat: DMatrix<f64>,
    method: Stage2Method,
    optim: Option<OptimResult>,
    sigma_boundary: bool,
    mut warnings: Vec<String>,
) -> Result<Stage2Estimate> {
    let dropped: Vec<usize> = pairs.iter().enumerate().filter(|(_, p)| p.flagged).map(|(i, _)| i).collect();
    let h2_value = h2(&pairs, &mu_hat, &sigma_r_hat)?;
    let (cov_hat, singular) = estimate_cov2(&pairs, &mu_hat, &sigma_r_hat)?;
    if singular {
        warnings.push("stage-2 information matrix is singular (pseudo-inverse used)".into());
    }
    if sigma_boundary {
        warnings.push("Sigma_r estimate is at the boundary; its standard errors are not reliable".into());
    }
    let n = usable_count(&pairs) as f64;
    let se = (0..cov_hat.nrows()).map(|k| (cov_hat[(k, k)] / n).max(0.0).sqrt()).collect();
    Ok(Stage2Estimate { mu_hat, sigma_r_hat, cov_hat, se, h2_value, method, pairs, dropped, sigma_boundary, optim, warnings })
}

fn require_usable(pairs: &[SufficientPair]) -> Result<()> {
    let dropped = pairs.len() - usable_count(pairs);
    if dropped > 0 {
        log::warn!("dropping {dropped} individual(s) with ill-conditioned M (condition number > {CONDITION_LIMIT:e})");
    }
    if usable_count(pairs) < 2 {
        return Err(Error::estimation(format!("need at least 2 usable individuals, have {}", usable_count(pairs))));
    }
    Ok(())
}

/// Maximizes H₂ over (μ, Σ_r). For each candidate Σ_r the maximizing μ is
/// available in closed form, so the search runs over log-Cholesky(Σ_r) only
/// and μ̂ = μ̂(Σ̂_r).
pub fn fit_drift(pairs: Vec<SufficientPair>, p_fixed: usize, bounds: &ModelBounds, opts: &OptimOptions) -> Result<Stage2Estimate> {
    require_usable(&pairs)?;
    let p = pairs[0].dim();
    let pr = p - p_fixed;
    let mu_box = &bounds.mu;
    let profiled = |sigma: &DMatrix<f64>| -> f64 {
        let Ok(mu) = mu_given_sigma(&pairs, sigma) else { return f64::NEG_INFINITY };
        if !mu_box.contains(&mu) {
            return f64::NEG_INFINITY;
        }
        h2(&pairs, &mu, sigma).unwrap_or(f64::NEG_INFINITY)
    };
    if pr == 0 {
        let sigma = DMatrix::zeros(0, 0);
        let mu = mu_given_sigma(&pairs, &sigma)?;
        return finish(pairs, mu, sigma, Stage2Method::Full, None, false, Vec::new());
    }
    let mu0 = mu0_explicit(&pairs)?;
    let start = moment_sigma(&pairs, p_fixed, Some(&mu0));
    let result = maximize_sigma(profiled, &start, &bounds.sigma_chol, opts)?;
    let sigma = from_log_cholesky(&result.argmax, pr);
    let mu = mu_given_sigma(&pairs, &sigma)?;
    let boundary = at_lower_edge(&result.argmax, &bounds.sigma_chol, pr);
    let mut warnings = Vec::new();
    if !result.converged {
        warnings.push("stage-2 optimizer did not meet its tolerance".into());
    }
    finish(pairs, mu, sigma, Stage2Method::Full, Some(result), boundary, warnings)
}

/// H₂ in the unconstrained coordinates (μ, log-Cholesky Σ_r).
fn h2_unconstrained(pairs: &[SufficientPair], x: &[f64], p_phi: usize, p_r: usize) -> f64 {
    let sigma = from_log_cholesky(&x[p_phi..], p_r);
    h2(pairs, &x[..p_phi], &sigma).unwrap_or(f64::NEG_INFINITY)
}

/// One Newton–Raphson step on H₂ from `(mu, sigma_r)` in (μ, log-Cholesky)
/// coordinates with central finite-difference derivatives. A singular
/// Hessian leaves the start unchanged (with a warning).
pub fn one_step_refine(
    pairs: Vec<SufficientPair>,
    mu: &[f64],
    sigma_r: &DMatrix<f64>,
    opts: &OptimOptions,
) -> Result<Stage2Estimate> {
    require_usable(&pairs)?;
    let p_phi = pairs[0].dim();
    let mut x0 = mu.to_vec();
    x0.extend(to_log_cholesky(sigma_r)?);
    let pr = sigma_r.nrows();
    let f = |x: &[f64]| h2_unconstrained(&pairs, x, p_phi, pr);
    let g = DVector::from_vec(fd_gradient(f, &x0, opts.fd_scale)?);
    let h = fd_hessian(f, &x0, opts.hessian_scale)?;
    let mut warnings = Vec::new();
    let x1 = match h.clone().lu().solve(&g).filter(|s| s.iter().all(|v| v.is_finite())) {
        Some(step) => {
            let x1: Vec<f64> = x0.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
            if f(&x1).is_finite() {
                x1
            } else {
                warnings.push("Newton step left the domain; start kept".into());
                x0.clone()
            }
        }
        None => {
            warnings.push("Hessian of H2 is singular at the start; start kept".into());
            x0.clone()
        }
    };
    let sigma = from_log_cholesky(&x1[p_phi..], pr);
    let boundary = lower_indices(pr)
        .into_iter()
        .enumerate()
        .any(|(k, (r, c))| r == c && x1[p_phi + k] < DEGENERATE_LOG_DIAG);
    finish(pairs, x1[..p_phi].to_vec(), sigma, Stage2Method::OneStep, None, boundary, warnings)
}

/// μ̂₀(I), then Σ̂₀ = argmax H₂(μ̂₀, ·), then [`one_step_refine`].
pub fn fit_one_step(pairs: Vec<SufficientPair>, p_fixed: usize, bounds: &ModelBounds, opts: &OptimOptions) -> Result<Stage2Estimate> {
    require_usable(&pairs)?;
    let mu0 = mu0_explicit(&pairs)?;
    let pr = pairs[0].dim() - p_fixed;
    if pr == 0 {
        return one_step_refine(pairs, &mu0, &DMatrix::zeros(0, 0), opts);
    }
    let start = moment_sigma(&pairs, p_fixed, Some(&mu0));
    let result = maximize_sigma(|s| h2(&pairs, &mu0, s).unwrap_or(f64::NEG_INFINITY), &start, &bounds.sigma_chol, opts)?;
    let sigma0 = from_log_cholesky(&result.argmax, pr);
    let mut est = one_step_refine(pairs, &mu0, &sigma0, opts)?;
    est.optim = Some(result);
    Ok(est)
}

/// Σ_r maximizing Σᵢ log φ(b̂ᵢ − b̄; 0, M̂ᵢ⁻¹ + diag(0, Σ_r)), where b̄ is the
/// plain average of b̂ᵢ. The flag reports a boundary (degenerate) solution.
pub fn fit_sigma_centered(pairs: &[SufficientPair], p_fixed: usize, bounds: &ModelBounds, opts: &OptimOptions) -> Result<(DMatrix<f64>, bool)> {
    require_usable(pairs)?;
    let p = pairs[0].dim();
    let pr = p - p_fixed;
    let usable: Vec<&SufficientPair> = pairs.iter().filter(|p| !p.flagged).collect();
    let mean: Vec<f64> = (0..p)
        .map(|k| det_sum(&usable.iter().map(|u| u.b_hat[k]).collect::<Vec<_>>()) / usable.len() as f64)
        .collect();
    let centered: Vec<SufficientPair> = pairs
        .iter()
        .map(|pair| {
            let mut c = pair.clone();
            if !c.flagged {
                for k in 0..p {
                    c.b_hat[k] -= mean[k];
                }
            }
            c
        })
        .collect();
    let zero = vec![0.0; p];
    let start = moment_sigma(&centered, p_fixed, Some(&zero));
    let result = maximize_sigma(|s| h2(&centered, &zero, s).unwrap_or(f64::NEG_INFINITY), &start, &bounds.sigma_chol, opts)?;
    Ok((from_log_cholesky(&result.argmax, pr), at_lower_edge(&result.argmax, &bounds.sigma_chol, pr)))
}

/// Full second stage from the first-stage output.
pub fn fit_stage2(panel: &PanelData, model: &ModelSpec, stage1: &Stage1Estimate, opts: &Stage2Options) -> Result<Stage2Estimate> {
    let pairs = all_sufficient_stats(panel, model, &stage1.eta_hat, &stage1.tau_hat, opts.parallel)?;
    match opts.method {
        Stage2Method::Full => fit_drift(pairs, model.p_fixed(), model.bounds(), &opts.optim),
        Stage2Method::OneStep => fit_one_step(pairs, model.p_fixed(), model.bounds(), &opts.optim),
    }
}
