//! Model definition, parameter containers and panel data.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cholesky::{self, tri_len};
use crate::error::{Error, Result};
use crate::tau::TauFamily;

/// Drift basis: writes a(y) into the output slice.
pub type BasisFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
/// Diffusion coefficient c(t, y; η). Time is passed so that time-indexed
/// coefficients can be expressed through state augmentation.
pub type DiffusionFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;
/// Analytic ∂_η log S(t, y; η), written into the output slice.
pub type LogSGradFn = Arc<dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync>;

/// Axis-aligned box. Points outside are rejected by the optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bounds of unequal length");
        BoxBounds { lower, upper }
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        BoxBounds::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..self.dim() {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidModel(format!(
                    "bound {k} must satisfy finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Boxes for every parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub eta: BoxBounds,
    pub theta_tau: BoxBounds,
    pub mu: BoxBounds,
    /// Box on the log-Cholesky coordinates of Σ_r.
    pub sigma_chol: BoxBounds,
}

impl ModelBounds {
    pub fn default_for(p_eta: usize, family: TauFamily, p_fixed: usize, p_random: usize) -> Self {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (r, c) in cholesky::lower_indices(p_random) {
            if r == c {
                lo.push(-12.0);
                hi.push(8.0);
            } else {
                lo.push(-100.0);
                hi.push(100.0);
            }
        }
        ModelBounds {
            eta: BoxBounds::uniform(p_eta, -2.0, 2.0),
            theta_tau: family.default_bounds(),
            mu: BoxBounds::uniform(p_fixed + p_random, -100.0, 100.0),
            sigma_chol: BoxBounds::new(lo, hi),
        }
    }
}

/// A mixed-effects SDE
///
/// dYᵢ = τᵢ (φ_f·a_f(Yᵢ) + φ_{r,i}·a_r(Yᵢ)) dt + √τᵢ c(t, Yᵢ; η) dWᵢ
///
/// with τᵢ drawn from `tau_family` and φ_{r,i} ~ N(μ_r, Σ_r).
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    p_fixed: usize,
    p_random: usize,
    p_eta: usize,
    drift_fixed: BasisFn,
    drift_random: BasisFn,
    diffusion: DiffusionFn,
    log_s_grad: Option<LogSGradFn>,
    tau_family: TauFamily,
    bounds: ModelBounds,
    eta_start: Vec<f64>,
    initial_state: f64,
    check_range: (f64, f64),
    check_horizon: f64,
    eta_labels: Vec<String>,
    mu_labels: Vec<String>,
    sigma_labels: Option<Vec<String>>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("p_fixed", &self.p_fixed)
            .field("p_random", &self.p_random)
            .field("p_eta", &self.p_eta)
            .field("tau_family", &self.tau_family)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>) -> ModelSpecBuilder {
        ModelSpecBuilder::new(name.into())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn p_fixed(&self) -> usize {
        self.p_fixed
    }
    pub fn p_random(&self) -> usize {
        self.p_random
    }
    pub fn p_phi(&self) -> usize {
        self.p_fixed + self.p_random
    }
    pub fn p_eta(&self) -> usize {
        self.p_eta
    }
    pub fn tau_family(&self) -> TauFamily {
        self.tau_family
    }
    pub fn bounds(&self) -> &ModelBounds {
        &self.bounds
    }
    pub fn eta_start(&self) -> &[f64] {
        &self.eta_start
    }
    pub fn initial_state(&self) -> f64 {
        self.initial_state
    }
    pub fn eta_labels(&self) -> &[String] {
        &self.eta_labels
    }
    pub fn mu_labels(&self) -> &[String] {
        &self.mu_labels
    }
    pub fn has_analytic_log_s_grad(&self) -> bool {
        self.log_s_grad.is_some()
    }

    /// True when c does not depend on any unknown parameter.
    pub fn known_diffusion(&self) -> bool {
        self.p_eta == 0
    }

    /// Labels for vech(Σ_r) in column-major lower order.
    pub fn sigma_labels(&self) -> Vec<String> {
        if let Some(labels) = &self.sigma_labels {
            return labels.clone();
        }
        let random = &self.mu_labels[self.p_fixed..];
        cholesky::lower_indices(self.p_random)
            .into_iter()
            .map(|(r, c)| {
                if r == c {
                    format!("var_{}", random[r])
                } else {
                    format!("cov_{}_{}", random[c], random[r])
                }
            })
            .collect()
    }

    pub fn with_initial_state(mut self, y0: f64) -> Self {
        self.initial_state = y0;
        self
    }

    pub fn with_bounds(mut self, bounds: ModelBounds) -> Result<Self> {
        check_bounds_shape(&bounds, self.p_eta, self.tau_family, self.p_phi(), self.p_random)?;
        self.bounds = bounds;
        Ok(self)
    }

    pub fn with_tau_family(mut self, family: TauFamily) -> Self {
        self.tau_family = family;
        self.bounds.theta_tau = family.default_bounds();
        self
    }

    /// c(t, y; η) without validation; hot loops check finiteness themselves.
    #[inline]
    pub fn diffusion_raw(&self, t: f64, y: f64, eta: &[f64]) -> f64 {
        (self.diffusion)(t, y, eta)
    }

    /// S = c² with validation.
    pub fn eval_s(&self, t: f64, y: f64, eta: &[f64]) -> Result<f64> {
        let c = (self.diffusion)(t, y, eta);
        let s = c * c;
        if !s.is_finite() || !(s > 0.0) || !c.is_finite() {
            return Err(Error::ModelEvaluation {
                t,
                y,
                eta: eta.to_vec(),
                reason: format!("squared diffusion {s} is not a positive finite number"),
            });
        }
        Ok(s)
    }

    /// g = ∂_η log S at (t, y; η): analytic hook if supplied, otherwise
    /// central differences with step 1e-5·(1+|η_k|).
    pub fn log_s_grad(&self, t: f64, y: f64, eta: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(g) = &self.log_s_grad {
            g(t, y, eta, out);
            if out.iter().all(|v| v.is_finite()) {
                return Ok(());
            }
            return Err(Error::ModelEvaluation {
                t,
                y,
                eta: eta.to_vec(),
                reason: "non-finite analytic log-S gradient".into(),
            });
        }
        let mut probe = eta.to_vec();
        for k in 0..eta.len() {
            let step = 1e-5 * (1.0 + eta[k].abs());
            probe[k] = eta[k] + step;
            let up = self.eval_s(t, y, &probe)?.ln();
            probe[k] = eta[k] - step;
            let dn = self.eval_s(t, y, &probe)?.ln();
            probe[k] = eta[k];
            out[k] = (up - dn) / (2.0 * step);
        }
        Ok(())
    }

    /// Stacked basis a(y) = (a_f(y), a_r(y)) of length p_φ.
    #[inline]
    pub fn drift_basis(&self, y: f64, out: &mut [f64]) {
        let (f, r) = out.split_at_mut(self.p_fixed);
        if self.p_fixed > 0 {
            (self.drift_fixed)(y, f);
        }
        if self.p_random > 0 {
            (self.drift_random)(y, r);
        }
    }

    /// Check a parameter set against dimensions, SPD-ness and bounds.
    pub fn validate_params(&self, p: &ParamSet) -> Result<()> {
        p.check_shape(self)?;
        let b = &self.bounds;
        if !b.eta.contains(&p.eta) {
            return Err(Error::InvalidParams(format!("eta {:?} outside bounds", p.eta)));
        }
        if !b.theta_tau.contains(&p.theta_tau) || !self.tau_family.valid_params(&p.theta_tau) {
            return Err(Error::InvalidParams(format!(
                "theta_tau {:?} outside bounds",
                p.theta_tau
            )));
        }
        if !b.mu.contains(&p.mu) {
            return Err(Error::InvalidParams(format!("mu {:?} outside bounds", p.mu)));
        }
        let chol = cholesky::to_log_cholesky(&p.sigma_r)?;
        if !b.sigma_chol.contains(&chol) {
            return Err(Error::InvalidParams("sigma_r outside bounds".into()));
        }
        Ok(())
    }
}

fn check_bounds_shape(
    b: &ModelBounds,
    p_eta: usize,
    family: TauFamily,
    p_phi: usize,
    p_random: usize,
) -> Result<()> {
    let checks = [
        ("eta", b.eta.dim(), p_eta),
        ("theta_tau", b.theta_tau.dim(), family.dim()),
        ("mu", b.mu.dim(), p_phi),
        ("sigma_chol", b.sigma_chol.dim(), tri_len(p_random)),
    ];
    for (name, got, want) in checks {
        if got != want {
            return Err(Error::InvalidModel(format!(
                "{name} bounds have dimension {got}, expected {want}"
            )));
        }
    }
    b.eta.validate()?;
    b.theta_tau.validate()?;
    b.mu.validate()?;
    b.sigma_chol.validate()
}

pub struct ModelSpecBuilder {
    name: String,
    p_fixed: usize,
    p_random: usize,
    p_eta: usize,
    drift_fixed: Option<BasisFn>,
    drift_random: Option<BasisFn>,
    diffusion: Option<DiffusionFn>,
    log_s_grad: Option<LogSGradFn>,
    tau_family: TauFamily,
    bounds: Option<ModelBounds>,
    eta_start: Option<Vec<f64>>,
    initial_state: f64,
    check_range: (f64, f64),
    check_horizon: f64,
    eta_labels: Option<Vec<String>>,
    mu_labels: Option<Vec<String>>,
    sigma_labels: Option<Vec<String>>,
}

impl ModelSpecBuilder {
    fn new(name: String) -> Self {
        ModelSpecBuilder {
            name,
            p_fixed: 0,
            p_random: 0,
            p_eta: 0,
            drift_fixed: None,
            drift_random: None,
            diffusion: None,
            log_s_grad: None,
            tau_family: TauFamily::LogNormal,
            bounds: None,
            eta_start: None,
            initial_state: 0.0,
            check_range: (-5.0, 5.0),
            check_horizon: 10.0,
            eta_labels: None,
            mu_labels: None,
            sigma_labels: None,
        }
    }

    pub fn fixed_basis<F>(mut self, dim: usize, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.p_fixed = dim;
        self.drift_fixed = Some(Arc::new(f));
        self
    }

    pub fn random_basis<F>(mut self, dim: usize, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.p_random = dim;
        self.drift_random = Some(Arc::new(f));
        self
    }

    /// c(t, y; η) with `p_eta` unknown parameters (0 for a known coefficient).
    pub fn diffusion<F>(mut self, p_eta: usize, f: F) -> Self
    where
        F: Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.p_eta = p_eta;
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn log_s_grad<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.log_s_grad = Some(Arc::new(f));
        self
    }

    pub fn tau_family(mut self, family: TauFamily) -> Self {
        self.tau_family = family;
        self
    }

    pub fn bounds(mut self, bounds: ModelBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn eta_start(mut self, start: Vec<f64>) -> Self {
        self.eta_start = Some(start);
        self
    }

    pub fn initial_state(mut self, y0: f64) -> Self {
        self.initial_state = y0;
        self
    }

    /// State range and time horizon on which c > 0 is spot-checked.
    pub fn check_domain(mut self, lo: f64, hi: f64, horizon: f64) -> Self {
        self.check_range = (lo, hi);
        self.check_horizon = horizon;
        self
    }

    pub fn eta_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.eta_labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    /// Labels for μ = (φ_f, μ_r) in storage order.
    pub fn mu_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.mu_labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    /// Labels for vech(Σ_r), column-major lower order.
    pub fn sigma_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.sigma_labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let diffusion = self
            .diffusion
            .ok_or_else(|| Error::InvalidModel("diffusion coefficient not set".into()))?;
        let p_phi = self.p_fixed + self.p_random;
        if p_phi == 0 {
            return Err(Error::InvalidModel("drift has no basis functions".into()));
        }
        let noop: BasisFn = Arc::new(|_, _| {});
        let bounds = self.bounds.unwrap_or_else(|| {
            ModelBounds::default_for(self.p_eta, self.tau_family, self.p_fixed, self.p_random)
        });
        check_bounds_shape(&bounds, self.p_eta, self.tau_family, p_phi, self.p_random)?;
        let eta_start = match self.eta_start {
            Some(s) => s,
            None => {
                let zero = vec![0.0; self.p_eta];
                if bounds.eta.contains(&zero) { zero } else { bounds.eta.midpoint() }
            }
        };
        if !bounds.eta.contains(&eta_start) {
            return Err(Error::InvalidModel("eta start outside bounds".into()));
        }
        let eta_labels = self.eta_labels.unwrap_or_else(|| {
            if self.p_eta == 1 {
                vec!["eta".to_string()]
            } else {
                (1..=self.p_eta).map(|k| format!("eta{k}")).collect()
            }
        });
        let mu_labels = self
            .mu_labels
            .unwrap_or_else(|| (1..=p_phi).map(|k| format!("mu{k}")).collect());
        let sigma_ok = self.sigma_labels.as_ref().is_none_or(|l| l.len() == tri_len(self.p_random));
        if eta_labels.len() != self.p_eta || mu_labels.len() != p_phi || !sigma_ok {
            return Err(Error::InvalidModel("label count does not match dimensions".into()));
        }
        let spec = ModelSpec {
            name: self.name,
            p_fixed: self.p_fixed,
            p_random: self.p_random,
            p_eta: self.p_eta,
            drift_fixed: self.drift_fixed.unwrap_or_else(|| noop.clone()),
            drift_random: self.drift_random.unwrap_or(noop),
            diffusion,
            log_s_grad: self.log_s_grad,
            tau_family: self.tau_family,
            bounds,
            eta_start,
            initial_state: self.initial_state,
            check_range: self.check_range,
            check_horizon: self.check_horizon,
            eta_labels,
            mu_labels,
            sigma_labels: self.sigma_labels,
        };
        spec.spot_check()?;
        Ok(spec)
    }
}

impl ModelSpec {
    /// c > 0 and finite drift on a grid of states, times and η at the box
    /// corners and centre.
    fn spot_check(&self) -> Result<()> {
        let (lo, hi) = self.check_range;
        let mut etas = vec![self.bounds.eta.midpoint(), self.eta_start.clone()];
        if self.p_eta <= 4 {
            for mask in 0..(1usize << self.p_eta) {
                etas.push(
                    (0..self.p_eta)
                        .map(|k| {
                            if mask >> k & 1 == 1 { self.bounds.eta.upper[k] } else { self.bounds.eta.lower[k] }
                        })
                        .collect(),
                );
            }
        }
        let mut basis = vec![0.0; self.p_phi()];
        for step in 0..=20 {
            let y = lo + (hi - lo) * step as f64 / 20.0;
            self.drift_basis(y, &mut basis);
            if basis.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("drift basis not finite at y={y}")));
            }
            for t in [0.0, 0.5 * self.check_horizon, self.check_horizon] {
                for eta in &etas {
                    self.eval_s(t, y, eta).map_err(|e| {
                        Error::InvalidModel(format!("diffusion spot check failed: {e}"))
                    })?;
                }
            }
        }
        Ok(())
    }
}

/// ϑ = (η, θ_τ, μ, Σ_r) with μ = (φ_f, μ_r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub eta: Vec<f64>,
    pub theta_tau: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub sigma_r: DMatrix<f64>,
}

impl ParamSet {
    pub fn new(eta: Vec<f64>, theta_tau: Vec<f64>, mu: Vec<f64>, sigma_r: DMatrix<f64>) -> Result<Self> {
        let p = ParamSet { eta, theta_tau, mu, sigma_r };
        if !cholesky::is_spd(&p.sigma_r) {
            return Err(Error::InvalidParams("sigma_r must be symmetric positive definite".into()));
        }
        Ok(p)
    }

    fn check_shape(&self, model: &ModelSpec) -> Result<()> {
        let ok = self.eta.len() == model.p_eta()
            && self.theta_tau.len() == model.tau_family().dim()
            && self.mu.len() == model.p_phi()
            && self.sigma_r.nrows() == model.p_random()
            && self.sigma_r.ncols() == model.p_random();
        if !ok {
            return Err(Error::InvalidParams(format!(
                "parameter dimensions do not match model '{}'",
                model.name()
            )));
        }
        if !cholesky::is_spd(&self.sigma_r) {
            return Err(Error::InvalidParams("sigma_r must be symmetric positive definite".into()));
        }
        Ok(())
    }

    pub fn mu_random(&self, p_fixed: usize) -> &[f64] {
        &self.mu[p_fixed..]
    }

    /// Flat layout (η, θ_τ, μ, log-Cholesky(Σ_r)).
    pub fn pack(&self) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.eta);
        v.extend_from_slice(&self.theta_tau);
        v.extend_from_slice(&self.mu);
        v.extend(cholesky::to_log_cholesky(&self.sigma_r)?);
        Ok(v)
    }

    pub fn unpack(flat: &[f64], p_eta: usize, p_tau: usize, p_phi: usize, p_random: usize) -> Result<Self> {
        let want = p_eta + p_tau + p_phi + tri_len(p_random);
        if flat.len() != want {
            return Err(Error::InvalidParams(format!(
                "flat vector has length {}, expected {want}",
                flat.len()
            )));
        }
        let (eta, rest) = flat.split_at(p_eta);
        let (theta, rest) = rest.split_at(p_tau);
        let (mu, chol) = rest.split_at(p_phi);
        Ok(ParamSet {
            eta: eta.to_vec(),
            theta_tau: theta.to_vec(),
            mu: mu.to_vec(),
            sigma_r: cholesky::from_log_cholesky(chol, p_random),
        })
    }
}

/// N trajectories observed at t_j = t0 + j·h, j = 0..=n.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    values: Vec<f64>,
    n_individuals: usize,
    n_steps: usize,
    h: f64,
    t0: f64,
}

impl PanelData {
    pub fn from_rows(rows: Vec<Vec<f64>>, h: f64) -> Result<Self> {
        Self::from_rows_at(rows, h, 0.0)
    }

    pub fn from_rows_at(rows: Vec<Vec<f64>>, h: f64, t0: f64) -> Result<Self> {
        let n_individuals = rows.len();
        if n_individuals == 0 {
            return Err(Error::data("panel has no individuals"));
        }
        let width = rows[0].len();
        if width < 2 {
            return Err(Error::data("trajectories need at least two observations"));
        }
        let mut values = Vec::with_capacity(n_individuals * width);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::data_at(
                    format!("trajectory has {} points, expected {width}", row.len()),
                    i,
                    None,
                ));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::data_at("non-finite observation", i, Some(j)));
            }
            values.extend(row);
        }
        Self::from_flat(values, n_individuals, width - 1, h, t0)
    }

    pub(crate) fn from_flat(values: Vec<f64>, n_individuals: usize, n_steps: usize, h: f64, t0: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::data(format!("step h must be positive, got {h}")));
        }
        if !t0.is_finite() {
            return Err(Error::data("start time must be finite"));
        }
        debug_assert_eq!(values.len(), n_individuals * (n_steps + 1));
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("panel contains non-finite observations"));
        }
        Ok(PanelData { values, n_individuals, n_steps, h, t0 })
    }

    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }
    /// Number of increments n.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    /// T = n·h.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.h
    }
    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.h
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_steps + 1)
    }

    /// Normalized increments y_ij = h^{-1/2}(Y_ij − Y_{i,j−1}).
    pub fn normalized_increments(&self, i: usize) -> Vec<f64> {
        let scale = self.h.sqrt().recip();
        self.path(i).windows(2).map(|w| (w[1] - w[0]) * scale).collect()
    }

    /// Multiply every observation by `factor`.
    pub fn scaled(&self, factor: f64) -> PanelData {
        PanelData {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Keep only the listed individuals, in the given order.
    pub fn select(&self, individuals: &[usize]) -> Result<PanelData> {
        let mut values = Vec::with_capacity(individuals.len() * (self.n_steps + 1));
        for &i in individuals {
            if i >= self.n_individuals {
                return Err(Error::data(format!("individual {i} out of range")));
            }
            values.extend_from_slice(self.path(i));
        }
        Self::from_flat(values, individuals.len(), self.n_steps, self.h, self.t0)
    }

    /// Every `factor`-th observation (coarser grid with step factor·h).
    pub fn subsample(&self, factor: usize) -> Result<PanelData> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::data(format!(
                "cannot subsample {} steps by a factor of {factor}",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / factor;
        let mut values = Vec::with_capacity(self.n_individuals * (n_steps + 1));
        for row in self.rows() {
            values.extend(row.iter().step_by(factor));
        }
        Self::from_flat(values, self.n_individuals, n_steps, self.h * factor as f64, self.t0)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}
