//! Box-constrained maximization for small problems.
//!
//! Points outside the box, or where the objective is not finite, are
//! rejected by giving them the value −∞; the objective itself is never
//! clamped or projected.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoxBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    /// Total number of starts: the supplied start plus `starts - 1` jittered ones.
    pub starts: usize,
    /// Restart jitter as a fraction of each box width.
    pub jitter: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_evals: usize,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub fd_scale: f64,
    pub hessian_scale: f64,
    pub polish: bool,
    pub polish_iters: usize,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            starts: 5,
            jitter: 0.1,
            initial_step: 0.05,
            f_tol: 1e-8,
            x_tol: 1e-6,
            max_evals: 20_000,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            fd_scale: 1e-5,
            hessian_scale: 1e-4,
            polish: true,
            polish_iters: 20,
            seed: 0x5eed,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: usize,
    pub evals: usize,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Which start produced the reported optimum (0 = supplied start).
    pub restart_index: usize,
    pub polished: bool,
    /// Best value after each start; never decreasing.
    pub best_by_start: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

struct Counted<'a, F> {
    f: &'a F,
    bounds: &'a BoxBounds,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        if !self.bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() { v } else { f64::NEG_INFINITY }
    }
}

struct NmOutcome {
    x: Vec<f64>,
    value: f64,
    converged: bool,
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    start: &[f64],
    f_start: f64,
    opts: &OptimOptions,
    budget: usize,
    trace: &mut Option<Vec<TraceEntry>>,
    start_index: usize,
) -> NmOutcome {
    let dim = start.len();
    let bounds = obj.bounds;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), f_start));
    for k in 0..dim {
        let step = opts.initial_step * bounds.width(k);
        let mut x = start.to_vec();
        x[k] += step;
        if x[k] > bounds.upper[k] {
            x[k] = start[k] - step;
        }
        let v = obj.eval(&x);
        simplex.push((x, v));
    }
    let limit = obj.evals + budget;
    let mut converged = false;
    loop {
        // stable sort keeps earlier vertices first among ties
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best_val = simplex[0].1;
        let worst_val = simplex[dim].1;
        let best_x = &simplex[0].0;
        let scale = 1.0 + best_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best_x).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let spread = if worst_val.is_finite() { best_val - worst_val } else { f64::INFINITY };
        if diameter <= opts.x_tol * scale && spread <= opts.f_tol * (1.0 + best_val.abs()) {
            converged = true;
            break;
        }
        if obj.evals >= limit {
            break;
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry { start: start_index, evals: obj.evals, best: best_val });
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for k in 0..dim {
                centroid[k] += x[k] / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let second_worst_val = simplex[dim - 1].1;
        let along = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + coef * (c - w)).collect()
        };
        let xr = along(opts.reflection, &worst.0);
        let fr = obj.eval(&xr);
        if fr > best_val {
            let xe: Vec<f64> = centroid.iter().zip(&xr).map(|(c, r)| c + opts.expansion * (r - c)).collect();
            let fe = obj.eval(&xe);
            simplex[dim] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > second_worst_val {
            simplex[dim] = (xr, fr);
            continue;
        }
        if fr > worst.1 {
            let xc: Vec<f64> = centroid.iter().zip(&xr).map(|(c, r)| c + opts.contraction * (r - c)).collect();
            let fc = obj.eval(&xc);
            if fc >= fr {
                simplex[dim] = (xc, fc);
                continue;
            }
        } else {
            let xc: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + opts.contraction * (w - c)).collect();
            let fc = obj.eval(&xc);
            if fc > worst.1 {
                simplex[dim] = (xc, fc);
                continue;
            }
        }
        let anchor = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = anchor.iter().zip(&v.0).map(|(a, x)| a + opts.shrink * (x - a)).collect();
            let f = obj.eval(&x);
            *v = (x, f);
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (x, value) = simplex.swap_remove(0);
    NmOutcome { x, value, converged }
}

/// Maximize `f` over the box, starting from `start`, with jittered
/// restarts and an optional finite-difference Newton polish. Deterministic
/// given `opts.seed`.
pub fn maximize<F>(f: F, start: &[f64], bounds: &BoxBounds, opts: &OptimOptions) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    if start.len() != bounds.dim() {
        return Err(Error::estimation(format!(
            "start has dimension {}, bounds {}",
            start.len(),
            bounds.dim()
        )));
    }
    if !bounds.contains(start) {
        return Err(Error::estimation(format!("start {start:?} outside bounds")));
    }
    let mut obj = Counted { f: &f, bounds, evals: 0 };
    let f0 = obj.eval(start);
    if !f0.is_finite() {
        return Err(Error::Estimation {
            message: "objective is not finite at the start point".into(),
            best_point: Some(start.to_vec()),
            trace: Vec::new(),
        });
    }
    let mut trace = opts.record_trace.then(Vec::new);
    if start.is_empty() {
        return Ok(OptimResult {
            argmax: Vec::new(),
            value: f0,
            n_evals: obj.evals,
            converged: true,
            restart_index: 0,
            polished: false,
            best_by_start: vec![f0],
            trace,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts = opts.starts.max(1);
    let budget = opts.max_evals / starts;
    let mut best = nelder_mead(&mut obj, start, f0, opts, budget, &mut trace, 0);
    let mut best_index = 0;
    let mut best_by_start = vec![best.value];
    for s in 1..starts {
        let mut candidate = None;
        for _ in 0..20 {
            let x: Vec<f64> = start
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let w = opts.jitter * bounds.width(k);
                    (v + rng.random_range(-w..=w)).clamp(bounds.lower[k], bounds.upper[k])
                })
                .collect();
            let fx = obj.eval(&x);
            if fx.is_finite() {
                candidate = Some((x, fx));
                break;
            }
        }
        if let Some((x, fx)) = candidate {
            let out = nelder_mead(&mut obj, &x, fx, opts, budget, &mut trace, s);
            if out.value > best.value {
                best = out;
                best_index = s;
            }
        }
        best_by_start.push(best.value);
    }

    let mut polished = false;
    if opts.polish {
        let (x, v, did) = newton_polish(&mut obj, best.x.clone(), best.value, opts);
        if did {
            best.x = x;
            best.value = v;
            polished = true;
        }
    }
    if let Some(last) = best_by_start.last_mut() {
        *last = last.max(best.value);
    }
    Ok(OptimResult {
        argmax: best.x,
        value: best.value,
        n_evals: obj.evals,
        converged: best.converged,
        restart_index: best_index,
        polished,
        best_by_start,
        trace,
    })
}

fn newton_polish<F: Fn(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    mut x: Vec<f64>,
    mut value: f64,
    opts: &OptimOptions,
) -> (Vec<f64>, f64, bool) {
    let mut improved = false;
    for _ in 0..opts.polish_iters {
        let mut eval = |p: &[f64]| obj.eval(p);
        let Ok(g) = fd_gradient_mut(&mut eval, &x, opts.fd_scale) else { break };
        let Ok(h) = fd_hessian_mut(&mut eval, &x, opts.hessian_scale) else { break };
        let Some(chol) = (-h).cholesky() else { break };
        // Newton step for a maximum: x + (−H)⁻¹ g
        let step = chol.solve(&DVector::from_vec(g));
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let ft = obj.eval(&trial);
            if ft > value {
                let moved = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x = trial;
                let gain = ft - value;
                value = ft;
                accepted = true;
                improved = true;
                if moved <= 1e-12 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                    || gain <= 1e-15 * (1.0 + value.abs())
                {
                    return (x, value, improved);
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, value, improved)
}

fn fd_gradient_mut<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], scale: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = scale * (1.0 + x[k].abs());
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let dn = f(&probe);
        probe[k] = x[k];
        if !up.is_finite() || !dn.is_finite() {
            return Err(Error::numeric(format!("non-finite objective in gradient stencil for coordinate {k}")));
        }
        g[k] = (up - dn) / (2.0 * h);
    }
    Ok(g)
}

fn fd_hessian_mut<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], scale: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|v| scale * (1.0 + v.abs())).collect();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::numeric("non-finite objective at Hessian centre"));
    }
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    let at = |probe: &[f64], k: usize, f: &mut F| -> Result<f64> {
        let v = f(probe);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!("non-finite objective in Hessian stencil for coordinate {k}")))
        }
    };
    for i in 0..n {
        probe[i] = x[i] + steps[i];
        let up = at(&probe, i, f)?;
        probe[i] = x[i] - steps[i];
        let dn = at(&probe, i, f)?;
        probe[i] = x[i];
        hess[(i, i)] = (up - 2.0 * f0 + dn) / (steps[i] * steps[i]);
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64, f: &mut F| -> Result<f64> {
                probe[i] = x[i] + si * steps[i];
                probe[j] = x[j] + sj * steps[j];
                let v = at(&probe, i.max(j), f);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let pp = corner(1.0, 1.0, f)?;
            let pm = corner(1.0, -1.0, f)?;
            let mp = corner(-1.0, 1.0, f)?;
            let mm = corner(-1.0, -1.0, f)?;
            let v = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Central-difference gradient with step `scale·(1+|x_k|)`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], scale: f64) -> Result<Vec<f64>> {
    let mut g = |p: &[f64]| f(p);
    fd_gradient_mut(&mut g, x, scale)
}

/// Central-difference Hessian with step `scale·(1+|x_k|)`; exactly symmetric.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], scale: f64) -> Result<DMatrix<f64>> {
    let mut g = |p: &[f64]| f(p);
    fd_hessian_mut(&mut g, x, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_1d() {
        let b = BoxBounds::new(vec![0.0], vec![10.0]);
        let r = maximize(|x| -(x[0] - 2.0).powi(2), &[7.0], &b, &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - 2.0).abs() < 1e-6, "{:?}", r.argmax);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock() {
        let b = BoxBounds::new(vec![-3.0, -3.0], vec![3.0, 3.0]);
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = maximize(f, &[-1.2, 1.0], &b, &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - 1.0).abs() < 1e-4 && (r.argmax[1] - 1.0).abs() < 1e-4, "{:?}", r.argmax);
    }

    #[test]
    fn constant_surface_stays_at_start() {
        let b = BoxBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let opts = OptimOptions { polish: false, ..Default::default() };
        let r = maximize(|_| 3.0, &[0.25, -0.5], &b, &opts).unwrap();
        assert!(r.converged);
        assert_eq!(r.argmax, vec![0.25, -0.5]);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn deterministic_and_monotone() {
        let b = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let f = |x: &[f64]| (x[0] * 1.3).sin() * (x[1] * 0.7).cos() - 0.01 * (x[0] * x[0] + x[1] * x[1]);
        let opts = OptimOptions { seed: 42, record_trace: true, ..Default::default() };
        let a = maximize(f, &[2.0, 2.0], &b, &opts).unwrap();
        let c = maximize(f, &[2.0, 2.0], &b, &opts).unwrap();
        assert_eq!(a, c);
        assert!(a.best_by_start.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.trace.as_ref().is_some_and(|t| !t.is_empty()));
    }

    #[test]
    fn rejects_non_finite_start() {
        let b = BoxBounds::new(vec![-1.0], vec![1.0]);
        assert!(maximize(|_| f64::NAN, &[0.0], &b, &OptimOptions::default()).is_err());
        assert!(maximize(|x| -x[0] * x[0], &[2.0], &b, &OptimOptions::default()).is_err());
    }

    #[test]
    fn box_is_respected_without_projection() {
        // unconstrained maximum at 3 lies outside the box
        let b = BoxBounds::new(vec![-1.0], vec![1.0]);
        let r = maximize(|x| -(x[0] - 3.0).powi(2), &[0.0], &b, &OptimOptions::default()).unwrap();
        assert!(b.contains(&r.argmax));
        assert!(r.argmax[0] > 0.999);
    }

    #[test]
    fn gradient_of_dot() {
        let x = [0.3, -1.2, 2.5];
        let g = fd_gradient(|p| p.iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-7);
        }
    }

    #[test]
    fn hessian_of_exp_product() {
        let h = fd_hessian(|p| (p[0] * p[1]).exp(), &[0.0, 0.0], 1e-5).unwrap();
        assert!((h[(0, 1)] - 1.0).abs() < 1e-5);
        assert!(h[(0, 0)].abs() < 1e-5 && h[(1, 1)].abs() < 1e-5);
        assert_eq!(h[(0, 1)].to_bits(), h[(1, 0)].to_bits());
    }

    #[test]
    fn stencil_failure_names_coordinate() {
        let err = fd_gradient(|p| if p[1] > 0.5 { f64::NAN } else { p[0] }, &[0.0, 0.5], 1e-3).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
