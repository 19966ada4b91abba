//! Per-date maximum-likelihood search in log-parameter space.
//!
//! Hybrid scheme: BFGS ascent on a finite-difference gradient converges to
//! a local maximum, and Metropolis-accepted Laplace kicks on a geometric
//! temperature ladder restart the climb away from it. The chain state is
//! pinned throughout — state labels can be permuted, so the optimizer only
//! has to find *a* labelling that fits. Callers running a filter pin to
//! the cloud's current modal state so the labelling stays consistent from
//! one date to the next; anything else re-breaks the symmetry arbitrarily
//! each day and scrambles the cross-state structure the hedging relies on.
//!
//! Accepted gradient steps never decrease the objective, and the search
//! never returns a point below its initialisation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::calibration::CalibrationTarget;
use crate::model::ThetaVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Gradient steps per climb.
    pub max_gradient_steps: usize,
    /// Initial step length along the normalised gradient.
    pub initial_step: f64,
    /// Central-difference bump in log-parameter space.
    pub fd_bump: f64,
    /// Stop climbing when an accepted step improves by less than this.
    pub tolerance: f64,
    /// Annealing-plus-climb cycles after the first climb.
    pub restarts: usize,
    pub anneal_t0: f64,
    pub anneal_ratio: f64,
    pub anneal_rungs: usize,
    /// Scale of the Laplace kicks proposed while annealing.
    pub anneal_kick: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_gradient_steps: 60,
            initial_step: 0.05,
            fd_bump: 1e-5,
            tolerance: 1e-8,
            restarts: 2,
            anneal_t0: 1.0,
            anneal_ratio: 0.8,
            anneal_rungs: 20,
            anneal_kick: 0.1,
        }
    }
}

fn objective(
    target: &CalibrationTarget,
    values: &DVector<f64>,
    template: &ThetaVector,
    pinned_state: usize,
) -> f64 {
    target.log_likelihood(pinned_state, &template.with_values(values.clone()))
}

fn gradient(
    target: &CalibrationTarget,
    x: &DVector<f64>,
    template: &ThetaVector,
    pinned_state: usize,
    bump: f64,
) -> DVector<f64> {
    let dim = x.len();
    let parts: Vec<f64> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += bump;
            dn[k] -= bump;
            let fu = objective(target, &up, template, pinned_state);
            let fd = objective(target, &dn, template, pinned_state);
            if fu.is_finite() && fd.is_finite() {
                (fu - fd) / (2.0 * bump)
            } else {
                0.0
            }
        })
        .collect();
    DVector::from_vec(parts)
}

/// BFGS ascent from `(x, fx)` with a backtracking line search; returns the
/// improved point. Monotone: every accepted step raises the objective.
fn climb(
    target: &CalibrationTarget,
    mut x: DVector<f64>,
    mut fx: f64,
    template: &ThetaVector,
    pinned_state: usize,
    cfg: &OptimizerConfig,
) -> (DVector<f64>, f64) {
    if !fx.is_finite() {
        return (x, fx);
    }
    let dim = x.len();
    let identity = DMatrix::<f64>::identity(dim, dim);
    let mut h_inv = identity.clone();
    let mut first = true;
    let mut g = gradient(target, &x, template, pinned_state, cfg.fd_bump);
    let mut small_gains = 0;
    for _ in 0..cfg.max_gradient_steps {
        let g_norm = g.norm();
        if g_norm == 0.0 || !g_norm.is_finite() {
            break;
        }
        let mut d = &h_inv * &g;
        if d.dot(&g) <= 0.0 || !d.norm().is_finite() {
            h_inv = identity.clone();
            d = g.clone();
        }
        // cap the very first move at the configured step length
        let mut t = if first {
            cfg.initial_step / d.norm()
        } else {
            1.0
        };
        let slope = d.dot(&g);
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &x + &d * t;
            let fc = objective(target, &cand, template, pinned_state);
            if fc > fx + 1e-4 * t * slope.min(0.0) && fc > fx {
                accepted = Some((cand, fc, t));
                break;
            }
            t *= 0.5;
            if t * d.norm() < 1e-13 {
                break;
            }
        }
        let Some((x_new, f_new, _)) = accepted else {
            break;
        };
        let gain = f_new - fx;
        let g_new = gradient(target, &x_new, template, pinned_state, cfg.fd_bump);
        let s = &x_new - &x;
        // minimisation form of the update: y is the change of -gradient
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if first {
                // scale the initial inverse Hessian to the observed curvature
                h_inv = identity.clone() * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let left = &identity - (&s * y.transpose()) * rho;
            let right = &identity - (&y * s.transpose()) * rho;
            h_inv = &left * h_inv * &right + (&s * s.transpose()) * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if gain < cfg.tolerance {
            // quasi-Newton steps can stay tiny for a few iterations while
            // the curvature estimate builds, then accelerate; only a solid
            // run of negligible gains means convergence
            small_gains += 1;
            if small_gains >= 6 {
                break;
            }
        } else {
            small_gains = 0;
        }
    }
    (x, fx)
}

/// Metropolis walk down a geometric temperature ladder; returns the end
/// point and the best point seen on the way.
fn anneal(
    target: &CalibrationTarget,
    start: &DVector<f64>,
    f_start: f64,
    template: &ThetaVector,
    pinned_state: usize,
    cfg: &OptimizerConfig,
    rng: &mut impl Rng,
) -> (DVector<f64>, f64, DVector<f64>, f64) {
    let mut x = start.clone();
    let mut fx = f_start;
    let mut best = start.clone();
    let mut f_best = f_start;
    let mut temperature = cfg.anneal_t0;
    for _ in 0..cfg.anneal_rungs {
        let mut cand = x.clone();
        for v in cand.iter_mut() {
            // Laplace kick: exponential magnitude, random sign
            let u: f64 = rng.gen::<f64>() - 0.5;
            *v += -cfg.anneal_kick * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
        let fc = objective(target, &cand, template, pinned_state);
        let accept = fc > fx
            || (fc.is_finite() && rng.gen::<f64>() < ((fc - fx) / temperature).exp());
        if accept {
            x = cand;
            fx = fc;
            if fx > f_best {
                best = x.clone();
                f_best = fx;
            }
        }
        temperature *= cfg.anneal_ratio;
    }
    (x, fx, best, f_best)
}

/// Maximises the snapshot log-likelihood over theta with the chain state
/// pinned to `pinned_state`. Returns the best point and its
/// log-likelihood; deterministic given the RNG state.
pub fn mle_search(
    target: &CalibrationTarget,
    theta_init: &ThetaVector,
    pinned_state: usize,
    cfg: &OptimizerConfig,
    rng: &mut impl Rng,
) -> (ThetaVector, f64) {
    let f_init = objective(target, theta_init.values(), theta_init, pinned_state);
    let (mut best, mut f_best) = climb(
        target,
        theta_init.values().clone(),
        f_init,
        theta_init,
        pinned_state,
        cfg,
    );
    for _ in 0..cfg.restarts {
        let (x, fx, anneal_best, f_anneal_best) =
            anneal(target, &best, f_best, theta_init, pinned_state, cfg, rng);
        if f_anneal_best > f_best {
            best = anneal_best;
            f_best = f_anneal_best;
        }
        let (x, fx) = climb(target, x, fx, theta_init, pinned_state, cfg);
        if fx > f_best {
            best = x;
            f_best = fx;
        }
    }
    (theta_init.with_values(best), f_best)
}
