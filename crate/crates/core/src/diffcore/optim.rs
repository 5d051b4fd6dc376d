//! Scaled conjugate gradient (Møller 1993) for smooth batch objectives and an
//! Adam-style adaptive step for stochastic network updates.

use crate::diffcore::matrix::dot;
use crate::error::{Error, Result};

/// A differentiable objective: returns the loss and its gradient.
pub trait Objective {
    fn evaluate(&mut self, params: &[f64]) -> (f64, Vec<f64>);
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&mut self, params: &[f64]) -> (f64, Vec<f64>) {
        self(params)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScgOptions {
    pub max_iters: usize,
    /// Stop once the gradient norm drops below this value.
    pub grad_tol: f64,
    /// Stop once an accepted step changes neither the loss nor any parameter by
    /// more than this value.
    pub step_tol: f64,
}

impl Default for ScgOptions {
    fn default() -> Self {
        ScgOptions {
            max_iters: 500,
            grad_tol: 1e-6,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScgReport {
    pub params: Vec<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

const SIGMA0: f64 = 1e-4;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e100;

/// Minimizes `objective` from `init` with scaled conjugate gradients.
///
/// Every accepted step lowers (or keeps) the loss, so the returned loss never
/// exceeds the loss at `init`. A trial point with a non-finite loss is treated
/// as a failed step and the trust parameter grows; if it saturates the run is
/// reported as diverged together with the last accepted parameters.
pub fn optimize_scg<O: Objective + ?Sized>(
    objective: &mut O,
    init: &[f64],
    opts: ScgOptions,
) -> Result<ScgReport> {
    let n = init.len();
    let mut x = init.to_vec();
    let (mut f_old, mut grad_new) = objective.evaluate(&x);
    if !f_old.is_finite() || grad_new.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            iterations: 0,
            last_good: x,
        });
    }
    let initial_loss = f_old;
    let report = |x: Vec<f64>, loss: f64, iterations: usize, converged: bool| ScgReport {
        params: x,
        loss,
        initial_loss,
        iterations,
        converged,
    };
    if n == 0 || dot(&grad_new, &grad_new).sqrt() < opts.grad_tol {
        return Ok(report(x, f_old, 0, true));
    }

    let mut grad_old = grad_new.clone();
    let mut d: Vec<f64> = grad_new.iter().map(|g| -g).collect();
    let mut lambda = 1.0;
    let mut success = true;
    let mut n_success = 0usize;
    let (mut mu, mut kappa, mut theta) = (0.0, 0.0, 0.0);

    for iter in 1..=opts.max_iters {
        if success {
            mu = dot(&d, &grad_new);
            if mu >= 0.0 {
                d = grad_new.iter().map(|g| -g).collect();
                mu = dot(&d, &grad_new);
            }
            kappa = dot(&d, &d);
            if kappa < f64::EPSILON * f64::EPSILON {
                return Ok(report(x, f_old, iter, true));
            }
            let sigma = SIGMA0 / kappa.sqrt();
            let x_plus: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + sigma * di).collect();
            let (_, g_plus) = objective.evaluate(&x_plus);
            theta = d
                .iter()
                .zip(g_plus.iter().zip(&grad_new))
                .map(|(di, (gp, gn))| di * (gp - gn))
                .sum::<f64>()
                / sigma;
            if !theta.is_finite() {
                theta = 0.0;
            }
        }

        // Scale the curvature estimate; force it positive if needed.
        let mut delta = theta + lambda * kappa;
        if delta <= 0.0 {
            delta = lambda * kappa;
            lambda -= theta / kappa;
        }
        let alpha = -mu / delta;

        let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
        let (f_new, g_trial) = objective.evaluate(&x_new);
        let trial_ok = f_new.is_finite() && g_trial.iter().all(|g| g.is_finite());
        let comparison = if trial_ok {
            2.0 * (f_new - f_old) / (alpha * mu)
        } else {
            f64::NEG_INFINITY
        };

        if comparison >= 0.0 {
            success = true;
            n_success += 1;
            let max_step = d.iter().map(|di| (alpha * di).abs()).fold(0.0, f64::max);
            let f_change = (f_new - f_old).abs();
            x = x_new;
            let f_prev = f_old;
            f_old = f_new;
            grad_old = std::mem::replace(&mut grad_new, g_trial);
            if max_step < opts.step_tol && f_change < opts.step_tol * f_prev.abs().max(1.0) {
                return Ok(report(x, f_old, iter, true));
            }
            if dot(&grad_new, &grad_new).sqrt() < opts.grad_tol {
                return Ok(report(x, f_old, iter, true));
            }
        } else {
            success = false;
        }

        if comparison < 0.25 {
            lambda = (4.0 * lambda).min(LAMBDA_MAX);
            if lambda >= LAMBDA_MAX {
                return Err(Error::Diverged {
                    iterations: iter,
                    last_good: x,
                });
            }
        }
        if comparison > 0.75 {
            lambda = (0.5 * lambda).max(LAMBDA_MIN);
        }

        if n_success == n {
            d = grad_new.iter().map(|g| -g).collect();
            n_success = 0;
        } else if success {
            let gamma = grad_old
                .iter()
                .zip(&grad_new)
                .map(|(go, gn)| (go - gn) * gn)
                .sum::<f64>()
                / mu;
            d = d
                .iter()
                .zip(&grad_new)
                .map(|(di, gn)| gamma * di - gn)
                .collect();
        }
    }
    Ok(report(x, f_old, opts.max_iters, false))
}

/// First/second-moment adaptive optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one step in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(Error::shape("AdamState::step", self.m.len(), grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("non-finite gradient"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn optimize_adaptive_step(
    mut state: AdamState,
    mut params: Vec<f64>,
    grad: &[f64],
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    state.step(&mut params, grad, lr)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(c: Vec<f64>) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
        move |p: &[f64]| {
            let g: Vec<f64> = p.iter().zip(&c).map(|(pi, ci)| 2.0 * (pi - ci)).collect();
            let f = p.iter().zip(&c).map(|(pi, ci)| (pi - ci).powi(2)).sum();
            (f, g)
        }
    }

    fn rosenbrock(p: &[f64]) -> (f64, Vec<f64>) {
        let (x, y) = (p[0], p[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        let gy = 200.0 * (y - x * x);
        (f, vec![gx, gy])
    }

    #[test]
    fn scg_quadratic_converges() {
        let c = vec![1.0, -2.0, 3.5, 0.25];
        let mut obj = quadratic(c.clone());
        let opts = ScgOptions {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let r = optimize_scg(&mut obj, &[10.0, 10.0, -7.0, 0.0], opts).unwrap();
        for (p, ci) in r.params.iter().zip(&c) {
            assert!((p - ci).abs() < 1e-8, "{p} vs {ci}");
        }
        assert!(r.converged);
    }

    #[test]
    fn scg_stationary_start_is_unchanged() {
        let c = vec![0.5, -0.5];
        let mut obj = quadratic(c.clone());
        let r = optimize_scg(&mut obj, &c, ScgOptions::default()).unwrap();
        assert_eq!(r.params, c);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn scg_rosenbrock() {
        let opts = ScgOptions {
            max_iters: 5000,
            grad_tol: 1e-10,
            step_tol: 1e-16,
        };
        let mut obj = rosenbrock;
        let r = optimize_scg(&mut obj, &[-1.2, 1.0], opts).unwrap();
        assert!(r.loss < 1e-6, "loss {}", r.loss);
        assert!(r.loss <= r.initial_loss);
    }

    #[test]
    fn scg_non_finite_init_is_diverged() {
        let mut obj = |_: &[f64]| (f64::NAN, vec![0.0]);
        match optimize_scg(&mut obj, &[1.0], ScgOptions::default()) {
            Err(Error::Diverged { last_good, .. }) => assert_eq!(last_good, vec![1.0]),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn scg_rejects_non_finite_trials() {
        // Loss is +inf beyond x = 2; the minimum at x = 1.5 is still reached.
        let mut obj = |p: &[f64]| {
            if p[0] > 2.0 {
                (f64::INFINITY, vec![f64::NAN])
            } else {
                ((p[0] - 1.5).powi(2), vec![2.0 * (p[0] - 1.5)])
            }
        };
        let r = optimize_scg(&mut obj, &[-30.0], ScgOptions::default()).unwrap();
        assert!((r.params[0] - 1.5).abs() < 1e-5);
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let (p, _) =
            optimize_adaptive_step(AdamState::new(3), vec![1.0, 2.0, 3.0], &[0.0; 3], 1e-2)
                .unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            state.step(&mut p, &[1.0, -2.0], 1e-2).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_rejects_bad_grad() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        assert!(state.step(&mut p, &[f64::NAN, 0.0], 1e-3).is_err());
        assert!(state.step(&mut p, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn adam_quadratic_bowl_shrinks_after_warmup() {
        let c = [3.0, -1.0];
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let dist = |p: &[f64]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
        let mut dists = Vec::new();
        for _ in 0..1000 {
            let g: Vec<f64> = p.iter().zip(&c).map(|(pi, ci)| 2.0 * (pi - ci)).collect();
            state.step(&mut p, &g, 1e-2).unwrap();
            dists.push(dist(&p));
        }
        // Steps are bounded by lr, so the approach phase is strictly monotone
        // until the iterate is within a few lr of the optimum.
        let warm = 50;
        let approach_end = dists.iter().position(|&d| d < 0.05).unwrap();
        for w in dists[warm..approach_end].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(dists[999] < 0.05);
    }
}
