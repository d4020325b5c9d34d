//! Moreau envelope values and gradients.
//!
//! For a step `a > 0` the envelope of the scaled function and its gradient are
//!
//! ```text
//! env(a f)(x) = min_y { a f(x + y) + |y|^2 / 2 }
//! grad env(a f)(x) = -y*   where   y* attains the min.
//! ```
//!
//! Note the scaling convention: the step is part of the oracle,
//! `a grad env_a(f)(x) = grad env(a f)(x)` and `env_a(f)(x) = env(a f)(x) / a`.
//!
//! Subproblems are solved in closed form for recognized kinds (quadratics,
//! linear forms, scaled squared distances, coordinatewise absolute value) and
//! otherwise by the configured iterative inner solver.

mod dual;
mod solver;

pub use dual::{dual_prox_gradient, one_step_dual, DualChainRule};
pub use solver::{gradient_descent, minimize, quasi_newton_2step, SolveOutcome};

use crate::chain::{Objective, QuadForm};
use crate::error::{Error, Result};
use crate::numerics::{Differentiable, FnOracle, Vector};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Solver configuration
// ---------------------------------------------------------------------------

/// Iterative scheme used for envelope subproblems without a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Goldstein line-searched gradient descent, run to `grad_tol`.
    GradientDescent,
    /// One Goldstein step then one Barzilai-Borwein step.
    QuasiNewton2Step,
    /// Closed form when the subproblem is recognized, gradient descent otherwise.
    ClosedFormIfAvailable,
}

/// Specification of the algorithm approximating the argmin subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverConfig {
    pub method: SolverMethod,
    pub max_iters: usize,
    /// Base gradient tolerance; scaled by `max(1, |anchor|)` at call sites.
    pub grad_tol: f64,
    /// Goldstein constant, in (0, 0.5).
    pub goldstein_c: f64,
    pub backtrack: f64,
    pub expand: f64,
    pub initial_step: f64,
    /// Solve structurally quadratic subproblems exactly instead of iterating.
    pub allow_closed_form: bool,
}

impl InnerSolverConfig {
    /// Tolerance-driven preset for test-oracle paths.
    pub fn theory() -> Self {
        InnerSolverConfig {
            method: SolverMethod::GradientDescent,
            max_iters: 50_000,
            grad_tol: 1e-9,
            goldstein_c: 0.1,
            backtrack: 0.5,
            expand: 2.0,
            initial_step: 1.0,
            allow_closed_form: true,
        }
    }

    /// Two-step quasi-Newton preset for training paths.
    pub fn practice() -> Self {
        InnerSolverConfig {
            method: SolverMethod::QuasiNewton2Step,
            max_iters: 2,
            grad_tol: 0.0,
            goldstein_c: 0.1,
            backtrack: 0.5,
            expand: 2.0,
            initial_step: 1.0,
            allow_closed_form: true,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn without_closed_form(mut self) -> Self {
        self.allow_closed_form = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("solver max_iters must be >= 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Config("solver grad_tol must be >= 0".into()));
        }
        if !(self.goldstein_c > 0.0 && self.goldstein_c < 0.5) {
            return Err(Error::Config("Goldstein constant must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Envelope results
// ---------------------------------------------------------------------------

/// Result of a Moreau gradient computation for `env(a f)(x)`.
#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    /// `y*`, the attaining deviation.
    pub minimizer: Vector,
    /// `-y*`, the Moreau gradient `grad env(a f)(x)`.
    pub moreau_gradient: Vector,
    /// `env(a f)(x) = a f(x + y*) + |y*|^2 / 2`.
    pub envelope_value: f64,
    pub iterations: usize,
    /// Gradient norm of the subproblem at `y*` (0 for closed forms).
    pub residual: f64,
}

impl EnvelopeResult {
    fn from_minimizer(y: Vector, envelope_value: f64, iterations: usize, residual: f64) -> Self {
        EnvelopeResult {
            moreau_gradient: y.scale(-1.0),
            minimizer: y,
            envelope_value,
            iterations,
            residual,
        }
    }

    /// `env_a(f)(x) = env(a f)(x) / a`.
    pub fn envelope_alpha(&self, alpha: f64) -> f64 {
        self.envelope_value / alpha
    }
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Function kinds with a closed-form proximal operator.
#[derive(Debug, Clone)]
pub enum ProxKind {
    /// `f(x) = x'Qx/2 + b'x + c`.
    Quadratic(QuadForm),
    /// `f(x) = slope . x`.
    LinearForm(Vector),
    /// `f(x) = (weight/2) |x - center|^2`.
    SquaredDistance { center: Vector, weight: f64 },
    /// `f(x) = sum_i |x_i|`.
    AbsValue,
}

impl ProxKind {
    fn of(objective: &Objective) -> Option<ProxKind> {
        match objective {
            Objective::LinearForm { slope } => Some(ProxKind::LinearForm(slope.clone())),
            Objective::SquaredLoss { target, weight } => Some(ProxKind::SquaredDistance {
                center: target.clone(),
                weight: *weight,
            }),
            other => other.quadratic_form().map(ProxKind::Quadratic),
        }
    }
}

/// Exact `grad env(a f)(x)` for recognized kinds.
///
/// Errors with [`Error::NotClosedForm`] on unrecognized kinds; callers fall
/// back to the iterative path.
pub fn closed_form_prox(kind: &ProxKind, x: &Vector, alpha: f64) -> Result<EnvelopeResult> {
    assert!(alpha >= 0.0, "alpha must be nonnegative");
    if alpha == 0.0 {
        return Ok(EnvelopeResult::from_minimizer(Vector::zeros(x.dim()), 0.0, 0, 0.0));
    }
    match kind {
        ProxKind::Quadratic(qf) => {
            // (I + aQ) y = -a (Qx + b), solved as (1/a I + Q) y = -grad f(x).
            let grad = qf.gradient(x);
            let y = qf.shifted_solve(1.0 / alpha, &grad.scale(-1.0))?;
            let value = alpha * qf.value(&x.add(&y)) + 0.5 * y.dot(&y);
            Ok(EnvelopeResult::from_minimizer(y, value, 0, 0.0))
        }
        ProxKind::LinearForm(slope) => {
            let y = slope.scale(-alpha);
            let value = alpha * slope.dot(&x.add(&y)) + 0.5 * y.dot(&y);
            Ok(EnvelopeResult::from_minimizer(y, value, 0, 0.0))
        }
        ProxKind::SquaredDistance { center, weight } => {
            let scale = -alpha * weight / (1.0 + alpha * weight);
            let y = x.sub(center).scale(scale);
            let d = x.add(&y).sub(center);
            let value = 0.5 * alpha * weight * d.dot(&d) + 0.5 * y.dot(&y);
            Ok(EnvelopeResult::from_minimizer(y, value, 0, 0.0))
        }
        ProxKind::AbsValue => {
            // soft threshold per coordinate
            let y = Vector::from_fn(x.dim(), |i| -x[i].signum() * alpha.min(x[i].abs()));
            let z = x.add(&y);
            let value = alpha * z.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * y.dot(&y);
            Ok(EnvelopeResult::from_minimizer(y, value, 0, 0.0))
        }
    }
}

// ---------------------------------------------------------------------------
// Moreau gradient
// ---------------------------------------------------------------------------

/// `grad env(a f)(x)` for an objective with a gradient oracle.
///
/// Closed forms are used for recognized kinds when the config allows;
/// otherwise the subproblem `min_y a f(x+y) + |y|^2/2` is solved from
/// `y = 0` with the configured method to tolerance
/// `grad_tol * max(1, |x|)`. `alpha = 0` returns the zero gradient.
pub fn moreau_grad(
    f: &Objective,
    x: &Vector,
    alpha: f64,
    cfg: &InnerSolverConfig,
) -> Result<EnvelopeResult> {
    if alpha == 0.0 {
        return Ok(EnvelopeResult::from_minimizer(Vector::zeros(x.dim()), 0.0, 0, 0.0));
    }
    let closed = matches!(
        cfg.method,
        SolverMethod::ClosedFormIfAvailable
    ) || cfg.allow_closed_form;
    if closed {
        if let Some(kind) = ProxKind::of(f) {
            return closed_form_prox(&kind, x, alpha);
        }
    }
    moreau_grad_iterative(f, x, alpha, cfg)
}

fn moreau_grad_iterative(
    f: &dyn Differentiable,
    x: &Vector,
    alpha: f64,
    cfg: &InnerSolverConfig,
) -> Result<EnvelopeResult> {
    let obj = FnOracle {
        value: |y: &Vector| alpha * f.value(&x.add(y)) + 0.5 * y.dot(y),
        gradient: |y: &Vector| f.gradient(&x.add(y)).scale(alpha).add(y),
    };
    let tol = cfg.grad_tol * x.norm().max(1.0);
    let out = solver::minimize(&obj, &Vector::zeros(x.dim()), cfg, tol, 1.0)?;
    let value = alpha * f.value(&x.add(&out.point)) + 0.5 * out.point.dot(&out.point);
    Ok(EnvelopeResult::from_minimizer(
        out.point,
        value,
        out.iterations,
        out.residual,
    ))
}

/// `grad env(a f)(x)` for a bare differentiable oracle (no kind detection).
pub fn moreau_grad_fn(
    f: &dyn Differentiable,
    x: &Vector,
    alpha: f64,
    cfg: &InnerSolverConfig,
) -> Result<EnvelopeResult> {
    if alpha == 0.0 {
        return Ok(EnvelopeResult::from_minimizer(Vector::zeros(x.dim()), 0.0, 0, 0.0));
    }
    moreau_grad_iterative(f, x, alpha, cfg)
}

/// The smoothing gap `|f(x) - env_alpha(f)(x)|`; for an `l`-Lipschitz `f`
/// the gap is at most `alpha l^2` (callers assert this).
pub fn envelope_gap_check(
    f: &Objective,
    x: &Vector,
    alpha: f64,
    cfg: &InnerSolverConfig,
) -> Result<f64> {
    let env = moreau_grad(f, x, alpha, cfg)?;
    Ok((f.value(x) - env.envelope_alpha(alpha)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{brute_force_argmin, SeedRng};
    use std::sync::Arc;

    fn tight() -> InnerSolverConfig {
        InnerSolverConfig::theory().with_tol(1e-13)
    }

    #[test]
    fn quadratic_envelope_gradient_closed_form() {
        // f = |x|^2/2: grad env(a f)(x) = a x / (1 + a).
        let f = Objective::SquaredLoss {
            target: Vector::zeros(3),
            weight: 1.0,
        };
        let x = Vector::from_slice(&[1.0, -2.0, 0.5]);
        for alpha in [0.1, 1.0, 7.0] {
            let r = moreau_grad(&f, &x, alpha, &tight()).unwrap();
            let expected = x.scale(alpha / (1.0 + alpha));
            assert!(r.moreau_gradient.distance(&expected) < 1e-12);
        }
    }

    #[test]
    fn abs_envelope_gradient_is_soft_threshold() {
        let x = Vector::from_slice(&[2.0, -0.3, 0.0]);
        let alpha = 0.7;
        let r = closed_form_prox(&ProxKind::AbsValue, &x, alpha).unwrap();
        let expected = Vector::from_slice(&[0.7, -0.3, 0.0]);
        assert!(r.moreau_gradient.distance(&expected) < 1e-15);
    }

    #[test]
    fn linear_form_envelope_gradient_is_alpha_slope() {
        let slope = Vector::from_slice(&[1.0, -2.0]);
        let f = Objective::LinearForm { slope: slope.clone() };
        for x in [Vector::zeros(2), Vector::from_slice(&[5.0, 5.0])] {
            let r = moreau_grad(&f, &x, 0.25, &tight()).unwrap();
            assert!(r.moreau_gradient.distance(&slope.scale(0.25)) < 1e-15);
        }
    }

    #[test]
    fn alpha_zero_returns_zero_gradient() {
        let f = Objective::squared_loss(Vector::zeros(2));
        let r = moreau_grad(&f, &Vector::from_slice(&[3.0, 4.0]), 0.0, &tight()).unwrap();
        assert_eq!(r.moreau_gradient, Vector::zeros(2));
        assert_eq!(r.envelope_value, 0.0);
    }

    #[test]
    fn iterative_path_matches_closed_form() {
        let mut rng = SeedRng::new(2);
        let f = Objective::SquaredLoss {
            target: rng.normal_vector(4),
            weight: 1.7,
        };
        let x = rng.normal_vector(4);
        let exact = moreau_grad(&f, &x, 0.8, &tight()).unwrap();
        let iter = moreau_grad(&f, &x, 0.8, &tight().without_closed_form()).unwrap();
        assert!(iter.moreau_gradient.distance(&exact.moreau_gradient) < 1e-10);
        assert!((iter.envelope_value - exact.envelope_value).abs() < 1e-10);
        assert!(iter.iterations > 0);
    }

    #[test]
    fn prox_first_order_condition_holds_on_iterative_path() {
        // |a grad f(x + y*) + y*| <= tol for the iterative result.
        let smooth = Objective::Custom(Arc::new(crate::numerics::FnOracle {
            value: |x: &Vector| x.iter().map(|v| (1.0 + v * v).sqrt()).sum::<f64>(),
            gradient: |x: &Vector| {
                Vector::from_fn(x.dim(), |i| x[i] / (1.0 + x[i] * x[i]).sqrt())
            },
        }));
        let mut rng = SeedRng::new(4);
        for _ in 0..10 {
            let x = rng.normal_vector(3);
            let alpha = rng.uniform_in(0.05, 2.0);
            let cfg = tight();
            let r = moreau_grad(&smooth, &x, alpha, &cfg).unwrap();
            let foc = smooth
                .gradient(&x.add(&r.minimizer))
                .scale(alpha)
                .add(&r.minimizer);
            assert!(foc.norm() <= cfg.grad_tol * x.norm().max(1.0) + 1e-15);
        }
    }

    #[test]
    fn envelope_value_never_exceeds_scaled_objective() {
        let mut rng = SeedRng::new(8);
        let f = Objective::SquaredLoss {
            target: rng.normal_vector(3),
            weight: 2.0,
        };
        for _ in 0..20 {
            let x = rng.normal_vector(3);
            let alpha = rng.uniform_in(0.01, 5.0);
            let r = moreau_grad(&f, &x, alpha, &tight()).unwrap();
            assert!(r.envelope_value <= alpha * f.value(&x) + 1e-12);
        }
    }

    #[test]
    fn scaling_convention_exact_on_closed_form() {
        // a * grad env_a(f)(x) = grad env(a f)(x). For f = |z - t|^2/2 the
        // prox with weight 1/(2a) is z* = (x + a t)/(1 + a), so
        // grad env_a(f)(x) = (x - t)/(1 + a), computed here by hand.
        let t = Vector::from_slice(&[1.0, 0.0]);
        let f = Objective::squared_loss(t.clone());
        let x = Vector::from_slice(&[3.0, -1.0]);
        let alpha = 0.7;
        let r = moreau_grad(&f, &x, alpha, &tight()).unwrap();
        let grad_env_alpha = x.sub(&t).scale(1.0 / (1.0 + alpha));
        assert!(grad_env_alpha.scale(alpha).distance(&r.moreau_gradient) < 1e-14);
    }

    #[test]
    fn small_alpha_consistency_ratio() {
        // |grad env(a f)(x) - a grad f(x)| <= C a^2, C estimated from the two
        // largest alphas.
        let smooth = Objective::Custom(Arc::new(crate::numerics::FnOracle {
            value: |x: &Vector| x.iter().map(|v| v.cosh().ln()).sum::<f64>(),
            gradient: |x: &Vector| Vector::from_fn(x.dim(), |i| x[i].tanh()),
        }));
        let x = Vector::from_slice(&[0.8, -1.3, 0.4]);
        let cfg = tight();
        let err = |alpha: f64| {
            let r = moreau_grad(&smooth, &x, alpha, &cfg).unwrap();
            r.moreau_gradient
                .distance(&smooth.gradient(&x).scale(alpha))
        };
        let c_est = (err(1e-2) / 1e-4).max(err(1e-3) / 1e-6);
        assert!(err(1e-4) <= c_est * 1e-8 * 1.05 + 1e-12);
    }

    #[test]
    fn huber_gradient_is_inverse_alpha_lipschitz() {
        // f = |x| scalar: the envelope gradient grad env_a(f) is 1/a-Lipschitz.
        let mut rng = SeedRng::new(12);
        for &alpha in &[0.3, 1.0, 2.5] {
            for _ in 0..200 {
                let x = Vector::from_slice(&[rng.uniform_in(-3.0, 3.0)]);
                let y = Vector::from_slice(&[rng.uniform_in(-3.0, 3.0)]);
                if x.distance(&y) < 1e-12 {
                    continue;
                }
                let gx = closed_form_prox(&ProxKind::AbsValue, &x, alpha)
                    .unwrap()
                    .moreau_gradient
                    .scale(1.0 / alpha);
                let gy = closed_form_prox(&ProxKind::AbsValue, &y, alpha)
                    .unwrap()
                    .moreau_gradient
                    .scale(1.0 / alpha);
                assert!(gx.distance(&gy) <= x.distance(&y) / alpha * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gap_bound_for_abs() {
        // f = |x| (l = 1): gap = |x| - huber_a(x) <= a.
        let x = Vector::from_slice(&[0.4]);
        let alpha = 1.0;
        let env = closed_form_prox(&ProxKind::AbsValue, &x, alpha).unwrap();
        let gap = (x[0].abs() - env.envelope_value / alpha).abs();
        assert!(gap <= alpha + 1e-15);
        assert!(gap <= alpha / 2.0 + 1e-15); // Huber is within a/2 in fact
    }

    #[test]
    fn gap_zero_for_constant() {
        let f = Objective::LinearForm { slope: Vector::zeros(2) };
        let gap = envelope_gap_check(&f, &Vector::from_slice(&[1.0, 2.0]), 0.5, &tight()).unwrap();
        assert!(gap.abs() < 1e-15);
    }

    #[test]
    fn envelope_subproblem_matches_brute_force_oracle() {
        let f = Objective::Custom(Arc::new(crate::numerics::FnOracle {
            value: |x: &Vector| x.iter().map(|v| v.cosh().ln()).sum::<f64>(),
            gradient: |x: &Vector| Vector::from_fn(x.dim(), |i| x[i].tanh()),
        }));
        let x = Vector::from_slice(&[1.0, -0.5]);
        let alpha = 0.9;
        let r = moreau_grad(&f, &x, alpha, &tight()).unwrap();
        let sub = crate::numerics::FnOracle {
            value: |y: &Vector| alpha * f.value(&x.add(y)) + 0.5 * y.dot(y),
            gradient: |y: &Vector| f.gradient(&x.add(y)).scale(alpha).add(y),
        };
        let bf = brute_force_argmin(&sub, &Vector::zeros(2), 100_000).unwrap();
        assert!(bf.converged);
        assert!(bf.point.distance(&r.minimizer) < 1e-7);
    }

    #[test]
    fn unrecognized_kind_errors_with_fallback_hint() {
        let custom = Objective::Custom(Arc::new(crate::numerics::FnOracle {
            value: |x: &Vector| x[0].powi(4),
            gradient: |x: &Vector| Vector::from_slice(&[4.0 * x[0].powi(3)]),
        }));
        assert!(ProxKind::of(&custom).is_none());
        // the public closed-form entry point reports the fallback
        let err = match ProxKind::of(&custom) {
            None => Error::NotClosedForm,
            Some(k) => {
                closed_form_prox(&k, &Vector::zeros(1), 1.0).unwrap_err()
            }
        };
        assert!(err.to_string().contains("iterative"));
    }
}
