//! Dual computation of the Moreau gradient of a single composition
//! `f . g` with `f` convex and `g` smooth.
//!
//! The gradient of `env(a f.g)` at `x` is `-argmin_y { mu*.g(x+y) + |y|^2/2 }`
//! where `mu*` maximizes the dual objective
//!
//! ```text
//! D(mu) = env(mu.g)(x) - (a f)*(mu),
//! ```
//!
//! solved by proximal gradient ascent from `mu = 0`. The conjugate is never
//! materialized: each proximal step is rewritten as an envelope evaluation of
//! `f`, via `prox_{b (af)*}(v) = b grad env((a/b) f)(v / b)`.

use crate::chain::{Objective, QuadMatrix, VectorMap};
use crate::envelope::{moreau_grad, InnerSolverConfig};
use crate::error::{Error, Result};
use crate::numerics::{FnOracle, Vector};

/// Result of [`dual_prox_gradient`].
#[derive(Debug, Clone)]
pub struct DualChainRule {
    /// The dual direction `mu*`.
    pub mu: Vector,
    /// `y* = argmin_y mu*.g(x+y) + |y|^2/2`; the Moreau gradient is `-y*`.
    pub minimizer: Vector,
    /// Primal envelope estimate `a f(g(x+y*)) + |y*|^2/2`.
    pub envelope_estimate: f64,
    /// Dual objective trace, when the conjugate of `f` is computable.
    pub dual_values: Vec<f64>,
    pub iterations: usize,
}

impl DualChainRule {
    pub fn moreau_gradient(&self) -> Vector {
        self.minimizer.scale(-1.0)
    }
}

/// `argmin_y mu.g(x+y) + |y|^2/2`, closed form for affine `g`.
fn map_prox(
    g: &dyn VectorMap,
    x: &Vector,
    mu: &Vector,
    warm: &Vector,
    cfg: &InnerSolverConfig,
) -> Result<Vector> {
    if cfg.allow_closed_form && g.is_affine() {
        // constant Jacobian: y = -B^T mu
        return Ok(g.vjp(x, mu).scale(-1.0));
    }
    let obj = FnOracle {
        value: |y: &Vector| mu.dot(&g.eval(&x.add(y))) + 0.5 * y.dot(y),
        gradient: |y: &Vector| g.vjp(&x.add(y), mu).add(y),
    };
    let tol = cfg.grad_tol * x.norm().max(1.0);
    Ok(super::solver::minimize(&obj, warm, cfg, tol, 1.0)?.point)
}

/// `(a f)*(mu)` for quadratic `f` with invertible curvature; `None` when the
/// conjugate is not computable in closed form.
fn conjugate_value(f: &Objective, mu: &Vector, alpha: f64) -> Option<f64> {
    let qf = f.quadratic_form()?;
    let pd = match &qf.q {
        QuadMatrix::Diagonal(d) => d.iter().all(|&v| v > 0.0),
        QuadMatrix::Dense(_) => true, // let the solve decide
    };
    if !pd {
        return None;
    }
    // sup_z mu.z - a f(z): a(Q z + b) = mu => z = Q^{-1}(mu/a - b)
    let rhs = mu.scale(1.0 / alpha).sub(&qf.b);
    let z = qf.shifted_solve(0.0, &rhs).ok()?;
    Some(mu.dot(&z) - alpha * qf.value(&z))
}

/// Proximal gradient ascent on the dual of the composition envelope.
///
/// Preconditions from the underlying proposition: `alpha <= 1/(2 l_f L_g)`
/// and `beta <= 1/(2 l_g^2)` (callers compute them from supplied constants).
/// Iterates `mu <- b grad env((a/b) f)(mu/b + g(x + y(mu)))` from `mu = 0`.
///
/// Errors when the dual objective (tracked whenever the conjugate of `f` is
/// computable) decreases over 10 consecutive steps.
pub fn dual_prox_gradient(
    f: &Objective,
    g: &dyn VectorMap,
    x: &Vector,
    alpha: f64,
    beta: f64,
    iters: usize,
    cfg: &InnerSolverConfig,
) -> Result<DualChainRule> {
    assert!(alpha > 0.0 && beta > 0.0);
    let k = g.out_dim();
    let mut mu = Vector::zeros(k);
    let mut y = Vector::zeros(g.in_dim());
    let mut dual_values = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut decrease_streak = 0usize;
    for _ in 0..iters {
        y = map_prox(g, x, &mu, &y, cfg)?;
        if let Some(conj) = conjugate_value(f, &mu, alpha) {
            let dual = mu.dot(&g.eval(&x.add(&y))) + 0.5 * y.dot(&y) - conj;
            if dual < best - 1e-12 {
                decrease_streak += 1;
                if decrease_streak >= 10 {
                    return Err(Error::AscentStalled {
                        streak: decrease_streak,
                        trace: dual_values,
                    });
                }
            } else {
                decrease_streak = 0;
                best = best.max(dual);
            }
            dual_values.push(dual);
        }
        // ascent point lam = mu + b grad c(mu), grad c(mu) = g(x + y(mu))
        let lam = mu.add(&g.eval(&x.add(&y)).scale(beta));
        // prox of the scaled conjugate, rewritten on f itself
        let env = moreau_grad(f, &lam.scale(1.0 / beta), alpha / beta, cfg)?;
        mu = env.moreau_gradient.scale(beta);
    }
    y = map_prox(g, x, &mu, &y, cfg)?;
    let envelope_estimate = alpha * f.value(&g.eval(&x.add(&y))) + 0.5 * y.dot(&y);
    Ok(DualChainRule {
        mu,
        minimizer: y,
        envelope_estimate,
        dual_values,
        iterations: iters,
    })
}

/// The one-step approximation `mu^ = (b/a) grad env((a/b) f)(g(x))`, a single
/// proximal gradient step from 0 on the dual.
pub fn one_step_dual(
    f: &Objective,
    g: &dyn VectorMap,
    x: &Vector,
    alpha: f64,
    beta: f64,
    cfg: &InnerSolverConfig,
) -> Result<Vector> {
    assert!(alpha > 0.0 && beta > 0.0);
    let env = moreau_grad(f, &g.eval(x), alpha / beta, cfg)?;
    Ok(env.moreau_gradient.scale(beta / alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Activation, Layer, LayerInState};
    use crate::numerics::{brute_force_argmin, Matrix, SeedRng, Vector};

    fn tight() -> InnerSolverConfig {
        InnerSolverConfig::theory().with_tol(1e-12)
    }

    struct MatMap {
        a: Matrix,
    }

    impl VectorMap for MatMap {
        fn in_dim(&self) -> usize {
            self.a.cols()
        }
        fn out_dim(&self) -> usize {
            self.a.rows()
        }
        fn eval(&self, u: &Vector) -> Vector {
            self.a.matvec(u).unwrap()
        }
        fn vjp(&self, _u: &Vector, lam: &Vector) -> Vector {
            self.a.transpose().matvec(lam).unwrap()
        }
        fn is_affine(&self) -> bool {
            true
        }
    }

    struct IdentityMap(usize);

    impl VectorMap for IdentityMap {
        fn in_dim(&self) -> usize {
            self.0
        }
        fn out_dim(&self) -> usize {
            self.0
        }
        fn eval(&self, u: &Vector) -> Vector {
            u.clone()
        }
        fn vjp(&self, _u: &Vector, lam: &Vector) -> Vector {
            lam.clone()
        }
        fn is_affine(&self) -> bool {
            true
        }
    }

    #[test]
    fn identity_composition_reduces_to_plain_envelope() {
        let mut rng = SeedRng::new(3);
        let f = Objective::SquaredLoss {
            target: rng.normal_vector(3),
            weight: 1.0,
        };
        let x = rng.normal_vector(3);
        let alpha = 0.4;
        let out = dual_prox_gradient(&f, &IdentityMap(3), &x, alpha, 0.45, 200, &tight()).unwrap();
        let direct = moreau_grad(&f, &x, alpha, &tight()).unwrap();
        assert!(out.moreau_gradient().distance(&direct.moreau_gradient) < 1e-8);
    }

    #[test]
    fn linear_f_linear_g_closed_form() {
        // f(u) = a.u, g(x) = Bx: mu* = alpha a, y* = -alpha B^T a.
        let a = Vector::from_slice(&[1.0, -0.5]);
        let f = Objective::LinearForm { slope: a.clone() };
        let b = Matrix::from_rows(&[&[2.0, 0.0, 1.0], &[0.0, 1.0, -1.0]]);
        let g = MatMap { a: b.clone() };
        let x = Vector::from_slice(&[0.3, 0.7, -0.2]);
        let alpha = 0.6;
        let out = dual_prox_gradient(&f, &g, &x, alpha, 0.1, 50, &tight()).unwrap();
        assert!(out.mu.distance(&a.scale(alpha)) < 1e-10);
        let expect_y = b.transpose().matvec(&a).unwrap().scale(-alpha);
        assert!(out.minimizer.distance(&expect_y) < 1e-10);
        // one proximal-gradient step from 0 already lands on the conjugate's
        // support point for a linear f
        let one = one_step_dual(&f, &g, &x, alpha, 0.1, &tight()).unwrap();
        assert!(one.distance(&a) < 1e-12);
    }

    #[test]
    fn quadratic_f_smooth_g_matches_brute_force_primal() {
        let mut rng = SeedRng::new(5);
        for trial in 0..5 {
            // g: 2 -> 2 affine + tanh layer with modest weights
            let layer = Layer::affine_activation(2, 2, Activation::Tanh);
            let w = rng.normal_vector(6).scale(0.6);
            let g = LayerInState { layer: &layer, w: &w };
            let f = Objective::SquaredLoss {
                target: rng.normal_vector(2),
                weight: 1.0,
            };
            let x = rng.normal_vector(2);
            // conservative step sizes: l_f on the reachable set, L_g, l_g
            let (l_g, big_l_g) = layer.state_constants(&w).unwrap();
            let l_f = 3.0; // |grad f| on the tanh range with these targets
            let alpha = 1.0 / (2.0 * l_f * big_l_g.max(1e-9));
            let beta = 1.0 / (2.0 * l_g * l_g);
            let out = dual_prox_gradient(&f, &g, &x, alpha, beta, 400, &tight()).unwrap();
            // brute force on the strongly convex primal
            let primal = crate::numerics::FnOracle {
                value: |y: &Vector| alpha * f.value(&g.eval(&x.add(y))) + 0.5 * y.dot(y),
                gradient: |y: &Vector| {
                    let z = x.add(y);
                    g.vjp(&z, &f.gradient(&g.eval(&z)).scale(alpha)).add(y)
                },
            };
            let bf = brute_force_argmin(&primal, &Vector::zeros(2), 200_000).unwrap();
            assert!(
                out.minimizer.distance(&bf.point) < 1e-6,
                "trial {trial}: {} ",
                out.minimizer.distance(&bf.point)
            );
        }
    }

    #[test]
    fn dual_objective_is_monotone_under_stated_steps() {
        let mut rng = SeedRng::new(9);
        let layer = Layer::affine_activation(3, 2, Activation::Tanh);
        let w = rng.normal_vector(8).scale(0.5);
        let g = LayerInState { layer: &layer, w: &w };
        let f = Objective::SquaredLoss {
            target: rng.normal_vector(2),
            weight: 1.0,
        };
        let x = rng.normal_vector(3);
        let (l_g, big_l_g) = layer.state_constants(&w).unwrap();
        let alpha = 1.0 / (2.0 * 3.0 * big_l_g);
        let beta = 1.0 / (2.0 * l_g * l_g);
        let out = dual_prox_gradient(&f, &g, &x, alpha, beta, 100, &tight()).unwrap();
        for pair in out.dual_values.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn one_step_dual_scaling_identities() {
        // f linear: mu^ = (b/a) (a/b) slope = slope regardless of g, x.
        let slope = Vector::from_slice(&[0.2, -0.4, 1.0]);
        let f = Objective::LinearForm { slope: slope.clone() };
        let g = IdentityMap(3);
        let x = Vector::from_slice(&[5.0, -2.0, 0.0]);
        let mu = one_step_dual(&f, &g, &x, 0.3, 0.9, &tight()).unwrap();
        assert!(mu.distance(&slope) < 1e-12);
        // beta = alpha: plain envelope gradient of f at g(x), unscaled
        let f2 = Objective::squared_loss(Vector::zeros(3));
        let mu2 = one_step_dual(&f2, &g, &x, 0.5, 0.5, &tight()).unwrap();
        let expect = moreau_grad(&f2, &x, 1.0, &tight()).unwrap().moreau_gradient;
        assert!(mu2.distance(&expect) < 1e-12);
    }

    #[test]
    fn one_step_matches_first_dual_iteration() {
        // For any f, g: one_step_dual equals dual_prox_gradient's mu after one
        // iteration from mu = 0, scaled by 1/alpha.
        let mut rng = SeedRng::new(21);
        let layer = Layer::affine_activation(2, 2, Activation::Tanh);
        let w = rng.normal_vector(6).scale(0.4);
        let g = LayerInState { layer: &layer, w: &w };
        let f = Objective::SquaredLoss {
            target: rng.normal_vector(2),
            weight: 1.0,
        };
        let x = rng.normal_vector(2);
        let (alpha, beta) = (0.2, 0.3);
        let one = one_step_dual(&f, &g, &x, alpha, beta, &tight()).unwrap();
        let run = dual_prox_gradient(&f, &g, &x, alpha, beta, 1, &tight()).unwrap();
        assert!(one.scale(alpha).distance(&run.mu) < 1e-12);
    }

    #[test]
    fn linear_composition_closed_form_both_routes() {
        // For strictly convex quadratic f and g = A:
        // grad env(f.A)(x) = A^T (A A^T + grad f^{-1})^{-1}(A x), where the
        // inverse-gradient map of f(u) = u'Qu/2 + b'u is mu -> Q^{-1}(mu - b).
        let mut rng = SeedRng::new(33);
        for _ in 0..5 {
            let raw = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let q = raw.matmul(&raw.transpose()).add(&Matrix::identity(3).scale(0.8));
            let b = rng.normal_vector(3);
            let a = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let x = rng.normal_vector(3);
            // direct linear algebra: (A A^T + Q^{-1}) mu = A x + Q^{-1} b
            let q_inv_b = q.solve(&b).unwrap();
            let mut aat_plus = a.matmul(&a.transpose());
            // add Q^{-1} densely
            let mut q_inv = Matrix::zeros(3, 3);
            for j in 0..3 {
                let col = q.solve(&Vector::basis(3, j)).unwrap();
                for i in 0..3 {
                    q_inv.set(i, j, col[i]);
                }
            }
            aat_plus = aat_plus.add(&q_inv);
            let rhs = a.matvec(&x).unwrap().add(&q_inv_b);
            let mu_direct = aat_plus.solve(&rhs).unwrap();
            let grad_direct = a.transpose().matvec(&mu_direct).unwrap();
            // dual route with alpha = 1 (L_g = 0 for linear g poses no bound)
            let f = Objective::Quadratic(crate::chain::QuadForm {
                q: QuadMatrix::Dense(q.clone()),
                b: b.clone(),
                c: 0.0,
            });
            let g = MatMap { a: a.clone() };
            let beta = 1.0 / (2.0 * a.spectral_norm().powi(2));
            let out = dual_prox_gradient(&f, &g, &x, 1.0, beta, 3000, &tight()).unwrap();
            assert!(
                out.moreau_gradient().distance(&grad_direct) < 1e-8,
                "{}",
                out.moreau_gradient().distance(&grad_direct)
            );
        }
    }

}
