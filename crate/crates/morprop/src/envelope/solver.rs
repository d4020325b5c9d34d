//! Shared deterministic inner solvers for the envelope subproblems: a
//! Goldstein line-searched gradient descent (tolerance-driven, for oracle
//! paths) and the two-step quasi-Newton scheme (one Goldstein step followed
//! by one Barzilai-Borwein step) used for training.

use crate::envelope::{InnerSolverConfig, SolverMethod};
use crate::error::{Error, Result};
use crate::numerics::{Differentiable, Vector};

/// Outcome of an inner minimization.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub point: Vector,
    pub iterations: usize,
    /// Gradient norm at the returned point.
    pub residual: f64,
    /// Set when a Goldstein search could not find an admissible step.
    pub line_search_failed: bool,
}

struct LineSearchHit {
    step: f64,
    point: Vector,
    value: f64,
}

enum LineSearch {
    Hit(LineSearchHit),
    /// The required decrease sits below the value's rounding noise and no
    /// gradient contraction is available: the iterate is at the fp floor.
    AtResolution,
    Failed,
}

/// Goldstein line search along `-g` from `u`. Bisects when an upper bound is
/// known, expands while the step is too cautious. Once the sufficient
/// decrease `c s |g|^2` falls below the rounding noise of the value, steps
/// are instead accepted on strict gradient-norm contraction, which stays
/// computable to much smaller scales.
fn goldstein(
    obj: &dyn Differentiable,
    u: &Vector,
    f_u: f64,
    g: &Vector,
    cfg: &InnerSolverConfig,
    s0: f64,
) -> LineSearch {
    let gg = g.dot(g);
    if gg == 0.0 {
        return LineSearch::AtResolution;
    }
    let c = cfg.goldstein_c;
    let noise = 4.0 * f64::EPSILON * (1.0 + f_u.abs());
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut s = s0;
    let mut fallback: Option<LineSearchHit> = None;
    let mut sub_resolution = false;
    for _ in 0..50 {
        let cand = u.axpy(-s, g);
        let fc = obj.value(&cand);
        if fc.is_finite() && fc <= f_u - c * s * gg {
            let hit = LineSearchHit {
                step: s,
                point: cand,
                value: fc,
            };
            if fc >= f_u - (1.0 - c) * s * gg {
                return LineSearch::Hit(hit);
            }
            // Armijo holds but the step is too cautious; remember and expand.
            fallback = Some(hit);
            lo = s;
            s = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                s * cfg.expand
            };
            continue;
        }
        if fc.is_finite() && c * s * gg <= noise && fc <= f_u + noise {
            sub_resolution = true;
            let gc = obj.gradient(&cand);
            if gc.dot(&gc) <= gg * (1.0 - 1e-3) {
                return LineSearch::Hit(LineSearchHit {
                    step: s,
                    point: cand,
                    value: fc,
                });
            }
        }
        hi = s;
        s = if lo > 0.0 {
            0.5 * (lo + hi)
        } else {
            s * cfg.backtrack
        };
    }
    match fallback {
        Some(hit) => LineSearch::Hit(hit),
        None if sub_resolution => LineSearch::AtResolution,
        None => LineSearch::Failed,
    }
}

/// Tolerance-driven Goldstein gradient descent.
///
/// `tol` is the absolute target on the gradient norm; `hint` scales the
/// initial line-search step as `initial_step / max(1, hint)` (pass the
/// dominant quadratic curvature of the subproblem).
pub fn gradient_descent(
    obj: &dyn Differentiable,
    u0: &Vector,
    cfg: &InnerSolverConfig,
    tol: f64,
    hint: f64,
) -> Result<SolveOutcome> {
    let mut u = u0.clone();
    let mut f_u = obj.value(&u);
    let mut step = cfg.initial_step / hint.max(1.0);
    let mut trace: Vec<f64> = vec![f_u];
    let mut failures = 0usize;
    for k in 0..cfg.max_iters {
        let g = obj.gradient(&u);
        let gn = g.norm();
        if gn <= tol {
            return Ok(SolveOutcome {
                point: u,
                iterations: k,
                residual: gn,
                line_search_failed: false,
            });
        }
        match goldstein(obj, &u, f_u, &g, cfg, step) {
            LineSearch::Hit(hit) => {
                failures = 0;
                step = hit.step * cfg.expand;
                u = hit.point;
                f_u = hit.value;
            }
            LineSearch::AtResolution => {
                // no further value-gated or contraction progress possible
                return Ok(SolveOutcome {
                    point: u,
                    iterations: k,
                    residual: gn,
                    line_search_failed: false,
                });
            }
            LineSearch::Failed => {
                failures += 1;
                step = (step * cfg.backtrack).max(1e-300);
                if failures >= 10 {
                    return Err(Error::Divergence {
                        context: "inner gradient descent",
                        trace,
                    });
                }
            }
        }
        trace.push(f_u);
        if trace.len() > 8 {
            trace.remove(0);
        }
    }
    let g = obj.gradient(&u);
    Ok(SolveOutcome {
        residual: g.norm(),
        point: u,
        iterations: cfg.max_iters,
        line_search_failed: false,
    })
}

/// Exactly two steps: one Goldstein-admissible gradient step, then one
/// gradient step with the Barzilai-Borwein step `s = <du, dg>/<dg, dg>`
/// clamped to `[1e-8, 1e8]`.
///
/// A zero-gradient start returns `u0`. A failed line search returns `u0`
/// unchanged with the flag set.
pub fn quasi_newton_2step(
    obj: &dyn Differentiable,
    u0: &Vector,
    cfg: &InnerSolverConfig,
    hint: f64,
) -> SolveOutcome {
    let g0 = obj.gradient(u0);
    let gn0 = g0.norm();
    if gn0 == 0.0 {
        return SolveOutcome {
            point: u0.clone(),
            iterations: 0,
            residual: 0.0,
            line_search_failed: false,
        };
    }
    let f0 = obj.value(u0);
    let s0 = cfg.initial_step / hint.max(1.0);
    let hit = match goldstein(obj, u0, f0, &g0, cfg, s0) {
        LineSearch::Hit(hit) => hit,
        LineSearch::AtResolution => {
            return SolveOutcome {
                point: u0.clone(),
                iterations: 0,
                residual: gn0,
                line_search_failed: false,
            }
        }
        LineSearch::Failed => {
            return SolveOutcome {
                point: u0.clone(),
                iterations: 0,
                residual: gn0,
                line_search_failed: true,
            }
        }
    };
    let u1 = hit.point;
    let g1 = obj.gradient(&u1);
    let du = u1.sub(u0);
    let dg = g1.sub(&g0);
    let dgdg = dg.dot(&dg);
    let u2 = if dgdg > 0.0 {
        let s_bb = (du.dot(&dg) / dgdg).clamp(1e-8, 1e8);
        u1.axpy(-s_bb, &g1)
    } else {
        u1
    };
    let res = obj.gradient(&u2).norm();
    SolveOutcome {
        point: u2,
        iterations: 2,
        residual: res,
        line_search_failed: false,
    }
}

/// Dispatch on the configured method. `tol` only binds the gradient-descent
/// path; the two-step scheme runs its fixed budget.
pub fn minimize(
    obj: &dyn Differentiable,
    u0: &Vector,
    cfg: &InnerSolverConfig,
    tol: f64,
    hint: f64,
) -> Result<SolveOutcome> {
    match cfg.method {
        SolverMethod::GradientDescent | SolverMethod::ClosedFormIfAvailable => {
            gradient_descent(obj, u0, cfg, tol, hint)
        }
        SolverMethod::QuasiNewton2Step => Ok(quasi_newton_2step(obj, u0, cfg, hint)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::FnOracle;

    fn quadratic_1d() -> impl Differentiable {
        FnOracle {
            value: |y: &Vector| 0.5 * y[0] * y[0],
            gradient: |y: &Vector| y.clone(),
        }
    }

    #[test]
    fn qn2_exact_on_1d_quadratic() {
        let cfg = InnerSolverConfig::practice();
        let out = quasi_newton_2step(&quadratic_1d(), &Vector::from_slice(&[1.0]), &cfg, 1.0);
        assert!(out.point[0].abs() <= 1e-12, "{}", out.point[0]);
        assert!(!out.line_search_failed);
    }

    #[test]
    fn qn2_zero_gradient_returns_start() {
        let cfg = InnerSolverConfig::practice();
        let out = quasi_newton_2step(&quadratic_1d(), &Vector::zeros(1), &cfg, 1.0);
        assert_eq!(out.point, Vector::zeros(1));
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn qn2_flags_hopeless_line_search() {
        // Deliberately inconsistent oracle: the claimed gradient points away
        // from every descent direction of the value, so no step is admissible.
        let obj = FnOracle {
            value: |y: &Vector| y[0].abs(),
            gradient: |_: &Vector| Vector::from_slice(&[1.0]),
        };
        let cfg = InnerSolverConfig::practice();
        let out = quasi_newton_2step(&obj, &Vector::from_slice(&[0.0]), &cfg, 1.0);
        assert!(out.line_search_failed);
        assert_eq!(out.point, Vector::from_slice(&[0.0]));
    }

    #[test]
    fn gd_reaches_tolerance_on_quadratic() {
        let cfg = InnerSolverConfig::theory();
        let obj = FnOracle {
            value: |y: &Vector| 0.5 * (4.0 * y[0] * y[0] + y[1] * y[1]),
            gradient: |y: &Vector| Vector::from_slice(&[4.0 * y[0], y[1]]),
        };
        let out = gradient_descent(&obj, &Vector::from_slice(&[1.0, -2.0]), &cfg, 1e-10, 4.0)
            .unwrap();
        assert!(out.residual <= 1e-10);
        assert!(out.point.norm() < 1e-9);
    }

    #[test]
    fn gd_stiff_curvature_uses_hint() {
        let rho = 1e12;
        let obj = FnOracle {
            value: move |y: &Vector| 0.5 * rho * y[0] * y[0] + y[0].sin(),
            gradient: move |y: &Vector| Vector::from_slice(&[rho * y[0] + y[0].cos()]),
        };
        let out =
            gradient_descent(&obj, &Vector::from_slice(&[0.0]), &InnerSolverConfig::theory(), 1e-6, rho)
                .unwrap();
        assert!(out.residual <= 1e-6);
        assert!(out.iterations < 100);
    }
}
