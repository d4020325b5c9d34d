//! The layer-local proximal subproblem shared by every non-classical oracle:
//!
//! ```text
//! F(u) = lam.phi(u) + (rho/2)|u - anchor|^2
//!        + (kappa/2)|phi(u) - target|^2 + (reg/2)|u|^2
//! ```
//!
//! over either the parameter slot or the state slot of a layer. Moreau,
//! augmented-Lagrangian, target-propagation and proximal back-propagation
//! passes all reduce their layer-local solves to instances of this one
//! structure, so oracles that coincide analytically produce bitwise-identical
//! trajectories through the shared deterministic solver.
//!
//! Affine maps are solved in closed form through the normal equations;
//! everything else is handed to the configured iterative solver, warm-started
//! at the anchor (the current point).

use crate::chain::VectorMap;
use crate::envelope::{minimize, InnerSolverConfig, SolveOutcome};
use crate::error::Result;
use crate::numerics::{Differentiable, Matrix, Vector};

pub struct ProxSubproblem<'a> {
    pub map: &'a dyn VectorMap,
    pub lam: Option<&'a Vector>,
    pub rho: f64,
    pub anchor: &'a Vector,
    pub kappa: f64,
    pub target: Option<&'a Vector>,
    pub reg: f64,
}

impl ProxSubproblem<'_> {
    fn combined_dual(&self, phi: &Vector) -> Option<Vector> {
        let mut dual: Option<Vector> = None;
        if self.kappa != 0.0 {
            if let Some(z) = self.target {
                dual = Some(phi.sub(z).scale(self.kappa));
            }
        }
        match (dual, self.lam) {
            (Some(d), Some(l)) => Some(d.add(l)),
            (Some(d), None) => Some(d),
            (None, Some(l)) => Some(l.clone()),
            (None, None) => None,
        }
    }
}

impl Differentiable for ProxSubproblem<'_> {
    fn value(&self, u: &Vector) -> f64 {
        let phi = self.map.eval(u);
        let mut acc = 0.0;
        if let Some(l) = self.lam {
            acc += l.dot(&phi);
        }
        if self.rho != 0.0 {
            let d = u.sub(self.anchor);
            acc += 0.5 * self.rho * d.dot(&d);
        }
        if self.kappa != 0.0 {
            if let Some(z) = self.target {
                let d = phi.sub(z);
                acc += 0.5 * self.kappa * d.dot(&d);
            }
        }
        if self.reg != 0.0 {
            acc += 0.5 * self.reg * u.dot(u);
        }
        acc
    }

    fn gradient(&self, u: &Vector) -> Vector {
        let phi = self.map.eval(u);
        let mut g = match self.combined_dual(&phi) {
            Some(dual) => self.map.vjp(u, &dual),
            None => Vector::zeros(u.dim()),
        };
        if self.rho != 0.0 {
            g = g.axpy(self.rho, &u.sub(self.anchor));
        }
        if self.reg != 0.0 {
            g = g.axpy(self.reg, u);
        }
        g
    }
}

/// Dense-materialization ceiling for the affine closed form; bigger systems go
/// to the iterative path.
const DENSE_LIMIT: usize = 96;

impl ProxSubproblem<'_> {
    /// Minimize `F`, in closed form for affine maps when allowed, iteratively
    /// otherwise. Deterministic given the config.
    pub fn solve(&self, cfg: &InnerSolverConfig) -> Result<SolveOutcome> {
        let n = self.map.in_dim();
        if n == 0 {
            return Ok(SolveOutcome {
                point: Vector::zeros(0),
                iterations: 0,
                residual: 0.0,
                line_search_failed: false,
            });
        }
        if cfg.allow_closed_form && self.map.is_affine() {
            if let Some(point) = self.affine_solve()? {
                return Ok(SolveOutcome {
                    point,
                    iterations: 0,
                    residual: 0.0,
                    line_search_failed: false,
                });
            }
        }
        let tol = cfg.grad_tol * self.anchor.norm().max(1.0);
        let hint = self.rho + self.reg + self.kappa;
        minimize(self, self.anchor, cfg, tol, hint)
    }

    /// Closed form for affine `phi(u) = phi(anchor) + B (u - anchor)`:
    /// `((rho + reg) I + kappa B'B) d = -B'lam - reg a - kappa B'(phi(a) - target)`
    /// with `u = anchor + d`. `None` when the system is too large or singular.
    fn affine_solve(&self) -> Result<Option<Vector>> {
        let n = self.map.in_dim();
        let phi_a = self.map.eval(self.anchor);
        let ridge = self.rho + self.reg;
        let with_penalty = self.kappa != 0.0 && self.target.is_some();
        if !with_penalty {
            // d = (-B'lam - reg a) / (rho + reg)
            if ridge == 0.0 {
                return Ok(None);
            }
            let mut rhs = match self.lam {
                Some(l) => self.map.vjp(self.anchor, l).scale(-1.0),
                None => Vector::zeros(n),
            };
            if self.reg != 0.0 {
                rhs = rhs.axpy(-self.reg, self.anchor);
            }
            return Ok(Some(self.anchor.add(&rhs.scale(1.0 / ridge))));
        }
        if n > DENSE_LIMIT {
            return Ok(None);
        }
        // dense B through one vjp per output coordinate
        let m = self.map.out_dim();
        let mut bt = Matrix::zeros(n, m); // B^T
        for j in 0..m {
            let col = self.map.vjp(self.anchor, &Vector::basis(m, j));
            for i in 0..n {
                bt.set(i, j, col[i]);
            }
        }
        let btb = bt.matmul(&bt.transpose());
        let mut a_mat = btb.scale(self.kappa);
        for i in 0..n {
            a_mat.set(i, i, a_mat.get(i, i) + ridge);
        }
        let mut dual = self
            .target
            .map(|z| phi_a.sub(z).scale(self.kappa))
            .unwrap_or_else(|| Vector::zeros(m));
        if let Some(l) = self.lam {
            dual = dual.add(l);
        }
        let mut rhs = bt.matvec(&dual)?.scale(-1.0);
        if self.reg != 0.0 {
            rhs = rhs.axpy(-self.reg, self.anchor);
        }
        match a_mat.solve(&rhs) {
            Ok(d) => Ok(Some(self.anchor.add(&d))),
            Err(crate::Error::SingularSystem) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Activation, Layer, LayerInParams, LayerInState};
    use crate::numerics::SeedRng;

    #[test]
    fn affine_closed_form_matches_iterative() {
        let mut rng = SeedRng::new(7);
        let layer = Layer::fully_connected(3, 2);
        let w = rng.normal_vector(8);
        let x = rng.normal_vector(3);
        let lam = rng.normal_vector(2);
        let target = rng.normal_vector(2);
        let map = LayerInParams { layer: &layer, x: &x };
        for (kappa, reg) in [(0.0, 0.0), (0.7, 0.0), (2.0, 0.1)] {
            let sub = ProxSubproblem {
                map: &map,
                lam: Some(&lam),
                rho: 1.5,
                anchor: &w,
                kappa,
                target: if kappa > 0.0 { Some(&target) } else { None },
                reg,
            };
            let exact = sub.solve(&InnerSolverConfig::theory()).unwrap();
            assert_eq!(exact.iterations, 0);
            let iter = sub
                .solve(&InnerSolverConfig::theory().with_tol(1e-12).without_closed_form())
                .unwrap();
            assert!(
                exact.point.distance(&iter.point) < 1e-8,
                "kappa {kappa}: {}",
                exact.point.distance(&iter.point)
            );
            // first-order optimality of the closed form
            assert!(sub.gradient(&exact.point).norm() < 1e-10);
        }
    }

    #[test]
    fn pure_inverse_on_invertible_affine_layer() {
        // min |phi(w, y) - z|^2/2 with invertible W: y = W^{-T}(z - b).
        let layer = Layer::fully_connected(2, 2);
        // W columns (1,2) and (0,1); b = (0.5, -0.5)
        let w = Vector::from_slice(&[1.0, 2.0, 0.0, 1.0, 0.5, -0.5]);
        let x0 = Vector::from_slice(&[0.2, 0.3]);
        let z = Vector::from_slice(&[1.0, 1.0]);
        let map = LayerInState { layer: &layer, w: &w };
        let sub = ProxSubproblem {
            map: &map,
            lam: None,
            rho: 0.0,
            anchor: &x0,
            kappa: 1.0,
            target: Some(&z),
            reg: 0.0,
        };
        let out = sub.solve(&InnerSolverConfig::theory()).unwrap();
        // solve W^T y = z - b by hand: W^T = [[1,2],[0,1]]
        // y2 = 1.5; y1 = 0.5 - 2*1.5 = -2.5
        let expect = Vector::from_slice(&[-2.5, 1.5]);
        assert!(out.point.distance(&expect) < 1e-10, "{:?}", out.point);
        assert!(map.eval(&out.point).distance(&z) < 1e-10);
    }

    #[test]
    fn zero_dual_keeps_anchor() {
        let layer = Layer::affine_activation(2, 2, Activation::Tanh);
        let mut rng = SeedRng::new(3);
        let w = rng.normal_vector(6);
        let x = rng.normal_vector(2);
        let map = LayerInParams { layer: &layer, x: &x };
        let sub = ProxSubproblem {
            map: &map,
            lam: None,
            rho: 2.0,
            anchor: &w,
            kappa: 0.0,
            target: None,
            reg: 0.0,
        };
        let out = sub.solve(&InnerSolverConfig::theory()).unwrap();
        assert!(out.point.distance(&w) < 1e-12);
    }

    #[test]
    fn empty_parameter_block_is_noop() {
        let layer = Layer::elementwise(3, Activation::Tanh);
        let w = Vector::zeros(0);
        let x = Vector::from_slice(&[0.1, 0.2, 0.3]);
        let map = LayerInParams { layer: &layer, x: &x };
        let sub = ProxSubproblem {
            map: &map,
            lam: None,
            rho: 1.0,
            anchor: &w,
            kappa: 0.0,
            target: None,
            reg: 0.0,
        };
        let out = sub.solve(&InnerSolverConfig::practice()).unwrap();
        assert_eq!(out.point.dim(), 0);
    }
}
