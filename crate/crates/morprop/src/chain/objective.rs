//! Terminal objectives `h(x_tau)` and their quadratic structure, used for
//! closed-form proximal steps where available.

use crate::numerics::{Differentiable, Matrix, Vector};
use std::sync::Arc;

/// Quadratic form `h(x) = x'Qx/2 + b'x + c` with `Q` symmetric.
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub q: QuadMatrix,
    pub b: Vector,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub enum QuadMatrix {
    Diagonal(Vector),
    Dense(Matrix),
}

impl QuadForm {
    pub fn apply_q(&self, x: &Vector) -> Vector {
        match &self.q {
            QuadMatrix::Diagonal(d) => Vector::from_fn(x.dim(), |i| d[i] * x[i]),
            QuadMatrix::Dense(m) => m.matvec(x).unwrap(),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&self.apply_q(x)) + self.b.dot(x) + self.c
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        self.apply_q(x).add(&self.b)
    }

    /// Solve `(rho I + Q) z = r`.
    pub fn shifted_solve(&self, rho: f64, r: &Vector) -> crate::Result<Vector> {
        match &self.q {
            QuadMatrix::Diagonal(d) => {
                Ok(Vector::from_fn(r.dim(), |i| r[i] / (rho + d[i])))
            }
            QuadMatrix::Dense(m) => {
                let shifted = m.add(&Matrix::identity(m.rows()).scale(rho));
                shifted.solve(r)
            }
        }
    }
}

/// Objective heads.
#[derive(Clone)]
pub enum Objective {
    /// `(weight / 2) |x - target|^2`. A stacked mini-batch mean of per-sample
    /// squared losses uses `weight = 1/m`.
    SquaredLoss { target: Vector, weight: f64 },
    /// Mean multinomial logistic loss over `labels.len()` stacked blocks of
    /// `classes` logits.
    Logistic { labels: Vec<usize>, classes: usize },
    /// Pendulum terminal cost `(theta - pi)^2 + rho omega^2` on `x = (theta, omega)`.
    PendulumTerminal { rho: f64 },
    /// `slope . x`.
    LinearForm { slope: Vector },
    /// Explicit quadratic `x'Qx/2 + b'x + c`.
    Quadratic(QuadForm),
    /// Arbitrary differentiable head for tests and extensions.
    Custom(Arc<dyn Differentiable + Send + Sync>),
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::SquaredLoss { weight, .. } => {
                write!(f, "SquaredLoss{{weight: {weight}}}")
            }
            Objective::Logistic { labels, classes } => {
                write!(f, "Logistic{{m: {}, classes: {classes}}}", labels.len())
            }
            Objective::PendulumTerminal { rho } => write!(f, "PendulumTerminal{{rho: {rho}}}"),
            Objective::LinearForm { .. } => write!(f, "LinearForm"),
            Objective::Quadratic(_) => write!(f, "Quadratic"),
            Objective::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Objective {
    pub fn squared_loss(target: Vector) -> Self {
        Objective::SquaredLoss {
            target,
            weight: 1.0,
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Objective::SquaredLoss { target, weight } => {
                let d = x.sub(target);
                0.5 * weight * d.dot(&d)
            }
            Objective::Logistic { labels, classes } => {
                let m = labels.len();
                let mut acc = 0.0;
                for (s, &y) in labels.iter().enumerate() {
                    let block = &x.as_slice()[s * classes..(s + 1) * classes];
                    acc += log_sum_exp(block) - block[y];
                }
                acc / m as f64
            }
            Objective::PendulumTerminal { rho } => {
                let d = x[0] - std::f64::consts::PI;
                d * d + rho * x[1] * x[1]
            }
            Objective::LinearForm { slope } => slope.dot(x),
            Objective::Quadratic(qf) => qf.value(x),
            Objective::Custom(f) => f.value(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Objective::SquaredLoss { target, weight } => x.sub(target).scale(*weight),
            Objective::Logistic { labels, classes } => {
                let m = labels.len();
                let mut g = vec![0.0; x.dim()];
                for (s, &y) in labels.iter().enumerate() {
                    let block = &x.as_slice()[s * classes..(s + 1) * classes];
                    let probs = softmax(block);
                    for c in 0..*classes {
                        g[s * classes + c] = probs[c] / m as f64;
                    }
                    g[s * classes + y] -= 1.0 / m as f64;
                }
                Vector::new(g).expect("finite logistic gradient")
            }
            Objective::PendulumTerminal { rho } => Vector::from_slice(&[
                2.0 * (x[0] - std::f64::consts::PI),
                2.0 * rho * x[1],
            ]),
            Objective::LinearForm { slope } => slope.clone(),
            Objective::Quadratic(qf) => qf.gradient(x),
            Objective::Custom(f) => f.gradient(x),
        }
    }

    /// Quadratic structure when the head is exactly quadratic.
    pub fn quadratic_form(&self) -> Option<QuadForm> {
        match self {
            Objective::SquaredLoss { target, weight } => Some(QuadForm {
                q: QuadMatrix::Diagonal(Vector::from_fn(target.dim(), |_| *weight)),
                b: target.scale(-weight),
                c: 0.5 * weight * target.dot(target),
            }),
            Objective::PendulumTerminal { rho } => {
                let pi = std::f64::consts::PI;
                Some(QuadForm {
                    q: QuadMatrix::Diagonal(Vector::from_slice(&[2.0, 2.0 * rho])),
                    b: Vector::from_slice(&[-2.0 * pi, 0.0]),
                    c: pi * pi,
                })
            }
            Objective::LinearForm { slope } => Some(QuadForm {
                q: QuadMatrix::Diagonal(Vector::zeros(slope.dim())),
                b: slope.clone(),
                c: 0.0,
            }),
            Objective::Quadratic(qf) => Some(qf.clone()),
            _ => None,
        }
    }

    /// Global Lipschitz constant where one exists.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Objective::LinearForm { slope } => Some(slope.norm()),
            Objective::Logistic { labels, .. } => {
                // per-sample gradient norm <= sqrt(2); stacked mean
                Some((2.0 / labels.len() as f64).sqrt())
            }
            _ => None,
        }
    }

    /// Smoothness constant of the head where one exists.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Objective::SquaredLoss { weight, .. } => Some(*weight),
            Objective::PendulumTerminal { rho } => Some(2.0 * rho.max(1.0)),
            Objective::LinearForm { .. } => Some(0.0),
            Objective::Logistic { labels, .. } => Some(0.5 / labels.len() as f64),
            Objective::Quadratic(qf) => match &qf.q {
                QuadMatrix::Diagonal(d) => {
                    Some(d.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                }
                QuadMatrix::Dense(m) => Some(m.spectral_norm()),
            },
            Objective::Custom(_) => None,
        }
    }

    /// Classification accuracy of stacked logit blocks against labels.
    pub fn block_accuracy(x: &Vector, labels: &[usize], classes: usize) -> f64 {
        let mut hits = 0usize;
        for (s, &y) in labels.iter().enumerate() {
            let block = &x.as_slice()[s * classes..(s + 1) * classes];
            let pred = block
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == y {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }
}

impl Differentiable for Objective {
    fn value(&self, x: &Vector) -> f64 {
        Objective::value(self, x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        Objective::gradient(self, x)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_step, finite_difference_gradient, relative_error, SeedRng};

    #[test]
    fn gradients_match_finite_differences_at_random_points() {
        let mut rng = SeedRng::new(5);
        let heads: Vec<(Objective, usize)> = vec![
            (
                Objective::SquaredLoss {
                    target: rng.normal_vector(4),
                    weight: 0.5,
                },
                4,
            ),
            (
                Objective::Logistic {
                    labels: vec![0, 2, 1],
                    classes: 3,
                },
                9,
            ),
            (Objective::PendulumTerminal { rho: 0.1 }, 2),
            (
                Objective::LinearForm {
                    slope: rng.normal_vector(5),
                },
                5,
            ),
        ];
        for (h, dim) in heads {
            for _ in 0..5 {
                let x = rng.normal_vector(dim);
                let mut f = |y: &Vector| h.value(y);
                let fd = finite_difference_gradient(&mut f, &x, fd_step(&x)).unwrap();
                let g = h.gradient(&x);
                assert!(
                    relative_error(&fd, &g) <= 1e-5,
                    "{h:?}: {}",
                    relative_error(&fd, &g)
                );
            }
        }
    }

    #[test]
    fn quadratic_forms_reproduce_values() {
        let mut rng = SeedRng::new(6);
        let heads = vec![
            Objective::SquaredLoss {
                target: rng.normal_vector(3),
                weight: 2.0,
            },
            Objective::PendulumTerminal { rho: 0.1 },
            Objective::LinearForm {
                slope: rng.normal_vector(3),
            },
        ];
        for h in heads {
            let qf = h.quadratic_form().unwrap();
            let dim = match &h {
                Objective::PendulumTerminal { .. } => 2,
                _ => 3,
            };
            for _ in 0..5 {
                let x = rng.normal_vector(dim);
                assert!((qf.value(&x) - h.value(&x)).abs() < 1e-12);
                assert!(qf.gradient(&x).distance(&h.gradient(&x)) < 1e-12);
            }
        }
    }

    #[test]
    fn pendulum_terminal_zero_at_target() {
        let h = Objective::PendulumTerminal { rho: 0.1 };
        assert_eq!(h.value(&Vector::from_slice(&[std::f64::consts::PI, 0.0])), 0.0);
    }

    #[test]
    fn accuracy_counts_argmax_blocks() {
        let x = Vector::from_slice(&[2.0, 0.0, 0.0, 1.0, 0.0, 3.0]);
        assert_eq!(Objective::block_accuracy(&x, &[0, 2], 3), 1.0);
        assert_eq!(Objective::block_accuracy(&x, &[1, 2], 3), 0.5);
    }
}
