//! Layer catalog: the elementary computations `phi_t(w_t, x_{t-1})` a chain
//! is built from, with analytic Jacobians, Jacobian-transpose products, and
//! Lipschitz/smoothness constants where they are available analytically.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use serde::{Deserialize, Serialize};

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
    /// Offered for experiment parity; non-smooth. Subgradient at 0 is 0.
    Relu,
}

/// Largest |second derivative| of tanh, attained where tanh^2 = 1/3.
pub const TANH_SMOOTHNESS: f64 = 0.7698;

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            // log(1 + e^z), computed without overflow
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else if z < -30.0 {
                    z.exp()
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    /// `(sup |a'|, sup |a''|)`; smoothness is None for ReLU.
    pub fn constants(self) -> (f64, Option<f64>) {
        match self {
            Activation::Identity => (1.0, Some(0.0)),
            Activation::Tanh => (1.0, Some(TANH_SMOOTHNESS)),
            Activation::Softplus => (1.0, Some(0.25)),
            Activation::Relu => (1.0, None),
        }
    }
}

/// Physical constants of the discretized pendulum step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumDynamics {
    pub mass: f64,
    pub length: f64,
    pub friction: f64,
    pub gravity: f64,
    /// Discretization step.
    pub dt: f64,
}

impl Default for PendulumDynamics {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            friction: 0.01,
            gravity: 9.81,
            dt: 0.1,
        }
    }
}

/// The layer kinds of the catalog. Fully-connected layers act on a batch of
/// `batch` stacked samples with shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Affine map `x~ = W^T x + b` per sample; `w = (vec W; b)` with the
    /// columns of `W` (fan-in weights of each output) stored contiguously.
    FullyConnected {
        in_features: usize,
        out_features: usize,
        batch: usize,
    },
    /// Parameter-free elementwise activation.
    Elementwise {
        features: usize,
        batch: usize,
        act: Activation,
    },
    /// One explicit Euler step of the controlled pendulum on state
    /// `(theta, omega)` with a scalar torque parameter.
    PendulumStep(PendulumDynamics),
    /// Composite `act(W^T x + b)`, the usual dense network layer.
    AffineActivation {
        in_features: usize,
        out_features: usize,
        batch: usize,
        act: Activation,
    },
}

/// One computation of a chain, `phi_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
}

impl Layer {
    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        Layer {
            kind: LayerKind::FullyConnected {
                in_features,
                out_features,
                batch: 1,
            },
        }
    }

    pub fn elementwise(features: usize, act: Activation) -> Self {
        Layer {
            kind: LayerKind::Elementwise {
                features,
                batch: 1,
                act,
            },
        }
    }

    pub fn pendulum_step(dyn_: PendulumDynamics) -> Self {
        Layer {
            kind: LayerKind::PendulumStep(dyn_),
        }
    }

    pub fn affine_activation(in_features: usize, out_features: usize, act: Activation) -> Self {
        Layer {
            kind: LayerKind::AffineActivation {
                in_features,
                out_features,
                batch: 1,
                act,
            },
        }
    }

    pub fn param_dim(&self) -> usize {
        match &self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
                ..
            }
            | LayerKind::AffineActivation {
                in_features,
                out_features,
                ..
            } => in_features * out_features + out_features,
            LayerKind::Elementwise { .. } => 0,
            LayerKind::PendulumStep(_) => 1,
        }
    }

    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::FullyConnected {
                in_features, batch, ..
            }
            | LayerKind::AffineActivation {
                in_features, batch, ..
            } => in_features * batch,
            LayerKind::Elementwise { features, batch, .. } => features * batch,
            LayerKind::PendulumStep(_) => 2,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::FullyConnected {
                out_features, batch, ..
            }
            | LayerKind::AffineActivation {
                out_features, batch, ..
            } => out_features * batch,
            LayerKind::Elementwise { features, batch, .. } => features * batch,
            LayerKind::PendulumStep(_) => 2,
        }
    }

    /// Same layer applied to a batch of `m` stacked samples.
    pub fn with_batch(&self, m: usize) -> Result<Layer> {
        let mut kind = self.kind.clone();
        match &mut kind {
            LayerKind::FullyConnected { batch, .. }
            | LayerKind::AffineActivation { batch, .. }
            | LayerKind::Elementwise { batch, .. } => *batch = m,
            LayerKind::PendulumStep(_) => {
                if m != 1 {
                    return Err(Error::Config(
                        "pendulum-step layers cannot be batched".into(),
                    ));
                }
            }
        }
        Ok(Layer { kind })
    }

    pub fn is_smooth(&self) -> bool {
        match &self.kind {
            LayerKind::FullyConnected { .. } | LayerKind::PendulumStep(_) => true,
            LayerKind::Elementwise { act, .. } | LayerKind::AffineActivation { act, .. } => {
                act.is_smooth()
            }
        }
    }

    /// Whether `phi(., x)` is affine in the parameters for every `x`.
    pub fn affine_in_params(&self) -> bool {
        match &self.kind {
            LayerKind::FullyConnected { .. } | LayerKind::PendulumStep(_) => true,
            LayerKind::Elementwise { .. } => true, // no parameters at all
            LayerKind::AffineActivation { act, .. } => matches!(act, Activation::Identity),
        }
    }

    /// Whether `phi(w, .)` is affine in the state for every `w`.
    pub fn affine_in_state(&self) -> bool {
        match &self.kind {
            LayerKind::FullyConnected { .. } => true,
            LayerKind::Elementwise { act, .. } | LayerKind::AffineActivation { act, .. } => {
                matches!(act, Activation::Identity)
            }
            LayerKind::PendulumStep(_) => false,
        }
    }

    fn check_dims(&self, w: &Vector, x: &Vector) -> Result<()> {
        if w.dim() != self.param_dim() {
            return Err(Error::DimMismatch {
                context: "layer params",
                expected: self.param_dim(),
                got: w.dim(),
            });
        }
        if x.dim() != self.in_dim() {
            return Err(Error::DimMismatch {
                context: "layer input",
                expected: self.in_dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// `phi(w, x)`.
    pub fn eval(&self, w: &Vector, x: &Vector) -> Result<Vector> {
        self.check_dims(w, x)?;
        Ok(match &self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
                batch,
            } => affine_eval(w, x, *in_features, *out_features, *batch),
            LayerKind::Elementwise { act, .. } => {
                Vector::from_fn(x.dim(), |i| act.apply(x[i]))
            }
            LayerKind::PendulumStep(p) => pendulum_eval(p, w[0], x),
            LayerKind::AffineActivation {
                in_features,
                out_features,
                batch,
                act,
            } => {
                let z = affine_eval(w, x, *in_features, *out_features, *batch);
                Vector::from_fn(z.dim(), |i| act.apply(z[i]))
            }
        })
    }

    /// Jacobian-transpose product with respect to the state:
    /// `(d phi / d x)^T lam`, the gradient of `lam . phi(w, .)` at `x`.
    pub fn vjp_state(&self, w: &Vector, x: &Vector, lam: &Vector) -> Vector {
        debug_assert_eq!(lam.dim(), self.out_dim());
        match &self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
                batch,
            } => affine_vjp_state(w, lam, *in_features, *out_features, *batch),
            LayerKind::Elementwise { act, .. } => {
                Vector::from_fn(x.dim(), |i| act.derivative(x[i]) * lam[i])
            }
            LayerKind::PendulumStep(p) => {
                let j = pendulum_jac_state(p, x);
                j.transpose().matvec(lam).unwrap()
            }
            LayerKind::AffineActivation {
                in_features,
                out_features,
                batch,
                act,
            } => {
                let z = affine_eval(w, x, *in_features, *out_features, *batch);
                let scaled = Vector::from_fn(z.dim(), |i| act.derivative(z[i]) * lam[i]);
                affine_vjp_state(w, &scaled, *in_features, *out_features, *batch)
            }
        }
    }

    /// Jacobian-transpose product with respect to the parameters:
    /// `(d phi / d w)^T lam`, the gradient of `lam . phi(., x)` at `w`.
    pub fn vjp_params(&self, w: &Vector, x: &Vector, lam: &Vector) -> Vector {
        debug_assert_eq!(lam.dim(), self.out_dim());
        match &self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
                batch,
            } => affine_vjp_params(x, lam, *in_features, *out_features, *batch),
            LayerKind::Elementwise { .. } => Vector::zeros(0),
            LayerKind::PendulumStep(p) => {
                let c = p.dt / (p.mass * p.length * p.length);
                Vector::from_slice(&[c * lam[1]])
            }
            LayerKind::AffineActivation {
                in_features,
                out_features,
                batch,
                act,
            } => {
                let z = affine_eval(w, x, *in_features, *out_features, *batch);
                let scaled = Vector::from_fn(z.dim(), |i| act.derivative(z[i]) * lam[i]);
                affine_vjp_params(x, &scaled, *in_features, *out_features, *batch)
            }
        }
    }

    /// Dense Jacobian `d phi / d x` (out_dim x in_dim). Meant for small
    /// instances; oracles use the structural products above.
    pub fn jacobian_state(&self, w: &Vector, x: &Vector) -> Matrix {
        match &self.kind {
            LayerKind::PendulumStep(p) => pendulum_jac_state(p, x),
            _ => {
                let (m, n) = (self.out_dim(), self.in_dim());
                let mut jt = Matrix::zeros(m, n);
                for i in 0..m {
                    let row = self.vjp_state(w, x, &Vector::basis(m, i));
                    for j in 0..n {
                        jt.set(i, j, row[j]);
                    }
                }
                jt
            }
        }
    }

    /// Dense Jacobian `d phi / d w` (out_dim x param_dim).
    pub fn jacobian_params(&self, w: &Vector, x: &Vector) -> Matrix {
        let (m, n) = (self.out_dim(), self.param_dim());
        let mut j = Matrix::zeros(m, n);
        for i in 0..m {
            let row = self.vjp_params(w, x, &Vector::basis(m, i));
            for k in 0..n {
                j.set(i, k, row[k]);
            }
        }
        j
    }

    /// Analytic `(l, L)` of `phi(w, .)`: Lipschitz and smoothness constants
    /// in the state direction. `None` where no easy constant exists
    /// (caller-supplied constants are used instead).
    pub fn state_constants(&self, w: &Vector) -> Option<(f64, f64)> {
        match &self.kind {
            LayerKind::FullyConnected {
                in_features,
                out_features,
                ..
            } => {
                // l = |W|_2,2 bounded by the Frobenius norm; affine so L = 0.
                let wf = weight_frobenius(w, *in_features, *out_features);
                Some((wf, 0.0))
            }
            LayerKind::Elementwise { act, .. } => {
                let (l, big_l) = act.constants();
                big_l.map(|bl| (l, bl))
            }
            LayerKind::PendulumStep(p) => {
                let d = p.dt;
                let ml2 = p.mass * p.length * p.length;
                let a21 = d * p.gravity / p.length;
                let a22 = 1.0 - d * p.friction / ml2;
                let frob = (1.0 + d * d + a21 * a21 + a22 * a22).sqrt();
                Some((frob, a21))
            }
            LayerKind::AffineActivation {
                in_features,
                out_features,
                act,
                ..
            } => {
                let (la, big_la) = act.constants();
                let wf = weight_frobenius(w, *in_features, *out_features);
                big_la.map(|bl| (la * wf, bl * wf * wf))
            }
        }
    }

    /// Analytic `(l, L)` of `phi(., x)` in the parameter direction.
    pub fn param_constants(&self, x: &Vector) -> Option<(f64, f64)> {
        match &self.kind {
            LayerKind::FullyConnected {
                in_features, batch, ..
            } => {
                let r = per_sample_max_norm(x, *in_features, *batch);
                Some(((r * r + 1.0).sqrt() * (*batch as f64).sqrt(), 0.0))
            }
            LayerKind::Elementwise { .. } => Some((0.0, 0.0)),
            LayerKind::PendulumStep(p) => {
                Some((p.dt / (p.mass * p.length * p.length), 0.0))
            }
            LayerKind::AffineActivation {
                in_features,
                batch,
                act,
                ..
            } => {
                let (la, big_la) = act.constants();
                let r2 = {
                    let r = per_sample_max_norm(x, *in_features, *batch);
                    r * r + 1.0
                };
                big_la.map(|bl| {
                    (
                        la * r2.sqrt() * (*batch as f64).sqrt(),
                        bl * r2 * *batch as f64,
                    )
                })
            }
        }
    }
}

fn per_sample_max_norm(x: &Vector, d: usize, batch: usize) -> f64 {
    let mut best = 0.0f64;
    for s in 0..batch {
        let mut acc = 0.0;
        for i in 0..d {
            let v = x[s * d + i];
            acc += v * v;
        }
        best = best.max(acc.sqrt());
    }
    best
}

fn weight_frobenius(w: &Vector, d: usize, e: usize) -> f64 {
    w.as_slice()[..d * e].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `out[s,j] = b_j + sum_i W[i,j] x[s,i]`, W column j at `w[j*d .. (j+1)*d]`.
fn affine_eval(w: &Vector, x: &Vector, d: usize, e: usize, batch: usize) -> Vector {
    let ws = w.as_slice();
    let xs = x.as_slice();
    let bias = &ws[d * e..];
    let mut out = vec![0.0; e * batch];
    for s in 0..batch {
        let xrow = &xs[s * d..(s + 1) * d];
        for j in 0..e {
            let col = &ws[j * d..(j + 1) * d];
            let mut acc = bias[j];
            for i in 0..d {
                acc += col[i] * xrow[i];
            }
            out[s * e + j] = acc;
        }
    }
    Vector::from_raw(out)
}

/// `(d phi/d x)^T lam`: per sample `W lam_s`.
fn affine_vjp_state(w: &Vector, lam: &Vector, d: usize, e: usize, batch: usize) -> Vector {
    let ws = w.as_slice();
    let ls = lam.as_slice();
    let mut out = vec![0.0; d * batch];
    for s in 0..batch {
        let lrow = &ls[s * e..(s + 1) * e];
        let orow = &mut out[s * d..(s + 1) * d];
        for j in 0..e {
            let lj = lrow[j];
            if lj == 0.0 {
                continue;
            }
            let col = &ws[j * d..(j + 1) * d];
            for i in 0..d {
                orow[i] += col[i] * lj;
            }
        }
    }
    Vector::from_raw(out)
}

/// `(d phi/d w)^T lam`: weight block `sum_s x[s,i] lam[s,j]`, bias `sum_s lam[s,j]`.
fn affine_vjp_params(x: &Vector, lam: &Vector, d: usize, e: usize, batch: usize) -> Vector {
    let xs = x.as_slice();
    let ls = lam.as_slice();
    let mut out = vec![0.0; d * e + e];
    for s in 0..batch {
        let xrow = &xs[s * d..(s + 1) * d];
        let lrow = &ls[s * e..(s + 1) * e];
        for j in 0..e {
            let lj = lrow[j];
            if lj == 0.0 {
                continue;
            }
            let col = &mut out[j * d..(j + 1) * d];
            for i in 0..d {
                col[i] += xrow[i] * lj;
            }
        }
    }
    for j in 0..e {
        let mut acc = 0.0;
        for s in 0..batch {
            acc += ls[s * e + j];
        }
        out[d * e + j] = acc;
    }
    Vector::from_raw(out)
}

fn pendulum_eval(p: &PendulumDynamics, torque: f64, x: &Vector) -> Vector {
    let (theta, omega) = (x[0], x[1]);
    let ml2 = p.mass * p.length * p.length;
    let theta_next = theta + p.dt * omega;
    let omega_next = omega
        + p.dt * (-(p.gravity / p.length) * theta.sin() - (p.friction / ml2) * omega + torque / ml2);
    Vector::from_raw(vec![theta_next, omega_next])
}

fn pendulum_jac_state(p: &PendulumDynamics, x: &Vector) -> Matrix {
    let ml2 = p.mass * p.length * p.length;
    Matrix::from_rows(&[
        &[1.0, p.dt],
        &[
            -p.dt * (p.gravity / p.length) * x[0].cos(),
            1.0 - p.dt * p.friction / ml2,
        ],
    ])
}
