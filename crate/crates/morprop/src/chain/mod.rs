//! Parameterized chains of computations: `f(w, x_0) = x_tau` with
//! `x_t = phi_t(w_t, x_{t-1})` and block parameters `w = (w_1; ...; w_tau)`.

mod layer;
mod objective;

pub use layer::{
    Activation, Layer, LayerKind, PendulumDynamics, TANH_SMOOTHNESS,
};
pub use objective::{Objective, QuadForm, QuadMatrix};

use crate::error::{Error, Result};
use crate::numerics::{SeedRng, Vector};

/// A map between vector spaces with a Jacobian-transpose product, the shape
/// shared by layer partial applications and test maps.
pub trait VectorMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval(&self, u: &Vector) -> Vector;
    /// `(d map / d u)^T lam`.
    fn vjp(&self, u: &Vector, lam: &Vector) -> Vector;
    /// True when the map is affine in `u` (constant Jacobian).
    fn is_affine(&self) -> bool {
        false
    }
}

/// `u -> phi(u, x)` for a fixed state input.
pub struct LayerInParams<'a> {
    pub layer: &'a Layer,
    pub x: &'a Vector,
}

impl VectorMap for LayerInParams<'_> {
    fn in_dim(&self) -> usize {
        self.layer.param_dim()
    }
    fn out_dim(&self) -> usize {
        self.layer.out_dim()
    }
    fn eval(&self, u: &Vector) -> Vector {
        self.layer.eval(u, self.x).expect("layer dims")
    }
    fn vjp(&self, u: &Vector, lam: &Vector) -> Vector {
        self.layer.vjp_params(u, self.x, lam)
    }
    fn is_affine(&self) -> bool {
        self.layer.affine_in_params()
    }
}

/// `u -> phi(w, u)` for fixed parameters.
pub struct LayerInState<'a> {
    pub layer: &'a Layer,
    pub w: &'a Vector,
}

impl VectorMap for LayerInState<'_> {
    fn in_dim(&self) -> usize {
        self.layer.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.layer.out_dim()
    }
    fn eval(&self, u: &Vector) -> Vector {
        self.layer.eval(self.w, u).expect("layer dims")
    }
    fn vjp(&self, u: &Vector, lam: &Vector) -> Vector {
        self.layer.vjp_state(self.w, u, lam)
    }
    fn is_affine(&self) -> bool {
        self.layer.affine_in_state()
    }
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

/// An ordered sequence of layers with matching dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    layers: Vec<Layer>,
}

impl Chain {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a chain needs at least one layer".into()));
        }
        for t in 1..layers.len() {
            if layers[t].in_dim() != layers[t - 1].out_dim() {
                return Err(Error::DimMismatch {
                    context: "chain layer dims",
                    expected: layers[t - 1].out_dim(),
                    got: layers[t].in_dim(),
                });
            }
        }
        Ok(Chain { layers })
    }

    pub fn tau(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, t: usize) -> &Layer {
        &self.layers[t]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.param_dim()).collect()
    }

    /// Same architecture applied to a batch of `m` stacked samples.
    pub fn with_batch(&self, m: usize) -> Result<Chain> {
        Chain::new(
            self.layers
                .iter()
                .map(|l| l.with_batch(m))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Forward evaluation returning all states `(x_0, ..., x_tau)`.
    ///
    /// Errors when a layer produces a non-finite state, naming the layer.
    pub fn forward(&self, params: &BlockParams, x0: &Vector) -> Result<Vec<Vector>> {
        params.check(self)?;
        if x0.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                context: "chain input",
                expected: self.input_dim(),
                got: x0.dim(),
            });
        }
        let mut states = Vec::with_capacity(self.tau() + 1);
        states.push(x0.clone());
        for (t, layer) in self.layers.iter().enumerate() {
            let next = layer.eval(params.block(t), &states[t])?;
            if !next.is_finite() {
                return Err(Error::NonFiniteState { layer: t });
            }
            states.push(next);
        }
        Ok(states)
    }

    /// Objective value `h(f(w, x0))`.
    pub fn objective_value(
        &self,
        params: &BlockParams,
        x0: &Vector,
        h: &Objective,
    ) -> Result<f64> {
        let states = self.forward(params, x0)?;
        Ok(h.value(states.last().unwrap()))
    }

    /// Per-layer Gaussian initialization with standard deviation
    /// `1/sqrt(fan-in)`.
    pub fn init_params(&self, rng: &mut SeedRng) -> BlockParams {
        let blocks = self
            .layers
            .iter()
            .map(|l| {
                let p = l.param_dim();
                if p == 0 {
                    return Vector::zeros(0);
                }
                let std = 1.0 / (l.in_dim().max(1) as f64).sqrt();
                rng.normal_vector(p).scale(std)
            })
            .collect();
        BlockParams { blocks }
    }

    pub fn zero_params(&self) -> BlockParams {
        BlockParams {
            blocks: self.layers.iter().map(|l| Vector::zeros(l.param_dim())).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// BlockParams
// ---------------------------------------------------------------------------

/// Block-structured parameter vector `w = (w_1; ...; w_tau)`. The block
/// selector `E_t` is realized by [`BlockParams::block`] and
/// [`BlockParams::with_block`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    blocks: Vec<Vector>,
}

impl BlockParams {
    pub fn new(blocks: Vec<Vector>) -> Self {
        BlockParams { blocks }
    }

    pub fn check(&self, chain: &Chain) -> Result<()> {
        if self.blocks.len() != chain.tau() {
            return Err(Error::DimMismatch {
                context: "param blocks",
                expected: chain.tau(),
                got: self.blocks.len(),
            });
        }
        for (t, b) in self.blocks.iter().enumerate() {
            if b.dim() != chain.layer(t).param_dim() {
                return Err(Error::DimMismatch {
                    context: "param block dim",
                    expected: chain.layer(t).param_dim(),
                    got: b.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, t: usize) -> &Vector {
        &self.blocks[t]
    }

    pub fn blocks(&self) -> &[Vector] {
        &self.blocks
    }

    /// Copy with block `t` replaced (insertion through `E_t`).
    pub fn with_block(&self, t: usize, v: Vector) -> BlockParams {
        let mut out = self.clone();
        out.blocks[t] = v;
        out
    }

    /// Copy with `delta_t` added to block `t` (perturbation `w + E_t v_t`).
    pub fn with_block_delta(&self, t: usize, delta: &Vector) -> BlockParams {
        let mut out = self.clone();
        out.blocks[t] = out.blocks[t].add(delta);
        out
    }

    /// `w - s * g` blockwise.
    pub fn step(&self, s: f64, g: &[Vector]) -> BlockParams {
        BlockParams {
            blocks: self
                .blocks
                .iter()
                .zip(g.iter())
                .map(|(w, gt)| w.axpy(-s, gt))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vector {
        let mut acc = Vec::new();
        for b in &self.blocks {
            acc.extend_from_slice(b.as_slice());
        }
        Vector::from_slice(&acc)
    }
}

// ---------------------------------------------------------------------------
// Lipschitz estimation and step-size bounds
// ---------------------------------------------------------------------------

/// Per-prefix Lipschitz/smoothness upper bounds of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimates {
    /// `l_t` for t = 0..=tau, with `l_0 = 0`.
    pub ell: Vec<f64>,
    /// `L_t` for t = 0..=tau, with `L_0 = 0`.
    pub smooth: Vec<f64>,
}

impl LipschitzEstimates {
    pub fn chain_lipschitz(&self) -> f64 {
        *self.ell.last().unwrap()
    }
    pub fn chain_smoothness(&self) -> f64 {
        *self.smooth.last().unwrap()
    }
}

/// Exact evaluation of the prefix recursions
/// `l_t = l_phi (1 + l_{t-1})` and `L_t = L_{t-1} l_phi + L_phi (1 + l_{t-1})^2`
/// from per-layer constants `(l_phi, L_phi)`.
pub fn lipschitz_estimates(per_layer: &[(f64, f64)]) -> LipschitzEstimates {
    let mut ell = vec![0.0];
    let mut smooth = vec![0.0];
    for &(l_phi, big_l_phi) in per_layer {
        let prev_l = *ell.last().unwrap();
        let prev_s = *smooth.last().unwrap();
        ell.push(l_phi + prev_l * l_phi);
        smooth.push(prev_s * l_phi + big_l_phi * (1.0 + prev_l) * (1.0 + prev_l));
    }
    LipschitzEstimates { ell, smooth }
}

/// Analytic per-layer `(l, L)` state-direction constants along a trajectory,
/// where available.
pub fn analytic_layer_constants(
    chain: &Chain,
    params: &BlockParams,
) -> Option<Vec<(f64, f64)>> {
    chain
        .layers()
        .iter()
        .enumerate()
        .map(|(t, l)| l.state_constants(params.block(t)))
        .collect()
}

/// The `c_t = l_h L_{phi_t} prod_{s>t} l_{phi_s}` sequence, and the
/// admissible state step-sizes `gamma_t <= 1/c_{t+1}` for `t = 0..tau-1`.
/// A zero `c` makes the corresponding bound unbounded (`None`).
///
/// The same `c_t` bound the admissible parameter steps `alpha <= 1/c_t` when
/// the supplied `L` constants are taken in the parameter direction.
#[derive(Debug, Clone)]
pub struct StepsizeBounds {
    /// `c_t` for t = 1..=tau (index 0 unused).
    pub c: Vec<f64>,
    /// `gamma_max[t] = 1/c_{t+1}` for t = 0..tau-1; `None` means unbounded.
    pub gamma_max: Vec<Option<f64>>,
}

pub fn theoretical_stepsizes(per_layer: &[(f64, f64)], ell_h: f64) -> StepsizeBounds {
    let tau = per_layer.len();
    let mut c = vec![0.0; tau + 1];
    for t in 1..=tau {
        let mut prod = 1.0;
        for s in (t + 1)..=tau {
            prod *= per_layer[s - 1].0;
        }
        c[t] = ell_h * per_layer[t - 1].1 * prod;
    }
    let gamma_max = (0..tau)
        .map(|t| {
            let ct = c[t + 1];
            if ct == 0.0 {
                None
            } else {
                Some(1.0 / ct)
            }
        })
        .collect();
    StepsizeBounds { c, gamma_max }
}

// ---------------------------------------------------------------------------
// Step-size schedule
// ---------------------------------------------------------------------------

/// The geometric backward schedule `gamma_t = gamma^(tau - t + 1)`,
/// `alpha_t = alpha * gamma_{t+1}` with the boundary `gamma_{tau+1} = 1`
/// (so the last layer's parameter step is `alpha`).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `gamma_t` for t = 0..=tau.
    pub gamma: Vec<f64>,
    /// `alpha_t` for t = 1..=tau (index 0 unused).
    pub alpha: Vec<f64>,
}

impl Schedule {
    pub fn tau(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn gamma_t(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub fn alpha_t(&self, t: usize) -> f64 {
        self.alpha[t]
    }
}

pub fn schedule(gamma: f64, alpha: f64, tau: usize) -> Schedule {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma in (0, 1]");
    assert!(alpha > 0.0, "alpha > 0");
    // gamma_t = gamma^(tau - t + 1) for t = 0..=tau; gamma_{tau+1} = 1.
    let gammas: Vec<f64> = (0..=tau + 1)
        .map(|t| gamma.powi((tau as i32) - (t as i32) + 1))
        .collect();
    let alphas: Vec<f64> = (0..=tau).map(|t| alpha * gammas[t + 1]).collect();
    Schedule {
        gamma: gammas[..=tau].to_vec(),
        alpha: alphas,
    }
}
