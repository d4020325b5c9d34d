//! Differentiable programming with pluggable first-order oracles.
//!
//! A *chain of computations* is a composition `x_t = phi_t(w_t, x_{t-1})`
//! parameterized by block parameters `w = (w_1; ...; w_tau)`, optimized
//! against a terminal objective `h(x_tau)`. The classical first-order oracle
//! for such a chain is gradient back-propagation. This crate makes the oracle
//! pluggable: the backward pass may instead propagate Moreau envelope
//! gradients (proximal steps on the Lagrangian), blocks of an augmented
//! Lagrangian method, virtual targets through regularized layer inverses, or
//! proximal parameter updates with classical duals.
//!
//! The layer-local building block shared by all non-classical oracles is the
//! Moreau envelope
//!
//! ```text
//! env(a f)(x) = min_y { a f(x + y) + |y|^2 / 2 },
//! grad env(a f)(x) = -argmin_y { a f(x + y) + |y|^2 / 2 },
//! ```
//!
//! whose subproblems are solved either in closed form (recognized quadratic
//! structure) or by a configurable iterative inner solver.
//!
//! Module map:
//! - [`numerics`]: dense vectors/matrices, seeded RNG, finite differences and
//!   a brute-force minimizer used as independent test oracles.
//! - [`chain`]: layer catalog, forward evaluation, Lipschitz/smoothness
//!   estimation, step-size schedules.
//! - [`envelope`]: Moreau gradients (closed forms + inner solvers) and the
//!   dual chain rule for a single composition.
//! - [`oracles`]: the six first-order oracle families over a chain.
//! - [`optimize`]: outer loops, mini-batch training, grid search, and
//!   convergence-bound checkers.
//! - [`cli`]: experiment configuration, datasets, drivers and CSV/JSON output.
//!
//! See the `examples/` directory for runnable entry points, one per
//! capability, and the `morprop` binary for the experiment drivers.

pub mod chain;
pub mod cli;
pub mod envelope;
mod error;
pub mod numerics;
pub mod oracles;
pub mod optimize;

pub use error::{Error, Result};
