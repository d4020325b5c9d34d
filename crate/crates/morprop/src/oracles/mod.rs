//! First-order oracle families over a chain of computations, all sharing one
//! forward-tape abstraction:
//!
//! - classical gradient back-propagation (linear forms, Jacobian products),
//! - Moreau back-propagation (proximal point on the Lagrangian),
//! - augmented-Lagrangian back-propagation,
//! - target propagation (block minimization on the penalized formulation),
//! - regularized target propagation (proximal point on the penalized
//!   formulation),
//! - proximal back-propagation (classical duals, proximal parameter step).
//!
//! Setting `kappa = 0` and `beta_t = 1/gamma_t` in the augmented-Lagrangian
//! pass reproduces the Moreau pass; setting `beta_t = 0` reproduces
//! regularized target propagation. Both reductions hold bitwise here because
//! every pass funnels its layer-local solves through the shared
//! [`ProxSubproblem`].

mod subproblem;

pub use subproblem::ProxSubproblem;

use crate::chain::{BlockParams, Chain, LayerInParams, LayerInState, Objective, Schedule, VectorMap};
use crate::envelope::{moreau_grad, EnvelopeResult, InnerSolverConfig};
use crate::error::{Error, Result, SubproblemSide};
use crate::numerics::Vector;

// ---------------------------------------------------------------------------
// Tape and oracle output types
// ---------------------------------------------------------------------------

/// Forward tape: the states `(x_0, ..., x_tau)` together with the layer
/// contexts `(phi_t, w_t, x_{t-1})`. The per-layer non-linear forms of the
/// non-classical oracles (envelope or penalized subproblems in the state or
/// parameter slot) are solved on demand from this context by the backward
/// passes; the classical oracle reads its Jacobian products from the same
/// context.
#[derive(Debug, Clone)]
pub struct OracleTape<'a> {
    chain: &'a Chain,
    params: BlockParams,
    states: Vec<Vector>,
}

impl<'a> OracleTape<'a> {
    pub fn tau(&self) -> usize {
        self.chain.tau()
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    /// `x_t` for t = 0..=tau.
    pub fn state(&self, t: usize) -> &Vector {
        &self.states[t]
    }

    pub fn output(&self) -> &Vector {
        self.states.last().unwrap()
    }

    pub fn params(&self) -> &BlockParams {
        &self.params
    }

    pub fn chain(&self) -> &Chain {
        self.chain
    }

    /// Layer-t context `(layer, w_t, x_{t-1})`, t in 1..=tau.
    fn ctx(&self, t: usize) -> (&crate::chain::Layer, &Vector, &Vector) {
        (self.chain.layer(t - 1), self.params.block(t - 1), &self.states[t - 1])
    }
}

/// Forward pass storing the tape. All oracle families start here.
pub fn forward_tape<'a>(
    chain: &'a Chain,
    params: &BlockParams,
    x0: &Vector,
) -> Result<OracleTape<'a>> {
    let states = chain.forward(params, x0)?;
    Ok(OracleTape {
        chain,
        params: params.clone(),
        states,
    })
}

/// Lagrange-multiplier estimates `lambda_t`, t = 1..=tau.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambdas: Vec<Vector>,
}

impl DualState {
    pub fn lambda(&self, t: usize) -> &Vector {
        &self.lambdas[t - 1]
    }
}

/// Back-propagated virtual targets `x_t^+`, t = 1..=tau.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub targets: Vec<Vector>,
}

impl Targets {
    pub fn target(&self, t: usize) -> &Vector {
        &self.targets[t - 1]
    }
}

/// Per-block oracle output. Delta oracles produce a step to subtract
/// (`w <- w - g`), replacement oracles produce the next parameters directly
/// (`w <- w+`); the apply rule is carried by the type.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutput {
    Delta(Vec<Vector>),
    Replacement(Vec<Vector>),
}

impl OracleOutput {
    pub fn blocks(&self) -> &[Vector] {
        match self {
            OracleOutput::Delta(b) | OracleOutput::Replacement(b) => b,
        }
    }

    pub fn is_delta(&self) -> bool {
        matches!(self, OracleOutput::Delta(_))
    }

    /// Apply to the current parameters according to the output mode.
    pub fn apply(&self, params: &BlockParams) -> BlockParams {
        match self {
            OracleOutput::Delta(g) => params.step(1.0, g),
            OracleOutput::Replacement(w) => BlockParams::new(w.clone()),
        }
    }

    /// Euclidean norm of the stacked blocks (step norm for delta oracles,
    /// displacement norm against `params` for replacement oracles).
    pub fn surrogate_norm(&self, params: &BlockParams) -> f64 {
        match self {
            OracleOutput::Delta(g) => {
                g.iter().map(|v| v.dot(v)).sum::<f64>().sqrt()
            }
            OracleOutput::Replacement(w) => w
                .iter()
                .zip(params.blocks())
                .map(|(a, b)| {
                    let d = a.sub(b);
                    d.dot(&d)
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

fn backward_err(layer: usize, side: SubproblemSide) -> impl FnOnce(Error) -> Error {
    move |source| Error::BackwardDivergence {
        layer,
        side,
        source: Box::new(source),
    }
}

// ---------------------------------------------------------------------------
// Classical back-propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BackpropResult {
    pub output: OracleOutput,
    pub duals: DualState,
    /// `lambda_0`, the gradient with respect to the chain input.
    pub input_grad: Vector,
    pub objective: f64,
}

impl BackpropResult {
    pub fn gradient_norm(&self) -> f64 {
        self.output
            .blocks()
            .iter()
            .map(|g| g.dot(g))
            .sum::<f64>()
            .sqrt()
    }
}

/// Classical reverse-mode pass: `lambda_tau = grad h(x_tau)`,
/// `lambda_{t-1} = (d phi_t/d x)^T lambda_t`, `g_t = (d phi_t/d w)^T lambda_t`.
/// A decomposable regularizer `(reg/2)|w_t|^2` adds `reg w_t` to each block.
pub fn backprop(
    chain: &Chain,
    params: &BlockParams,
    x0: &Vector,
    h: &Objective,
    reg: f64,
) -> Result<BackpropResult> {
    let tape = forward_tape(chain, params, x0)?;
    backprop_on_tape(&tape, h, reg)
}

pub fn backprop_on_tape(tape: &OracleTape<'_>, h: &Objective, reg: f64) -> Result<BackpropResult> {
    let tau = tape.tau();
    let mut lam = h.gradient(tape.output());
    let mut lambdas = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        lambdas[t - 1] = lam.clone();
        let mut g = layer.vjp_params(w_t, x_prev, &lam);
        if reg != 0.0 && g.dim() > 0 {
            g = g.axpy(reg, w_t);
        }
        blocks[t - 1] = g;
        lam = layer.vjp_state(w_t, x_prev, &lam);
    }
    Ok(BackpropResult {
        output: OracleOutput::Delta(blocks),
        duals: DualState { lambdas },
        input_grad: lam,
        objective: h.value(tape.output()),
    })
}

// ---------------------------------------------------------------------------
// Moreau back-propagation
// ---------------------------------------------------------------------------

/// Forward pass of the Moreau oracle: the tape whose stored forms are the
/// envelope subproblems `lam -> grad env(lam.phi_t(., x_{t-1}))(w_t)` and
/// `lam -> grad env(lam.phi_t(w_t, .))(x_{t-1})`, solved on demand.
pub fn moreau_forward<'a>(
    chain: &'a Chain,
    params: &BlockParams,
    x0: &Vector,
) -> Result<OracleTape<'a>> {
    forward_tape(chain, params, x0)
}

/// Evaluate the stored state form `grad env(lam.phi_t(w_t, .))(x_{t-1})`
/// for an arbitrary dual weight (exposed for tests of the tape contract).
pub fn tape_state_form(
    tape: &OracleTape<'_>,
    t: usize,
    lam: &Vector,
    cfg: &InnerSolverConfig,
) -> Result<Vector> {
    let (layer, w_t, x_prev) = tape.ctx(t);
    let map = LayerInState { layer, w: w_t };
    let sub = ProxSubproblem {
        map: &map,
        lam: Some(lam),
        rho: 1.0,
        anchor: x_prev,
        kappa: 0.0,
        target: None,
        reg: 0.0,
    };
    let out = sub.solve(cfg).map_err(backward_err(t, SubproblemSide::State))?;
    Ok(x_prev.sub(&out.point))
}

/// Evaluate the stored parameter form `grad env(lam.phi_t(., x_{t-1}))(w_t)`.
pub fn tape_param_form(
    tape: &OracleTape<'_>,
    t: usize,
    lam: &Vector,
    cfg: &InnerSolverConfig,
) -> Result<Vector> {
    let (layer, w_t, x_prev) = tape.ctx(t);
    let map = LayerInParams { layer, x: x_prev };
    let sub = ProxSubproblem {
        map: &map,
        lam: Some(lam),
        rho: 1.0,
        anchor: w_t,
        kappa: 0.0,
        target: None,
        reg: 0.0,
    };
    let out = sub.solve(cfg).map_err(backward_err(t, SubproblemSide::Params))?;
    Ok(w_t.sub(&out.point))
}

#[derive(Debug, Clone)]
pub struct MoreauBackwardResult {
    pub output: OracleOutput,
    pub duals: DualState,
    pub head: EnvelopeResult,
}

/// Backward pass of the Moreau oracle:
///
/// ```text
/// lambda_tau  = grad env(gamma_tau h)(x_tau) / gamma_tau
/// g_t         = grad env(alpha_t lambda_t . phi_t(., x_{t-1}))(w_t)
/// lambda_{t-1} = grad env(gamma_{t-1} lambda_t . phi_t(w_t, .))(x_{t-1}) / gamma_{t-1}
/// ```
///
/// The state subproblem is solved in the numerically equivalent anchored form
/// `argmin_u lambda_t . phi_t(w_t, u) + |u - x_{t-1}|^2 / (2 gamma_{t-1})`.
/// `x_0` is fixed, so `lambda_0` is not computed. A decomposable regularizer
/// `(reg/2)|v|^2` is added inside each parameter subproblem.
pub fn moreau_backward(
    tape: &OracleTape<'_>,
    h: &Objective,
    schedule: &Schedule,
    cfg: &InnerSolverConfig,
    reg: f64,
) -> Result<MoreauBackwardResult> {
    let tau = tape.tau();
    assert_eq!(schedule.tau(), tau, "schedule length");
    let gamma_tau = schedule.gamma_t(tau);
    let head = moreau_grad(h, tape.output(), gamma_tau, cfg)?;
    let mut lam = head.moreau_gradient.scale(1.0 / gamma_tau);
    let mut lambdas = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        lambdas[t - 1] = lam.clone();
        let pmap = LayerInParams { layer, x: x_prev };
        let sub = ProxSubproblem {
            map: &pmap,
            lam: Some(&lam),
            rho: 1.0 / schedule.alpha_t(t),
            anchor: w_t,
            kappa: 0.0,
            target: None,
            reg,
        };
        let g = sub
            .solve(cfg)
            .map_err(backward_err(t, SubproblemSide::Params))?;
        blocks[t - 1] = w_t.sub(&g.point);
        if t >= 2 {
            let gamma_prev = schedule.gamma_t(t - 1);
            let smap = LayerInState { layer, w: w_t };
            let sub = ProxSubproblem {
                map: &smap,
                lam: Some(&lam),
                rho: 1.0 / gamma_prev,
                anchor: x_prev,
                kappa: 0.0,
                target: None,
                reg: 0.0,
            };
            let s = sub
                .solve(cfg)
                .map_err(backward_err(t, SubproblemSide::State))?;
            lam = x_prev.sub(&s.point).scale(1.0 / gamma_prev);
        }
    }
    Ok(MoreauBackwardResult {
        output: OracleOutput::Delta(blocks),
        duals: DualState { lambdas },
        head,
    })
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian
// ---------------------------------------------------------------------------

/// Configuration of the augmented-Lagrangian oracle.
#[derive(Debug, Clone)]
pub struct AugLagConfig {
    /// Penalty weight, `>= 0`.
    pub kappa: f64,
    /// Multiplier step sizes `beta_t`, t = 1..=tau (index 0 unused).
    pub beta: Vec<f64>,
    pub schedule: Schedule,
    /// Decomposable l2^2 regularization weight on the parameter subproblems.
    pub reg: f64,
    pub solver: InnerSolverConfig,
}

impl AugLagConfig {
    pub fn new(kappa: f64, beta: f64, schedule: Schedule, solver: InnerSolverConfig) -> Self {
        let tau = schedule.tau();
        AugLagConfig {
            kappa,
            beta: vec![beta; tau + 1],
            schedule,
            reg: 0.0,
            solver,
        }
    }

    /// `beta_t = 1/gamma_t`, the choice under which the pass reduces to the
    /// Moreau oracle at `kappa = 0`.
    pub fn with_beta_inverse_gamma(mut self) -> Self {
        for t in 1..=self.schedule.tau() {
            self.beta[t] = 1.0 / self.schedule.gamma_t(t);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa < 0.0 {
            return Err(Error::Config("kappa must be >= 0".into()));
        }
        if self.beta.iter().any(|b| *b < 0.0) {
            return Err(Error::Config("beta_t must be >= 0".into()));
        }
        if self
            .schedule
            .gamma
            .iter()
            .chain(self.schedule.alpha.iter().skip(1))
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::Config("schedule step sizes must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AugLagResult {
    pub output: OracleOutput,
    pub multipliers: DualState,
    pub targets: Targets,
}

/// Forward pass of the augmented-Lagrangian oracle: the tape whose stored
/// forms are the penalized subproblems of the backward pass below.
pub fn auglag_forward<'a>(
    chain: &'a Chain,
    params: &BlockParams,
    x0: &Vector,
    cfg: &AugLagConfig,
) -> Result<OracleTape<'a>> {
    cfg.validate()?;
    forward_tape(chain, params, x0)
}

/// Backward pass on the augmented Lagrangian, block order
/// `x_t -> lambda_t -> w_t` from `t = tau` down to 1:
///
/// ```text
/// x_tau+  = argmin h(y) + (1/gamma_tau + kappa)/2 |y - x_tau|^2
/// lam_t+  = beta_t (x_t - x_t+)
/// w_t+    = argmin lam_t+.phi_t(v, x_{t-1}) + |v - w_t|^2/(2 alpha_t)
///           + (kappa/2)|phi_t(v, x_{t-1}) - x_t+|^2 + (reg/2)|v|^2
/// x_{t-1}+ = argmin lam_t+.phi_t(w_t, y) + (1/gamma_{t-1} + kappa)/2 |y - x_{t-1}|^2
///           + (kappa/2)|phi_t(w_t, y) - x_t+|^2
/// ```
pub fn auglag_backward(
    tape: &OracleTape<'_>,
    h: &Objective,
    cfg: &AugLagConfig,
) -> Result<AugLagResult> {
    cfg.validate()?;
    let tau = tape.tau();
    assert_eq!(cfg.schedule.tau(), tau, "schedule length");
    let kappa = cfg.kappa;
    let head_weight = 1.0 / cfg.schedule.gamma_t(tau) + kappa;
    let head = moreau_grad(h, tape.output(), 1.0 / head_weight, &cfg.solver)?;
    let mut target = tape.output().add(&head.minimizer);
    let mut multipliers = vec![Vector::zeros(0); tau];
    let mut targets = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        targets[t - 1] = target.clone();
        let lam = tape.state(t).sub(&target).scale(cfg.beta[t]);
        multipliers[t - 1] = lam.clone();
        let lam_opt = if cfg.beta[t] == 0.0 { None } else { Some(&lam) };
        let penalty = if kappa == 0.0 { None } else { Some(&target) };
        let pmap = LayerInParams { layer, x: x_prev };
        let sub = ProxSubproblem {
            map: &pmap,
            lam: lam_opt,
            rho: 1.0 / cfg.schedule.alpha_t(t),
            anchor: w_t,
            kappa,
            target: penalty,
            reg: cfg.reg,
        };
        let wplus = sub
            .solve(&cfg.solver)
            .map_err(backward_err(t, SubproblemSide::Params))?;
        blocks[t - 1] = wplus.point;
        if t >= 2 {
            let smap = LayerInState { layer, w: w_t };
            let sub = ProxSubproblem {
                map: &smap,
                lam: lam_opt,
                rho: 1.0 / cfg.schedule.gamma_t(t - 1) + kappa,
                anchor: x_prev,
                kappa,
                target: penalty,
                reg: 0.0,
            };
            let xplus = sub
                .solve(&cfg.solver)
                .map_err(backward_err(t, SubproblemSide::State))?;
            target = xplus.point;
        }
    }
    Ok(AugLagResult {
        output: OracleOutput::Replacement(blocks),
        multipliers: DualState { lambdas: multipliers },
        targets: Targets { targets },
    })
}

// ---------------------------------------------------------------------------
// Target propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TargetPropResult {
    pub output: OracleOutput,
    pub targets: Targets,
    /// Residuals `|phi_t(w_t+, x_{t-1}) - x_t+|` of the layer fits.
    pub fit_residuals: Vec<f64>,
}

/// Block-coordinate minimization on the penalized formulation:
///
/// ```text
/// x_tau+   = x_tau - grad env(h / kappa)(x_tau)
/// w_t+     = argmin |phi_t(v, x_{t-1}) - x_t+|^2 / 2 (+ (reg/2)|v|^2)
/// x_{t-1}+ = argmin |phi_t(w_t, y) - x_t+|^2 / 2     (regularized inverse)
/// ```
///
/// Inverse subproblems are solved from the current point; ill-posed inverses
/// surface as solver divergence errors or non-zero fit residuals.
pub fn target_prop(
    chain: &Chain,
    params: &BlockParams,
    x0: &Vector,
    h: &Objective,
    kappa: f64,
    cfg: &InnerSolverConfig,
    reg: f64,
) -> Result<TargetPropResult> {
    if !(kappa > 0.0) {
        return Err(Error::Config("target propagation needs kappa > 0".into()));
    }
    let tape = forward_tape(chain, params, x0)?;
    let tau = tape.tau();
    let head = moreau_grad(h, tape.output(), 1.0 / kappa, cfg)?;
    let mut target = tape.output().add(&head.minimizer);
    let mut targets = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    let mut fit_residuals = vec![0.0; tau];
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        targets[t - 1] = target.clone();
        let pmap = LayerInParams { layer, x: x_prev };
        let sub = ProxSubproblem {
            map: &pmap,
            lam: None,
            rho: 0.0,
            anchor: w_t,
            kappa: 1.0,
            target: Some(&target),
            reg,
        };
        let wplus = sub
            .solve(cfg)
            .map_err(backward_err(t, SubproblemSide::Params))?;
        fit_residuals[t - 1] = VectorMap::eval(&pmap, &wplus.point).distance(&target);
        blocks[t - 1] = wplus.point;
        if t >= 2 {
            let smap = LayerInState { layer, w: w_t };
            let sub = ProxSubproblem {
                map: &smap,
                lam: None,
                rho: 0.0,
                anchor: x_prev,
                kappa: 1.0,
                target: Some(&target),
                reg: 0.0,
            };
            let xplus = sub
                .solve(cfg)
                .map_err(backward_err(t, SubproblemSide::State))?;
            target = xplus.point;
        }
    }
    Ok(TargetPropResult {
        output: OracleOutput::Replacement(blocks),
        targets: Targets { targets },
        fit_residuals,
    })
}

/// Proximal point method on the penalized formulation (regularized target
/// propagation): the target-propagation subproblems with added proximity
/// terms `(kappa + 1/gamma_{t-1})/2 |y - x_{t-1}|^2` and `|v - w_t|^2/(2 alpha_t)`.
/// Coincides with the augmented-Lagrangian pass at `beta_t = 0`.
pub fn reg_target_prop(
    chain: &Chain,
    params: &BlockParams,
    x0: &Vector,
    h: &Objective,
    kappa: f64,
    schedule: &Schedule,
    cfg: &InnerSolverConfig,
    reg: f64,
) -> Result<TargetPropResult> {
    if kappa < 0.0 {
        return Err(Error::Config("kappa must be >= 0".into()));
    }
    let tape = forward_tape(chain, params, x0)?;
    let tau = tape.tau();
    assert_eq!(schedule.tau(), tau, "schedule length");
    let head_weight = 1.0 / schedule.gamma_t(tau) + kappa;
    let head = moreau_grad(h, tape.output(), 1.0 / head_weight, cfg)?;
    let mut target = tape.output().add(&head.minimizer);
    let mut targets = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    let mut fit_residuals = vec![0.0; tau];
    let penalty_active = kappa != 0.0;
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        targets[t - 1] = target.clone();
        let pmap = LayerInParams { layer, x: x_prev };
        let sub = ProxSubproblem {
            map: &pmap,
            lam: None,
            rho: 1.0 / schedule.alpha_t(t),
            anchor: w_t,
            kappa,
            target: if penalty_active { Some(&target) } else { None },
            reg,
        };
        let wplus = sub
            .solve(cfg)
            .map_err(backward_err(t, SubproblemSide::Params))?;
        fit_residuals[t - 1] = VectorMap::eval(&pmap, &wplus.point).distance(&target);
        blocks[t - 1] = wplus.point;
        if t >= 2 {
            let smap = LayerInState { layer, w: w_t };
            let sub = ProxSubproblem {
                map: &smap,
                lam: None,
                rho: 1.0 / schedule.gamma_t(t - 1) + kappa,
                anchor: x_prev,
                kappa,
                target: if penalty_active { Some(&target) } else { None },
                reg: 0.0,
            };
            let xplus = sub
                .solve(cfg)
                .map_err(backward_err(t, SubproblemSide::State))?;
            target = xplus.point;
        }
    }
    Ok(TargetPropResult {
        output: OracleOutput::Replacement(blocks),
        targets: Targets { targets },
        fit_residuals,
    })
}

// ---------------------------------------------------------------------------
// Proximal back-propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProxBackpropResult {
    pub output: OracleOutput,
    pub duals: DualState,
    pub targets: Targets,
}

/// Classical duals, proximal parameter step: `lambda` is back-propagated as in
/// gradient back-propagation, targets are `z_t = x_t - lambda_t`, and each
/// block solves
///
/// ```text
/// w_t+ = argmin |v - w_t|^2/(2 alpha) + |phi_t(v, x_{t-1}) - z_t|^2 / 2.
/// ```
pub fn proximal_backprop(
    chain: &Chain,
    params: &BlockParams,
    x0: &Vector,
    h: &Objective,
    alpha: f64,
    cfg: &InnerSolverConfig,
    reg: f64,
) -> Result<ProxBackpropResult> {
    assert!(alpha > 0.0, "alpha must be positive");
    let tape = forward_tape(chain, params, x0)?;
    let tau = tape.tau();
    let mut lam = h.gradient(tape.output());
    let mut lambdas = vec![Vector::zeros(0); tau];
    let mut targets = vec![Vector::zeros(0); tau];
    let mut blocks = vec![Vector::zeros(0); tau];
    for t in (1..=tau).rev() {
        let (layer, w_t, x_prev) = tape.ctx(t);
        lambdas[t - 1] = lam.clone();
        let z = tape.state(t).sub(&lam);
        targets[t - 1] = z.clone();
        let pmap = LayerInParams { layer, x: x_prev };
        let sub = ProxSubproblem {
            map: &pmap,
            lam: None,
            rho: 1.0 / alpha,
            anchor: w_t,
            kappa: 1.0,
            target: Some(&z),
            reg,
        };
        let wplus = sub
            .solve(cfg)
            .map_err(backward_err(t, SubproblemSide::Params))?;
        blocks[t - 1] = wplus.point;
        lam = layer.vjp_state(w_t, x_prev, &lam);
    }
    Ok(ProxBackpropResult {
        output: OracleOutput::Replacement(blocks),
        duals: DualState { lambdas },
        targets: Targets { targets },
    })
}
