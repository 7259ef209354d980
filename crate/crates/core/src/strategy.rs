//! Feedback strategies synthesized from a value surface, stopping rules, and
//! pathwise concatenation at stopping times.
//!
//! A strategy is immutable. Everything that changes along a path (which
//! concatenation switches have fired, the previously observed adverse
//! control) lives in a [`PathState`] owned by the simulator.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxDomain, GameModel};
use crate::pde::GridFn;
use crate::scalar::{dot, mat_vec, Scalar, MAX_DIM};

/// Which adverse control a feedback rule reacts to at step `k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// `a_k`, revealed within the step the control acts on.
    #[default]
    Simultaneous,
    /// `a_{k−1}`; the first step sees the centre of the adverse box.
    Delayed,
}

/// What to do when `û` falls outside the truncated control box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampPolicy {
    /// Project into the box and flag the step.
    #[default]
    Clamp,
    /// Abort the path with an error.
    Reject,
}

/// Everything a strategy or stopping rule may look at when acting at step `k`.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a, S> {
    pub k: usize,
    pub t: S,
    pub x: &'a [S],
    /// Companion state `Ȳ_k`.
    pub y: S,
    pub a: &'a [S],
    pub a_prev: &'a [S],
}

/// Control emitted at one step.
#[derive(Clone, Copy, Debug)]
pub struct ControlOut<S> {
    pub u: [S; MAX_DIM],
    /// `σ_X · Dw` when the active rule is a feedback rule.
    pub z: Option<[S; MAX_DIM]>,
    pub clamped: bool,
    /// The gradient was read outside the surface's grid.
    pub grid_clamped: bool,
}

/// Feedback rule `u = û(t, x, Ȳ, σ_X(t, x, a) Dw(t, x), a)`.
#[derive(Clone)]
pub struct Feedback<S: Scalar> {
    pub model: GameModel<S>,
    pub surface: Arc<GridFn<S>>,
    pub observation: Observation,
    pub clamp: ClampPolicy,
}

impl<S: Scalar> Feedback<S> {
    fn observed<'a>(&self, ctx: &StepContext<'a, S>) -> &'a [S] {
        match self.observation {
            Observation::Simultaneous => ctx.a,
            Observation::Delayed => ctx.a_prev,
        }
    }

    /// `z = σ_X(t, x, a) Dw(t, x)` and whether the gradient lookup was clamped.
    pub fn target_volatility(&self, t: S, x: &[S], a: &[S], z: &mut [S]) -> bool {
        let d = self.model.dim;
        let mut p = [S::zero(); MAX_DIM];
        let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
        let clamped = self.surface.gradient_at(t, x, &mut p[..d]);
        self.model.sigma_x_into(t, x, a, &mut sig[..d * d]);
        mat_vec(&sig[..d * d], &p[..d], &mut z[..d]);
        clamped
    }

    pub fn control(&self, ctx: &StepContext<'_, S>) -> Result<ControlOut<S>> {
        let d = self.model.dim;
        let a = self.observed(ctx);
        let mut z = [S::zero(); MAX_DIM];
        let grid_clamped = self.target_volatility(ctx.t, ctx.x, a, &mut z);
        let mut u = [S::zero(); MAX_DIM];
        let inv = self.model.invert_sigma_y(ctx.t, ctx.x, ctx.y, &z[..d], a, &mut u[..d])?;
        if inv.clamped && self.clamp == ClampPolicy::Reject {
            return Err(Error::Precondition(format!("control left the U box at step {} (t={})", ctx.k, ctx.t)));
        }
        Ok(ControlOut {
            u,
            z: Some(z),
            clamped: inv.clamped,
            grid_clamped,
        })
    }

    /// One Euler step of the companion process
    /// `dȲ = μ_Y(t, x, Ȳ, u, a) dt + (σ_X Dw)ᵀ dW` with the same control.
    #[allow(clippy::too_many_arguments)]
    pub fn companion_step(&self, t: S, x: &[S], ybar: S, u: &[S], a: &[S], z: &[S], dt: S, dw: &[S]) -> S {
        ybar + self.model.mu_y(t, x, ybar, u, a) * dt + dot(z, dw)
    }
}

/// One pathwise stopping rule.
#[derive(Clone)]
pub enum StopRule<S: Scalar> {
    Never,
    /// Fires at the first step with `t_k ≥ θ`.
    FixedTime(S),
    /// Fires when `‖X_k − centre‖ ≥ radius`.
    ExitBall { center: Vec<S>, radius: S },
    /// Fires when `X_k` leaves the box.
    ExitRegion(BoxDomain<S>),
    /// Fires when `|Ȳ_k − w(t_k, X_k)| ≥ δ`.
    Deviation { surface: Arc<GridFn<S>>, delta: S },
}

impl<S: Scalar> StopRule<S> {
    pub fn fires(&self, ctx: &StepContext<'_, S>) -> bool {
        match self {
            StopRule::Never => false,
            StopRule::FixedTime(theta) => ctx.t >= *theta - S::lit(1e-9) * (S::one() + theta.abs()),
            StopRule::ExitBall { center, radius } => {
                let r2 = ctx.x.iter().zip(center).fold(S::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b));
                r2 >= *radius * *radius
            }
            StopRule::ExitRegion(b) => !b.contains(ctx.x, S::zero()) || ctx.x.iter().zip(&b.lo).zip(&b.hi).any(|((x, l), h)| x <= l || x >= h),
            StopRule::Deviation { surface, delta } => {
                let (w, _) = surface.value_at(ctx.t, ctx.x);
                (ctx.y - w).abs() >= *delta
            }
        }
    }
}

impl<S: Scalar> fmt::Display for StopRule<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::Never => write!(f, "never"),
            StopRule::FixedTime(t) => write!(f, "fixed_time({t})"),
            StopRule::ExitBall { center, radius } => write!(f, "exit_ball(center={center:?}, radius={radius})"),
            StopRule::ExitRegion(b) => write!(f, "exit_region(lo={:?}, hi={:?})", b.lo, b.hi),
            StopRule::Deviation { surface, delta } => write!(f, "deviation({}, delta={delta})", surface.label),
        }
    }
}

/// `θ = min` over the hitting times of the rules.
#[derive(Clone)]
pub struct StopFamily<S: Scalar> {
    pub rules: Vec<StopRule<S>>,
}

impl<S: Scalar> StopFamily<S> {
    pub fn new(rules: Vec<StopRule<S>>) -> Self {
        Self { rules }
    }

    pub fn never() -> Self {
        Self { rules: vec![StopRule::Never] }
    }

    pub fn fixed_time(theta: S) -> Self {
        Self {
            rules: vec![StopRule::FixedTime(theta)],
        }
    }

    /// Index of the first rule that fires at this step.
    pub fn fires(&self, ctx: &StepContext<'_, S>) -> Option<usize> {
        self.rules.iter().position(|r| r.fires(ctx))
    }
}

impl<S: Scalar> fmt::Display for StopFamily<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.rules.iter().map(|r| r.to_string()).collect();
        write!(f, "min[{}]", parts.join(", "))
    }
}

/// Feedback rule, fixed control, or concatenation of two strategies at a stopping rule.
#[derive(Clone)]
pub enum Strategy<S: Scalar> {
    Feedback(Arc<Feedback<S>>),
    Constant { u: Vec<S>, label: String },
    Concat(Arc<Concat<S>>),
}

#[derive(Clone)]
pub struct Concat<S: Scalar> {
    pub base: Strategy<S>,
    pub stop: StopFamily<S>,
    pub after: Strategy<S>,
}

/// Per-path mutable state of a strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    /// Step at which each concatenation node switched, in pre-order.
    pub switched_at: Vec<Option<usize>>,
}

/// Builds the feedback strategy driven by the gradient of `surface`.
pub fn synthesize<S: Scalar>(surface: Arc<GridFn<S>>, model: &GameModel<S>) -> Result<Strategy<S>> {
    if surface.grid.dim() != model.dim {
        return Err(Error::GridMismatch(format!(
            "surface is {}-dimensional, model is {}-dimensional",
            surface.grid.dim(),
            model.dim
        )));
    }
    surface.check_finite()?;
    Ok(Strategy::Feedback(Arc::new(Feedback {
        model: model.clone(),
        surface,
        observation: Observation::default(),
        clamp: ClampPolicy::default(),
    })))
}

/// Pathwise concatenation: `base` until the first step at which `stop`
/// fires (monitored from the moment this node becomes active), `after` from
/// then on.
pub fn concat<S: Scalar>(base: Strategy<S>, stop: StopFamily<S>, after: Strategy<S>) -> Result<Strategy<S>> {
    if let (Some(a), Some(b)) = (base.dim(), after.dim()) {
        if a != b {
            return Err(Error::GridMismatch(format!("cannot concatenate a {a}-dimensional strategy with a {b}-dimensional one")));
        }
    }
    Ok(Strategy::Concat(Arc::new(Concat { base, stop, after })))
}

impl<S: Scalar> Strategy<S> {
    pub fn constant(u: Vec<S>) -> Self {
        let label = format!("constant({u:?})");
        Strategy::Constant { u, label }
    }

    /// Same rule with a different observation convention (feedback nodes only).
    pub fn with_observation(&self, obs: Observation) -> Self {
        match self {
            Strategy::Feedback(f) => {
                let mut f = (**f).clone();
                f.observation = obs;
                Strategy::Feedback(Arc::new(f))
            }
            Strategy::Constant { .. } => self.clone(),
            Strategy::Concat(c) => Strategy::Concat(Arc::new(Concat {
                base: c.base.with_observation(obs),
                stop: c.stop.clone(),
                after: c.after.with_observation(obs),
            })),
        }
    }

    pub fn with_clamp(&self, clamp: ClampPolicy) -> Self {
        match self {
            Strategy::Feedback(f) => {
                let mut f = (**f).clone();
                f.clamp = clamp;
                Strategy::Feedback(Arc::new(f))
            }
            Strategy::Constant { .. } => self.clone(),
            Strategy::Concat(c) => Strategy::Concat(Arc::new(Concat {
                base: c.base.with_clamp(clamp),
                stop: c.stop.clone(),
                after: c.after.with_clamp(clamp),
            })),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Strategy::Feedback(f) => Some(f.model.dim),
            Strategy::Constant { u, .. } => Some(u.len()),
            Strategy::Concat(c) => c.base.dim().or(c.after.dim()),
        }
    }

    fn concat_nodes(&self) -> usize {
        match self {
            Strategy::Concat(c) => 1 + c.base.concat_nodes() + c.after.concat_nodes(),
            _ => 0,
        }
    }

    pub fn new_state(&self) -> PathState {
        PathState {
            switched_at: vec![None; self.concat_nodes()],
        }
    }

    /// Control at step `k`; updates switch times in `state`.
    pub fn control(&self, ctx: &StepContext<'_, S>, state: &mut PathState) -> Result<ControlOut<S>> {
        self.control_at(ctx, state, 0)
    }

    fn control_at(&self, ctx: &StepContext<'_, S>, state: &mut PathState, slot: usize) -> Result<ControlOut<S>> {
        match self {
            Strategy::Feedback(f) => f.control(ctx),
            Strategy::Constant { u, .. } => {
                let mut out = [S::zero(); MAX_DIM];
                out[..u.len()].copy_from_slice(u);
                Ok(ControlOut {
                    u: out,
                    z: None,
                    clamped: false,
                    grid_clamped: false,
                })
            }
            Strategy::Concat(c) => {
                if state.switched_at[slot].is_none() && c.stop.fires(ctx).is_some() {
                    state.switched_at[slot] = Some(ctx.k);
                }
                let base_slots = c.base.concat_nodes();
                if state.switched_at[slot].is_some() {
                    c.after.control_at(ctx, state, slot + 1 + base_slots)
                } else {
                    c.base.control_at(ctx, state, slot + 1)
                }
            }
        }
    }

    /// Feedback rule currently driving the control, if any.
    pub fn active_feedback(&self, state: &PathState) -> Option<&Feedback<S>> {
        self.active_at(state, 0)
    }

    fn active_at(&self, state: &PathState, slot: usize) -> Option<&Feedback<S>> {
        match self {
            Strategy::Feedback(f) => Some(f),
            Strategy::Constant { .. } => None,
            Strategy::Concat(c) => {
                if state.switched_at[slot].is_some() {
                    c.after.active_at(state, slot + 1 + c.base.concat_nodes())
                } else {
                    c.base.active_at(state, slot + 1)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl<S: Scalar> fmt::Display for Strategy<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Feedback(fb) => write!(
                f,
                "feedback(surface={}, observation={:?}, clamp={:?})",
                fb.surface.label, fb.observation, fb.clamp
            ),
            Strategy::Constant { label, .. } => write!(f, "{label}"),
            Strategy::Concat(c) => write!(f, "concat({}, {}, {})", c.base, c.stop, c.after),
        }
    }
}
