use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::GameModel;
use crate::sampling::stream_rng;
use crate::scalar::{dot, mat_vec, Scalar, MAX_DIM};
use crate::strategy::{PathState, StepContext, StopFamily, Strategy};

use super::adversary::{Adversary, AdversaryPolicy};

/// Start state and discretization of one simulated path.
#[derive(Clone)]
pub struct PathSpec<S: Scalar> {
    pub t0: S,
    pub x0: Vec<S>,
    pub y0: S,
    pub n_steps: usize,
    /// End time; the model horizon when `None`.
    pub t_end: Option<S>,
    /// Stopping rule whose first hit is recorded.
    pub stop: Option<StopFamily<S>>,
}

impl<S: Scalar> PathSpec<S> {
    pub fn new(t0: S, x0: Vec<S>, y0: S, n_steps: usize) -> Self {
        Self {
            t0,
            x0,
            y0,
            n_steps,
            t_end: None,
            stop: None,
        }
    }

    pub fn with_stop(mut self, stop: StopFamily<S>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn with_end(mut self, t_end: S) -> Self {
        self.t_end = Some(t_end);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopHit {
    pub step: usize,
    pub rule: usize,
}

/// One Euler–Maruyama trajectory. Vector-valued paths are flattened with
/// stride `dim`; every per-step array has `n_steps + 1` entries (the last
/// control and adverse value are those observed at the final time).
#[derive(Clone, Debug, PartialEq)]
pub struct SimPath<S> {
    pub dim: usize,
    pub seed: u64,
    pub stream: u64,
    pub times: Vec<S>,
    pub x: Vec<S>,
    pub y: Vec<S>,
    /// Companion process driven by `σ_X Dw` while a feedback rule is active.
    pub ybar: Vec<S>,
    pub a: Vec<S>,
    pub u: Vec<S>,
    pub clamped: Vec<bool>,
    pub grid_clamped: Vec<bool>,
    pub stop_hit: Option<StopHit>,
    pub strategy_state: PathState,
}

impl<S: Scalar> SimPath<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, k: usize) -> &[S] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn a_at(&self, k: usize) -> &[S] {
        &self.a[k * self.dim..(k + 1) * self.dim]
    }

    pub fn u_at(&self, k: usize) -> &[S] {
        &self.u[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> usize {
        self.times.len() - 1
    }

    /// Step of the recorded stop, or the final step when the rule never fired.
    pub fn stop_step(&self) -> usize {
        self.stop_hit.map_or(self.last(), |h| h.step)
    }

    pub fn clamped_steps(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }
}

/// Simulates one path on stream 0 of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<S: Scalar>(
    model: &GameModel<S>,
    strategy: &Strategy<S>,
    adversary: &AdversaryPolicy<S>,
    t0: S,
    x0: &[S],
    y0: S,
    n_steps: usize,
    seed: u64,
) -> Result<SimPath<S>> {
    simulate_path(model, strategy, adversary, &PathSpec::new(t0, x0.to_vec(), y0, n_steps), seed, 0)
}

/// Simulates one path. Brownian increments and adversary randomness come
/// from two independent streams derived from `(seed, stream)`.
pub fn simulate_path<S: Scalar>(
    model: &GameModel<S>,
    strategy: &Strategy<S>,
    adversary: &AdversaryPolicy<S>,
    spec: &PathSpec<S>,
    seed: u64,
    stream: u64,
) -> Result<SimPath<S>> {
    let d = model.dim;
    let n = spec.n_steps;
    if n == 0 {
        return Err(Error::Precondition("n_steps must be at least 1".into()));
    }
    let t_end = spec.t_end.unwrap_or(model.horizon);
    if !(spec.t0 >= S::zero() && spec.t0 < t_end && t_end <= model.horizon) {
        return Err(Error::Precondition(format!("start time {} must lie in [0, {t_end})", spec.t0)));
    }
    if spec.x0.len() != d || !model.state_box.contains(&spec.x0, S::zero()) {
        return Err(Error::Precondition(format!("start state {:?} is outside the state box", spec.x0)));
    }
    if !spec.y0.is_finite() {
        return Err(Error::non_finite("y0", "start"));
    }
    let adv = Adversary::new(model, adversary)?;
    let mut brownian = stream_rng(seed, 3 * stream);
    let mut nature = stream_rng(seed, 3 * stream + 1);
    let dt = (t_end - spec.t0) / S::lit(n as f64);
    let sqrt_dt = dt.sqrt();

    let mut path = SimPath {
        dim: d,
        seed,
        stream,
        times: Vec::with_capacity(n + 1),
        x: Vec::with_capacity((n + 1) * d),
        y: Vec::with_capacity(n + 1),
        ybar: Vec::with_capacity(n + 1),
        a: Vec::with_capacity((n + 1) * d),
        u: Vec::with_capacity((n + 1) * d),
        clamped: Vec::with_capacity(n + 1),
        grid_clamped: Vec::with_capacity(n + 1),
        stop_hit: None,
        strategy_state: strategy.new_state(),
    };
    let mut x = [S::zero(); MAX_DIM];
    x[..d].copy_from_slice(&spec.x0);
    let mut y = spec.y0;
    let mut ybar = spec.y0;
    let mut a = [S::zero(); MAX_DIM];
    let mut a_prev = [S::zero(); MAX_DIM];
    for i in 0..d {
        a_prev[i] = (model.adverse_set_a.lo[i] + model.adverse_set_a.hi[i]) * S::lit(0.5);
    }
    let mut mu = [S::zero(); MAX_DIM];
    let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
    let mut sy = [S::zero(); MAX_DIM];
    let mut dw = [S::zero(); MAX_DIM];
    let mut dx = [S::zero(); MAX_DIM];
    for k in 0..=n {
        let t = if k == n { t_end } else { spec.t0 + dt * S::lit(k as f64) };
        a[..d].copy_from_slice(&a_prev[..d]);
        adv.emit(k, t, &x[..d], dt, &mut nature, &mut a[..d])?;
        let ctx = StepContext {
            k,
            t,
            x: &x[..d],
            y: ybar,
            a: &a[..d],
            a_prev: &a_prev[..d],
        };
        if path.stop_hit.is_none() {
            if let Some(rule) = spec.stop.as_ref().and_then(|s| s.fires(&ctx)) {
                path.stop_hit = Some(StopHit { step: k, rule });
            }
        }
        let out = strategy.control(&ctx, &mut path.strategy_state).map_err(|e| match e {
            Error::Precondition(m) => Error::Precondition(format!("{m} (step {k})")),
            other => other,
        })?;
        path.times.push(t);
        path.x.extend_from_slice(&x[..d]);
        path.y.push(y);
        path.ybar.push(ybar);
        path.a.extend_from_slice(&a[..d]);
        path.u.extend_from_slice(&out.u[..d]);
        path.clamped.push(out.clamped);
        path.grid_clamped.push(out.grid_clamped);
        if k == n {
            break;
        }
        for v in dw[..d].iter_mut() {
            let z: f64 = brownian.sample(StandardNormal);
            *v = S::lit(z) * sqrt_dt;
        }
        let u = &out.u[..d];
        model.mu_x_into(t, &x[..d], &a[..d], &mut mu[..d]);
        model.sigma_x_into(t, &x[..d], &a[..d], &mut sig[..d * d]);
        model.sigma_y_into(t, &x[..d], y, u, &a[..d], &mut sy[..d]);
        mat_vec(&sig[..d * d], &dw[..d], &mut dx[..d]);
        let y_next = y + model.mu_y(t, &x[..d], y, u, &a[..d]) * dt + dot(&sy[..d], &dw[..d]);
        ybar = match (out.z, strategy.active_feedback(&path.strategy_state)) {
            (Some(z), Some(f)) => f.companion_step(t, &x[..d], ybar, u, &a[..d], &z[..d], dt, &dw[..d]),
            _ => y_next,
        };
        y = y_next;
        for i in 0..d {
            x[i] = x[i] + mu[i] * dt + dx[i];
        }
        if !(y.is_finite() && ybar.is_finite() && x[..d].iter().all(|v| v.is_finite())) {
            return Err(Error::non_finite("state", format!("step {}", k + 1)));
        }
        a_prev[..d].copy_from_slice(&a[..d]);
    }
    Ok(path)
}
