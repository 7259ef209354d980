//! The stochastic target game: coefficients of the controlled SDE pair,
//! control and adversary sets, the target function and the inversion map û.
//!
//! Coefficient fields write into caller-provided buffers so that the hot
//! loops of the solver and the simulator never allocate.

mod config;
mod validate;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar, MAX_DIM};

pub use config::{toml_error, CoefficientSpec, ModelSpec, Param, PayoffSpec};
pub use validate::{validate_assumptions, AssumptionId, AssumptionReport, AssumptionStatus, Check};

/// `(t, x, a, out)` with `out ∈ ℝ^d`.
pub type DriftX<S> = Arc<dyn Fn(S, &[S], &[S], &mut [S]) + Send + Sync>;
/// `(t, x, a, out)` with `out` a row-major `d×d` matrix.
pub type VolX<S> = Arc<dyn Fn(S, &[S], &[S], &mut [S]) + Send + Sync>;
/// `(t, x, y, u, a) -> μ_Y`.
pub type DriftY<S> = Arc<dyn Fn(S, &[S], S, &[S], &[S]) -> S + Send + Sync>;
/// `(t, x, y, u, a, out)` with `out ∈ ℝ^d`.
pub type VolY<S> = Arc<dyn Fn(S, &[S], S, &[S], &[S], &mut [S]) + Send + Sync>;
/// `(t, x, y, z, a, out_u)`: closed-form inverse of `u ↦ σ_Y`.
pub type InverseVolY<S> = Arc<dyn Fn(S, &[S], S, &[S], &[S], &mut [S]) + Send + Sync>;
pub type Payoff<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;

/// Axis-aligned box `∏ [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Scalar> BoxDomain<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Self {
        Self { lo, hi }
    }

    pub fn cube(dim: usize, lo: S, hi: S) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn point(p: &[S]) -> Self {
        Self::new(p.to_vec(), p.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_nonempty(&self) -> bool {
        self.lo.len() == self.hi.len()
            && self.lo.iter().zip(&self.hi).all(|(l, h)| l.is_finite() && h.is_finite() && l <= h)
    }

    pub fn width(&self, axis: usize) -> S {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, p: &[S], tol: S) -> bool {
        p.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lo[i] - tol && v <= self.hi[i] + tol)
    }

    /// Clamps `p` into the box in place, returning whether anything moved.
    pub fn clamp(&self, p: &mut [S]) -> bool {
        let mut moved = false;
        for (i, v) in p.iter_mut().enumerate() {
            let c = v.max(self.lo[i]).min(self.hi[i]);
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, unit: &[S], out: &mut [S]) {
        for i in 0..self.dim() {
            out[i] = self.lo[i] + unit[i] * self.width(i);
        }
    }

    /// Tensor grid with `n` points per non-degenerate axis in lexicographic
    /// order (last axis fastest). One point per axis means the midpoint.
    pub fn tensor_grid(&self, n: usize) -> Vec<Vec<S>> {
        let n = n.max(1);
        let axes: Vec<Vec<S>> = (0..self.dim())
            .map(|i| {
                if self.width(i) == S::zero() {
                    vec![self.lo[i]]
                } else if n == 1 {
                    vec![self.lo[i] + self.width(i) * S::lit(0.5)]
                } else {
                    (0..n)
                        .map(|k| {
                            if k == n - 1 {
                                self.hi[i]
                            } else {
                                self.lo[i] + self.width(i) * S::lit(k as f64 / (n - 1) as f64)
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &v in axis {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances<S> {
    /// Absolute tolerance on `‖σ_Y(û) − z‖`.
    pub inversion_tol: S,
    pub max_iter: usize,
    /// Slack allowed in the monotonicity-in-y check of the rescaled drift.
    pub mono_tol: S,
}

impl<S: Scalar> Default for Tolerances<S> {
    fn default() -> Self {
        Self {
            inversion_tol: S::default_inversion_tol(),
            max_iter: 50,
            mono_tol: S::lit(1e-9).max(S::epsilon() * S::lit(100.0)),
        }
    }
}

/// Ranges for the y and z coordinates when sampling assumption checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRanges<S> {
    pub y: (S, S),
    pub z: (S, S),
}

/// Structural assumptions the user vouches for and that sampling cannot confirm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declarations {
    /// A no-trade control exists (`μ_Y = σ_Y = 0`) and `|μ_Y|/‖σ_Y‖` is bounded,
    /// which makes any lower bound of `g` a stochastic sub-solution.
    pub constant_subsolution: bool,
}

/// Result of inverting `u ↦ σ_Y(t,x,y,u,a) = z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inversion<S> {
    /// Whether the raw solution left `control_set_u` and was clamped.
    pub clamped: bool,
    /// `‖σ_Y(u_raw) − z‖` before clamping.
    pub residual: S,
}

/// Full description of a stochastic target game.
#[derive(Clone)]
pub struct GameModel<S: Scalar> {
    pub name: String,
    pub dim: usize,
    pub mu_x: DriftX<S>,
    pub sigma_x: VolX<S>,
    pub mu_y: DriftY<S>,
    pub sigma_y: VolY<S>,
    pub u_hat: Option<InverseVolY<S>>,
    pub g: Payoff<S>,
    pub control_set_u: BoxDomain<S>,
    pub adverse_set_a: BoxDomain<S>,
    /// Spatial truncation of `ℝ^d`: solver grid and sampling domain.
    pub state_box: BoxDomain<S>,
    pub horizon: S,
    /// `K` in the regularity bounds on the coefficients.
    pub lipschitz_k: S,
    /// `L`: Lipschitz/linear-growth constant of `μ_Y^û`.
    pub growth_l: S,
    /// Declared bound `G ≥ |g|` on `state_box`.
    pub g_bound: S,
    /// Declared bound on `|μ_Y| / (1 + ‖σ_Y‖)` and `|μ_Y| / ‖σ_Y‖`; infinite when undeclared.
    pub ratio_bound: S,
    pub tolerances: Tolerances<S>,
    pub sample_ranges: SampleRanges<S>,
    pub declarations: Declarations,
}

impl<S: Scalar> fmt::Debug for GameModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("closed_form_u_hat", &self.u_hat.is_some())
            .field("control_set_u", &self.control_set_u)
            .field("adverse_set_a", &self.adverse_set_a)
            .field("state_box", &self.state_box)
            .field("horizon", &self.horizon)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("growth_l", &self.growth_l)
            .field("g_bound", &self.g_bound)
            .finish()
    }
}

impl<S: Scalar> GameModel<S> {
    /// Starts a model with all coefficients zero, `σ_Y(u) = u` and `g ≡ 0`.
    pub fn builder(name: impl Into<String>, dim: usize) -> GameModelBuilder<S> {
        GameModelBuilder::new(name.into(), dim)
    }

    #[inline]
    pub fn mu_x_into(&self, t: S, x: &[S], a: &[S], out: &mut [S]) {
        (self.mu_x)(t, x, a, out)
    }

    #[inline]
    pub fn sigma_x_into(&self, t: S, x: &[S], a: &[S], out: &mut [S]) {
        (self.sigma_x)(t, x, a, out)
    }

    #[inline]
    pub fn mu_y(&self, t: S, x: &[S], y: S, u: &[S], a: &[S]) -> S {
        (self.mu_y)(t, x, y, u, a)
    }

    #[inline]
    pub fn sigma_y_into(&self, t: S, x: &[S], y: S, u: &[S], a: &[S], out: &mut [S]) {
        (self.sigma_y)(t, x, y, u, a, out)
    }

    #[inline]
    pub fn g(&self, x: &[S]) -> S {
        (self.g)(x)
    }

    /// Computes `û(t,x,y,z,a)` into `u`.
    ///
    /// Uses the closed form when the model has one, otherwise damped Newton
    /// with a bisection fallback in one dimension. The result is clamped into
    /// `control_set_u` and the clamp is reported.
    pub fn invert_sigma_y(&self, t: S, x: &[S], y: S, z: &[S], a: &[S], u: &mut [S]) -> Result<Inversion<S>> {
        let d = self.dim;
        if !(t >= -S::epsilon() && t <= self.horizon * (S::one() + S::epsilon())) {
            return Err(Error::Precondition(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        if !self.adverse_set_a.contains(a, S::lit(1e-9).max(S::epsilon())) {
            return Err(Error::Precondition(format!("a = {a:?} outside the adverse set")));
        }
        if x.iter().chain(z).any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::non_finite("input", format!("t={t}, x={x:?}, y={y}, z={z:?}")));
        }
        let residual = match &self.u_hat {
            Some(closed) => {
                closed(t, x, y, z, a, &mut u[..d]);
                if u[..d].iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite("closed-form u_hat", format!("t={t}, x={x:?}, z={z:?}, a={a:?}")));
                }
                self.sigma_residual(t, x, y, &u[..d], z, a)
            }
            None => self.newton_invert(t, x, y, z, a, &mut u[..d])?,
        };
        let clamped = self.control_set_u.clamp(&mut u[..d]);
        Ok(Inversion { clamped, residual })
    }

    fn sigma_residual(&self, t: S, x: &[S], y: S, u: &[S], z: &[S], a: &[S]) -> S {
        let mut s = [S::zero(); MAX_DIM];
        self.sigma_y_into(t, x, y, u, a, &mut s[..self.dim]);
        let mut r = [S::zero(); MAX_DIM];
        for i in 0..self.dim {
            r[i] = s[i] - z[i];
        }
        norm(&r[..self.dim])
    }

    fn newton_invert(&self, t: S, x: &[S], y: S, z: &[S], a: &[S], u: &mut [S]) -> Result<S> {
        let d = self.dim;
        let tol = self.tolerances.inversion_tol;
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = S::zero().max(self.control_set_u.lo[i]).min(self.control_set_u.hi[i]);
        }
        let mut best = self.sigma_residual(t, x, y, u, z, a);
        let mut iterations = 0;
        let mut singular = false;
        let h_rel = S::epsilon().cbrt();
        while best > tol && iterations < self.tolerances.max_iter {
            iterations += 1;
            let mut f0 = [S::zero(); MAX_DIM];
            self.sigma_y_into(t, x, y, u, a, &mut f0[..d]);
            let mut jac = [S::zero(); MAX_DIM * MAX_DIM];
            let mut up = [S::zero(); MAX_DIM];
            let mut fp = [S::zero(); MAX_DIM];
            let mut fm = [S::zero(); MAX_DIM];
            for j in 0..d {
                let h = h_rel * (S::one() + u[j].abs());
                up[..d].copy_from_slice(u);
                up[j] = u[j] + h;
                self.sigma_y_into(t, x, y, &up[..d], a, &mut fp[..d]);
                up[j] = u[j] - h;
                self.sigma_y_into(t, x, y, &up[..d], a, &mut fm[..d]);
                for i in 0..d {
                    jac[i * d + j] = (fp[i] - fm[i]) / (h + h);
                }
            }
            let mut step = [S::zero(); MAX_DIM];
            for i in 0..d {
                step[i] = z[i] - f0[i];
            }
            if !crate::scalar::solve_in_place(&mut jac[..d * d], &mut step[..d], d) {
                singular = true;
                break;
            }
            let mut lambda = S::one();
            let mut accepted = false;
            for _ in 0..40 {
                for i in 0..d {
                    up[i] = u[i] + lambda * step[i];
                }
                let r = self.sigma_residual(t, x, y, &up[..d], z, a);
                if r.is_finite() && r < best {
                    u.copy_from_slice(&up[..d]);
                    best = r;
                    accepted = true;
                    break;
                }
                lambda = lambda * S::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        if best <= tol {
            return Ok(best);
        }
        if d == 1 {
            if let Some(r) = self.bisect_invert(t, x, y, z, a, u) {
                if r <= tol {
                    return Ok(r);
                }
                best = best.min(r);
            }
        }
        if singular {
            return Err(Error::Singular(format!("t={t}, x={x:?}, y={y}, u={u:?}, a={a:?}")));
        }
        Err(Error::Inversion {
            residual: best.as_f64(),
            iterations,
            a: a.iter().map(|v| v.as_f64()).collect(),
        })
    }

    /// Bisection on the control box; `None` when the endpoints do not bracket `z`.
    fn bisect_invert(&self, t: S, x: &[S], y: S, z: &[S], a: &[S], u: &mut [S]) -> Option<S> {
        let f = |v: S| {
            let mut s = [S::zero()];
            self.sigma_y_into(t, x, y, &[v], a, &mut s);
            s[0] - z[0]
        };
        let (mut lo, mut hi) = (self.control_set_u.lo[0], self.control_set_u.hi[0]);
        let (mut flo, fhi) = (f(lo), f(hi));
        if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() && flo != S::zero() && fhi != S::zero() {
            return None;
        }
        for _ in 0..(4 * self.tolerances.max_iter).max(200) {
            let mid = lo + (hi - lo) * S::lit(0.5);
            let fm = f(mid);
            if fm == S::zero() || hi - lo <= S::epsilon() * (S::one() + mid.abs()) {
                lo = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        u[0] = lo;
        Some(f(lo).abs())
    }

    /// `μ_Y^û(t,x,y,z,a) = μ_Y(t,x,y,û(t,x,y,z,a),a)`, with the clamp flag of û.
    pub fn mu_y_hat(&self, t: S, x: &[S], y: S, z: &[S], a: &[S]) -> Result<(S, bool)> {
        let mut u = [S::zero(); MAX_DIM];
        let inv = self.invert_sigma_y(t, x, y, z, a, &mut u)?;
        Ok((self.mu_y(t, x, y, &u[..self.dim], a), inv.clamped))
    }

    /// Largest `|g|` over a finite set of points.
    pub fn g_sup_on<'a>(&self, points: impl IntoIterator<Item = &'a [S]>) -> S {
        points.into_iter().fold(S::zero(), |m, p| m.max(self.g(p).abs()))
    }
}

pub struct GameModelBuilder<S: Scalar> {
    model: GameModel<S>,
}

impl<S: Scalar> GameModelBuilder<S> {
    fn new(name: String, dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension must be in 1..={MAX_DIM}");
        let zero_vec: DriftX<S> = Arc::new(|_, _, _, out: &mut [S]| out.iter_mut().for_each(|v| *v = S::zero()));
        let ten = S::lit(10.0);
        Self {
            model: GameModel {
                name,
                dim,
                mu_x: zero_vec.clone(),
                sigma_x: zero_vec,
                mu_y: Arc::new(|_, _, _, _, _| S::zero()),
                sigma_y: Arc::new(|_, _, _, u: &[S], _, out: &mut [S]| out.copy_from_slice(u)),
                u_hat: Some(Arc::new(|_, _, _, z: &[S], _, out: &mut [S]| out.copy_from_slice(z))),
                g: Arc::new(|_| S::zero()),
                control_set_u: BoxDomain::cube(dim, -ten, ten),
                adverse_set_a: BoxDomain::cube(dim, S::zero(), S::zero()),
                state_box: BoxDomain::cube(dim, -S::one(), S::one()),
                horizon: S::one(),
                lipschitz_k: S::one(),
                growth_l: S::zero(),
                g_bound: S::zero(),
                ratio_bound: S::infinity(),
                tolerances: Tolerances::default(),
                sample_ranges: SampleRanges {
                    y: (-ten, ten),
                    z: (-ten, ten),
                },
                declarations: Declarations::default(),
            },
        }
    }

    pub fn mu_x(mut self, f: impl Fn(S, &[S], &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        self.model.mu_x = Arc::new(f);
        self
    }

    pub fn sigma_x(mut self, f: impl Fn(S, &[S], &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        self.model.sigma_x = Arc::new(f);
        self
    }

    pub fn mu_y(mut self, f: impl Fn(S, &[S], S, &[S], &[S]) -> S + Send + Sync + 'static) -> Self {
        self.model.mu_y = Arc::new(f);
        self
    }

    /// Sets `σ_Y` and drops any closed-form inverse; pair with [`Self::u_hat`].
    pub fn sigma_y(mut self, f: impl Fn(S, &[S], S, &[S], &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        self.model.sigma_y = Arc::new(f);
        self.model.u_hat = None;
        self
    }

    pub fn u_hat(mut self, f: impl Fn(S, &[S], S, &[S], &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        self.model.u_hat = Some(Arc::new(f));
        self
    }

    pub fn numeric_u_hat(mut self) -> Self {
        self.model.u_hat = None;
        self
    }

    pub fn payoff(mut self, g: impl Fn(&[S]) -> S + Send + Sync + 'static) -> Self {
        self.model.g = Arc::new(g);
        self
    }

    pub fn control_set(mut self, b: BoxDomain<S>) -> Self {
        self.model.control_set_u = b;
        self
    }

    pub fn adverse_set(mut self, b: BoxDomain<S>) -> Self {
        self.model.adverse_set_a = b;
        self
    }

    pub fn state_box(mut self, b: BoxDomain<S>) -> Self {
        self.model.state_box = b;
        self
    }

    pub fn horizon(mut self, t: S) -> Self {
        self.model.horizon = t;
        self
    }

    pub fn lipschitz_k(mut self, k: S) -> Self {
        self.model.lipschitz_k = k;
        self
    }

    pub fn growth_l(mut self, l: S) -> Self {
        self.model.growth_l = l;
        self
    }

    pub fn g_bound(mut self, g: S) -> Self {
        self.model.g_bound = g;
        self
    }

    pub fn ratio_bound(mut self, r: S) -> Self {
        self.model.ratio_bound = r;
        self
    }

    pub fn tolerances(mut self, t: Tolerances<S>) -> Self {
        self.model.tolerances = t;
        self
    }

    pub fn sample_ranges(mut self, r: SampleRanges<S>) -> Self {
        self.model.sample_ranges = r;
        self
    }

    pub fn declarations(mut self, d: Declarations) -> Self {
        self.model.declarations = d;
        self
    }

    pub fn build(self) -> Result<GameModel<S>> {
        let m = self.model;
        let d = m.dim;
        for (name, b) in [("control_set_u", &m.control_set_u), ("adverse_set_a", &m.adverse_set_a), ("state_box", &m.state_box)] {
            if b.dim() != d || !b.is_nonempty() {
                return Err(Error::Precondition(format!("{name} must be a nonempty bounded box of dimension {d}")));
            }
        }
        if !(m.horizon > S::zero()) || !m.horizon.is_finite() {
            return Err(Error::Precondition("horizon must be positive and finite".into()));
        }
        if m.lipschitz_k < S::zero() || m.growth_l < S::zero() || m.g_bound < S::zero() {
            return Err(Error::Precondition("declared constants must be nonnegative".into()));
        }
        Ok(m)
    }
}

/// Uncertain-volatility super-hedging game in `d` uncorrelated assets:
/// `dX_i = a_i X_i dW_i`, `dY = Σ u_i a_i X_i dW_i`, `μ_Y = r·y`.
///
/// With `r = 0` and a convex payoff its value is the Black–Scholes price at
/// the largest volatility in `A`.
pub fn uncertain_volatility<S: Scalar>(
    dim: usize,
    vol_lo: S,
    vol_hi: S,
    x_hi: S,
    rate: S,
    payoff: impl Fn(&[S]) -> S + Send + Sync + 'static,
    g_bound: S,
) -> Result<GameModel<S>> {
    let k = S::lit(dim as f64).sqrt() * (vol_hi + rate.abs()) * x_hi;
    GameModel::builder("uncertain_volatility", dim)
        .mu_x(move |_, x, _, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = rate * *xi;
            }
        })
        .sigma_x(diagonal_scaled_vol)
        .mu_y(move |_, _, y, _, _| rate * y)
        .sigma_y(|_, x, _, u, a, out| {
            for i in 0..x.len() {
                out[i] = u[i] * a[i] * x[i];
            }
        })
        .u_hat(diagonal_scaled_inverse)
        .payoff(payoff)
        .control_set(BoxDomain::cube(dim, S::lit(-5.0), S::lit(5.0)))
        .adverse_set(BoxDomain::cube(dim, vol_lo, vol_hi))
        .state_box(BoxDomain::cube(dim, S::zero(), x_hi))
        .horizon(S::one())
        .lipschitz_k(k.max(S::one()) * S::lit(1.1))
        .growth_l(rate)
        .g_bound(g_bound)
        .sample_ranges(SampleRanges {
            y: (-g_bound - S::one(), g_bound + S::one()),
            z: (-vol_hi * x_hi, vol_hi * x_hi),
        })
        .declarations(Declarations {
            constant_subsolution: rate == S::zero(),
        })
        .build()
}

/// `σ_X = diag(a_i x_i)`.
pub(crate) fn diagonal_scaled_vol<S: Scalar>(_: S, x: &[S], a: &[S], out: &mut [S]) {
    let d = x.len();
    out[..d * d].iter_mut().for_each(|v| *v = S::zero());
    for i in 0..d {
        out[i * d + i] = a[i] * x[i];
    }
}

/// Inverse of `u ↦ (u_i a_i x_i)_i`; components with `a_i x_i = 0` map to 0.
pub(crate) fn diagonal_scaled_inverse<S: Scalar>(_: S, x: &[S], _: S, z: &[S], a: &[S], out: &mut [S]) {
    for i in 0..x.len() {
        let s = a[i] * x[i];
        out[i] = if s == S::zero() { S::zero() } else { z[i] / s };
    }
}

/// `(mean(x) − strike)⁺ ∧ cap`.
pub fn capped_call<S: Scalar>(strike: S, cap: S) -> impl Fn(&[S]) -> S + Send + Sync + Clone + 'static {
    move |x: &[S]| {
        let mean = x.iter().copied().sum::<S>() / S::lit(x.len() as f64);
        (mean - strike).max(S::zero()).min(cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_model() -> GameModel<f64> {
        GameModel::<f64>::builder("cubic", 1)
            .sigma_y(|_, _, _, u, _, out| out[0] = u[0] * u[0] * u[0] + u[0])
            .control_set(BoxDomain::cube(1, -3.0, 3.0))
            .build()
            .unwrap()
    }

    fn bisection_oracle(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn closed_form_inverse_of_hedge_volatility() {
        let m = uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.0, capped_call(100.0, 300.0), 300.0).unwrap();
        let mut u = [0.0];
        let inv = m.invert_sigma_y(0.0, &[100.0], 0.0, &[4.0], &[0.2], &mut u).unwrap();
        assert!((u[0] - 0.2).abs() < 1e-15);
        assert!(!inv.clamped);
        let mut s = [0.0];
        m.sigma_y_into(0.0, &[100.0], 0.0, &u, &[0.2], &mut s);
        assert!((s[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_target_volatility_maps_to_zero_control() {
        let m = uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.0, capped_call(100.0, 300.0), 300.0).unwrap();
        let mut u = [1.0];
        m.invert_sigma_y(0.5, &[50.0], 1.0, &[0.0], &[0.3], &mut u).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn newton_matches_bisection_on_cubic() {
        let m = cubic_model();
        let oracle = bisection_oracle(|u| u * u * u + u - 2.0, 0.0, 2.0);
        let mut u = [0.0];
        let inv = m.invert_sigma_y(0.0, &[0.0], 0.0, &[2.0], &[0.0], &mut u).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-10);
        assert!((u[0] - oracle).abs() < 1e-10);
        assert!(inv.residual < 1e-10);
    }

    #[test]
    fn out_of_box_solution_is_clamped_and_flagged() {
        let m = cubic_model();
        let mut u = [0.0];
        // u³ + u = 100 has its root near 4.5, outside [-3, 3]
        let inv = m.invert_sigma_y(0.0, &[0.0], 0.0, &[100.0], &[0.0], &mut u).unwrap();
        assert!(inv.clamped);
        assert_eq!(u[0], 3.0);
        assert!(inv.residual < 1e-10);
    }

    #[test]
    fn constant_volatility_is_singular() {
        let m = GameModel::<f64>::builder("flat", 1)
            .sigma_y(|_, _, _, _, _, out| out[0] = 1.0)
            .build()
            .unwrap();
        let mut u = [0.0];
        let err = m.invert_sigma_y(0.0, &[0.0], 0.0, &[2.0], &[0.0], &mut u).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err:?}");
    }

    #[test]
    fn unreachable_target_reports_best_residual() {
        // σ_Y(u) = tanh(u) never reaches 2
        let m = GameModel::<f64>::builder("bounded", 1)
            .sigma_y(|_, _, _, u, _, out| out[0] = u[0].tanh())
            .build()
            .unwrap();
        let mut u = [0.0];
        match m.invert_sigma_y(0.0, &[0.0], 0.0, &[2.0], &[0.0], &mut u).unwrap_err() {
            Error::Inversion { residual, .. } => assert!(residual > 0.9),
            Error::Singular(_) => {}
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn adverse_control_outside_box_is_rejected() {
        let m = uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.0, capped_call(100.0, 300.0), 300.0).unwrap();
        let mut u = [0.0];
        assert!(matches!(
            m.invert_sigma_y(0.0, &[1.0], 0.0, &[1.0], &[0.5], &mut u),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn two_dimensional_newton_inversion() {
        let m = GameModel::<f64>::builder("coupled", 2)
            .sigma_y(|_, _, _, u, _, out| {
                out[0] = 2.0 * u[0] + u[1] + 0.1 * u[0].powi(3);
                out[1] = u[0] - u[1];
            })
            .build()
            .unwrap();
        let z = [1.3, -0.4];
        let mut u = [0.0; 2];
        let inv = m.invert_sigma_y(0.0, &[0.0, 0.0], 0.0, &z, &[0.0, 0.0], &mut u).unwrap();
        assert!(inv.residual <= 1e-10);
        let mut s = [0.0f64; 2];
        m.sigma_y_into(0.0, &[0.0; 2], 0.0, &u, &[0.0; 2], &mut s);
        assert!((s[0] - z[0]).abs() < 1e-10 && (s[1] - z[1]).abs() < 1e-10);
    }

    #[test]
    fn tensor_grid_includes_endpoints_in_lex_order() {
        let b = BoxDomain::new(vec![0.0, 1.0], vec![1.0, 1.0]);
        let g = b.tensor_grid(3);
        assert_eq!(g, vec![vec![0.0, 1.0], vec![0.5, 1.0], vec![1.0, 1.0]]);
        assert_eq!(BoxDomain::cube(1, 0.1, 0.3).tensor_grid(1), vec![vec![0.2]]);
    }

    #[test]
    fn capped_call_is_flat_beyond_cap() {
        let g = capped_call(100.0, 50.0);
        assert_eq!(g(&[90.0]), 0.0);
        assert_eq!(g(&[120.0]), 20.0);
        assert_eq!(g(&[400.0]), 50.0);
    }
}
