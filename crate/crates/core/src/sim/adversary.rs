use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamiltonian::{h, AdverseGrid};
use crate::model::GameModel;
use crate::pde::GridFn;
use crate::scalar::{Scalar, MAX_DIM};

/// How nature picks the adverse control along a path.
#[derive(Clone)]
pub enum AdversaryPolicy<S: Scalar> {
    Constant(Vec<S>),
    /// Independent uniform draws from the tensor a-grid at every step.
    UniformIid { points_per_axis: usize },
    /// Piecewise constant: jumps to a uniform a-grid point at rate `rate`.
    Switching { rate: S, points_per_axis: usize },
    /// Per-step argmax over the a-grid of the Hamiltonian at
    /// `(t, X, w, Dw, D²w)` read off `surface`.
    Greedy { surface: Arc<GridFn<S>>, points_per_axis: usize },
    /// Replays a fixed sequence; step `k` uses entry `k`.
    Scripted(Arc<Vec<Vec<S>>>),
}

impl<S: Scalar> AdversaryPolicy<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            AdversaryPolicy::Constant(_) => "constant",
            AdversaryPolicy::UniformIid { .. } => "uniform_iid",
            AdversaryPolicy::Switching { .. } => "switching",
            AdversaryPolicy::Greedy { .. } => "greedy",
            AdversaryPolicy::Scripted(_) => "scripted",
        }
    }
}

impl<S: Scalar> fmt::Display for AdversaryPolicy<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryPolicy::Constant(a) => write!(f, "constant({a:?})"),
            AdversaryPolicy::UniformIid { points_per_axis } => write!(f, "uniform_iid(points={points_per_axis})"),
            AdversaryPolicy::Switching { rate, points_per_axis } => write!(f, "switching(rate={rate}, points={points_per_axis})"),
            AdversaryPolicy::Greedy { surface, points_per_axis } => write!(f, "greedy(surface={}, points={points_per_axis})", surface.label),
            AdversaryPolicy::Scripted(s) => write!(f, "scripted(len={})", s.len()),
        }
    }
}

/// A policy bound to a model, with its a-grid materialized.
pub(crate) struct Adversary<'a, S: Scalar> {
    model: &'a GameModel<S>,
    policy: &'a AdversaryPolicy<S>,
    grid: Option<AdverseGrid<S>>,
}

impl<'a, S: Scalar> Adversary<'a, S> {
    pub(crate) fn new(model: &'a GameModel<S>, policy: &'a AdversaryPolicy<S>) -> Result<Self> {
        let grid = match policy {
            AdversaryPolicy::UniformIid { points_per_axis }
            | AdversaryPolicy::Switching { points_per_axis, .. }
            | AdversaryPolicy::Greedy { points_per_axis, .. } => Some(AdverseGrid::new(model, *points_per_axis)?),
            AdversaryPolicy::Constant(a) => {
                if a.len() != model.dim || !model.adverse_set_a.contains(a, S::zero()) {
                    return Err(Error::Precondition(format!("constant adversary {a:?} is not in the A box")));
                }
                None
            }
            AdversaryPolicy::Scripted(_) => None,
        };
        if let AdversaryPolicy::Switching { rate, .. } = policy {
            if !(*rate >= S::zero()) {
                return Err(Error::Precondition("switching rate must be nonnegative".into()));
            }
        }
        if let AdversaryPolicy::Greedy { surface, .. } = policy {
            if surface.grid.dim() != model.dim {
                return Err(Error::GridMismatch("greedy adversary surface dimension differs from the model".into()));
            }
        }
        Ok(Self { model, policy, grid })
    }

    /// Writes `a_k` into `a` (holding `a_{k−1}` on entry for `k > 0`).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn emit(&self, k: usize, t: S, x: &[S], dt: S, rng: &mut ChaCha8Rng, a: &mut [S]) -> Result<()> {
        let d = self.model.dim;
        match self.policy {
            AdversaryPolicy::Constant(c) => a[..d].copy_from_slice(c),
            AdversaryPolicy::UniformIid { .. } => {
                let g = self.grid.as_ref().expect("grid built for uniform policy");
                a[..d].copy_from_slice(g.point(rng.random_range(0..g.len())));
            }
            AdversaryPolicy::Switching { rate, .. } => {
                let g = self.grid.as_ref().expect("grid built for switching policy");
                let jump = k == 0 || rng.random::<f64>() < 1.0 - (-(*rate * dt).as_f64()).exp();
                if jump {
                    a[..d].copy_from_slice(g.point(rng.random_range(0..g.len())));
                }
            }
            AdversaryPolicy::Greedy { surface, .. } => {
                let g = self.grid.as_ref().expect("grid built for greedy policy");
                let mut p = [S::zero(); MAX_DIM];
                let mut m = [S::zero(); MAX_DIM * MAX_DIM];
                let (w, _) = surface.value_at(t, x);
                surface.gradient_at(t, x, &mut p[..d]);
                surface.hessian_at(t, x, &mut m[..d * d]);
                let e = h(self.model, t, x, w, &p[..d], &m[..d * d], g)?;
                a[..d].copy_from_slice(&e.argmax_a);
            }
            AdversaryPolicy::Scripted(s) => {
                let row = s.get(k).ok_or_else(|| Error::Precondition(format!("scripted adversary has no entry for step {k}")))?;
                if row.len() != d {
                    return Err(Error::Precondition(format!("scripted entry {k} has wrong dimension")));
                }
                a[..d].copy_from_slice(row);
            }
        }
        if !self.model.adverse_set_a.contains(&a[..d], S::zero()) {
            return Err(Error::Precondition(format!("adversary emitted {:?} outside the A box at step {k}", &a[..d])));
        }
        Ok(())
    }
}
