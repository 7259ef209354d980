use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{adverse_terms, AdverseGrid, AdverseTerms, Rescaling};
use crate::model::GameModel;
use crate::scalar::{outer_self, Scalar, MAX_DIM};

use super::grid::{Grid, GridFn};

pub const DEFAULT_CFL_SAFETY: f64 = 0.9;

/// Nonnegative stencil weights of the discrete operator for one adverse control.
#[derive(Clone, Copy, Debug)]
pub struct StencilWeights<S> {
    pub plus: [S; MAX_DIM],
    pub minus: [S; MAX_DIM],
    /// Weight of each of the two diagonal neighbours for the pair `(i, j)`,
    /// signed by the sign of the diffusion entry.
    pub cross: [[S; MAX_DIM]; MAX_DIM],
    /// Sum of all neighbour weights.
    pub total: S,
    /// True when some neighbour weight is negative (diagonal dominance lost).
    pub negative: bool,
}

/// Upwind drift weights plus central second differences; cross derivatives
/// use the seven-point stencil oriented by the sign of each off-diagonal entry.
pub fn stencil_weights<S: Scalar>(drift: &[S], diffusion: &[S], dx: &[S], d: usize) -> StencilWeights<S> {
    let half = S::lit(0.5);
    let mut w = StencilWeights {
        plus: [S::zero(); MAX_DIM],
        minus: [S::zero(); MAX_DIM],
        cross: [[S::zero(); MAX_DIM]; MAX_DIM],
        total: S::zero(),
        negative: false,
    };
    for i in 0..d {
        let mut off = S::zero();
        for j in 0..d {
            if j != i {
                let s = diffusion[i * d + j] * half / (dx[i] * dx[j]);
                off = off + s.abs();
                if j > i {
                    w.cross[i][j] = s;
                    w.total = w.total + s.abs() + s.abs();
                }
            }
        }
        let diag = diffusion[i * d + i] * half / (dx[i] * dx[i]) - off;
        let b = drift[i] / dx[i];
        w.plus[i] = diag + b.max(S::zero());
        w.minus[i] = diag + (-b).max(S::zero());
        w.negative |= w.plus[i] < S::zero() || w.minus[i] < S::zero();
        w.total = w.total + w.plus[i] + w.minus[i];
    }
    w
}

/// Outcome of evaluating the discrete Hamiltonian at one node.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeEval<S> {
    /// `max_a [ zero_order + Σ weight · (neighbour − centre) ]`.
    pub value: S,
    pub argmax: usize,
    /// Largest `total + zero-order Lipschitz bound` over the adverse grid.
    pub stiffness: S,
    pub negative_weight: bool,
    pub clamped: bool,
}

/// Counters accumulated over one or more backward steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub dominance_failures: u64,
    pub clamped_nodes: u64,
    /// Largest `dt · stiffness` encountered; at most 1 for a monotone step.
    pub max_cfl_ratio: f64,
}

impl StepStats {
    fn merge(self, o: Self) -> Self {
        Self {
            dominance_failures: self.dominance_failures + o.dominance_failures,
            clamped_nodes: self.clamped_nodes + o.clamped_nodes,
            max_cfl_ratio: self.max_cfl_ratio.max(o.max_cfl_ratio),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub steps: usize,
    pub stats: StepStats,
    pub rescale_c: f64,
}

/// The explicit monotone scheme bound to a model, grid and adverse grid.
pub struct Scheme<'a, S: Scalar> {
    pub model: &'a GameModel<S>,
    pub grid: &'a Grid<S>,
    pub rescale: Rescaling<S>,
    pub a_grid: &'a AdverseGrid<S>,
    dx: [S; MAX_DIM],
    strides: [usize; MAX_DIM],
    y_lipschitz: S,
}

impl<'a, S: Scalar> Scheme<'a, S> {
    pub fn new(model: &'a GameModel<S>, grid: &'a Grid<S>, rescale: Option<&Rescaling<S>>, a_grid: &'a AdverseGrid<S>) -> Result<Self> {
        if grid.dim() != model.dim {
            return Err(Error::GridMismatch(format!("grid is {}-dimensional, model is {}-dimensional", grid.dim(), model.dim)));
        }
        if grid.horizon != model.horizon {
            return Err(Error::GridMismatch("grid horizon differs from the model horizon".into()));
        }
        let rescale = rescale.cloned().unwrap_or_else(Rescaling::identity);
        if !rescale.monotone_verified {
            return Err(Error::Precondition("rescaling has not been verified monotone".into()));
        }
        let mut dx = [S::zero(); MAX_DIM];
        for (i, v) in dx.iter_mut().enumerate().take(grid.dim()) {
            *v = grid.dx(i);
        }
        let y_lipschitz = rescale.c + model.growth_l;
        Ok(Self {
            model,
            grid,
            strides: grid.strides(),
            dx,
            y_lipschitz,
            rescale,
            a_grid,
        })
    }

    /// Dirichlet value on the spatial boundary at time `t` (in the scheme's
    /// own, possibly rescaled, units).
    pub fn boundary_value(&self, t: S, x: &[S]) -> S {
        let g = self.model.g(x);
        if self.rescale.is_identity() {
            g
        } else {
            (self.rescale.c * t).exp() * g
        }
    }

    /// Discrete Hamiltonian at interior `node` of `slice` taken at time `t`.
    pub fn node_operator(&self, t: S, slice: &[S], node: usize) -> Result<NodeEval<S>> {
        let d = self.grid.dim();
        let st = &self.strides;
        let dx = &self.dx[..d];
        let mut x = [S::zero(); MAX_DIM];
        self.grid.node_coords(node, &mut x);
        let w = slice[node];
        let mut p = [S::zero(); MAX_DIM];
        for i in 0..d {
            p[i] = (slice[node + st[i]] - slice[node - st[i]]) / (dx[i] + dx[i]);
        }
        let mut terms = AdverseTerms::zeroed();
        let mut out = NodeEval {
            value: S::neg_infinity(),
            ..Default::default()
        };
        for (ai, a) in self.a_grid.iter().enumerate() {
            adverse_terms(self.model, &self.rescale, t, &x[..d], w, &p[..d], a, &mut terms)?;
            let sw = stencil_weights(&terms.drift[..d], &terms.diffusion[..d * d], dx, d);
            let mut acc = terms.zero_order;
            for i in 0..d {
                acc = acc + sw.plus[i] * (slice[node + st[i]] - w) + sw.minus[i] * (slice[node - st[i]] - w);
                for j in i + 1..d {
                    let s = sw.cross[i][j];
                    if s > S::zero() {
                        acc = acc + s * ((slice[node + st[i] + st[j]] - w) + (slice[node - st[i] - st[j]] - w));
                    } else if s < S::zero() {
                        acc = acc - s * ((slice[node + st[i] - st[j]] - w) + (slice[node - st[i] + st[j]] - w));
                    }
                }
            }
            if !acc.is_finite() {
                return Err(Error::non_finite("discrete Hamiltonian", format!("t={t}, x={:?}, a={a:?}", &x[..d])));
            }
            if acc > out.value {
                out.value = acc;
                out.argmax = ai;
            }
            out.stiffness = out.stiffness.max(sw.total + self.y_lipschitz);
            out.negative_weight |= sw.negative;
            out.clamped |= terms.clamped;
        }
        Ok(out)
    }

    /// Computes slice `k` from slice `k + 1` (`next`) into `out`.
    pub fn backward_step(&self, k: usize, next: &[S], out: &mut [S]) -> Result<StepStats> {
        let g = self.grid;
        let d = g.dim();
        let t_next = g.time(k + 1);
        let t_now = g.time(k);
        let dt = t_next - t_now;
        out.par_iter_mut()
            .enumerate()
            .with_min_len(64)
            .map(|(node, o)| -> Result<StepStats> {
                if g.is_boundary(node) {
                    let mut x = [S::zero(); MAX_DIM];
                    g.node_coords(node, &mut x);
                    *o = self.boundary_value(t_now, &x[..d]);
                    return Ok(StepStats::default());
                }
                let e = self.node_operator(t_next, next, node)?;
                let ratio = (dt * e.stiffness).as_f64();
                if ratio > 1.0 + 1e-12 {
                    return Err(Error::Cfl {
                        dt: dt.as_f64(),
                        bound: (S::one() / e.stiffness).as_f64(),
                    });
                }
                let v = next[node] + dt * e.value;
                if !v.is_finite() {
                    let mut x = [S::zero(); MAX_DIM];
                    g.node_coords(node, &mut x);
                    return Err(Error::non_finite("value", format!("t={t_now}, x={:?}", &x[..d])));
                }
                *o = v;
                Ok(StepStats {
                    dominance_failures: e.negative_weight as u64,
                    clamped_nodes: e.clamped as u64,
                    max_cfl_ratio: ratio,
                })
            })
            .try_reduce(StepStats::default, |a, b| Ok(a.merge(b)))
    }

    /// Largest step for which every sampled node and adverse control keeps
    /// the update monotone, sampled at five times in `[0, T]`.
    pub fn stable_dt(&self) -> S {
        let g = self.grid;
        let d = g.dim();
        let dx = &self.dx[..d];
        let mut worst = S::zero();
        let mut x = [S::zero(); MAX_DIM];
        let mut drift = [S::zero(); MAX_DIM];
        let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
        let mut diff = [S::zero(); MAX_DIM * MAX_DIM];
        for q in 0..=4 {
            let t = g.horizon * S::lit(q as f64 / 4.0);
            for node in 0..g.slice_len() {
                if g.is_boundary(node) {
                    continue;
                }
                g.node_coords(node, &mut x);
                for a in self.a_grid.iter() {
                    self.model.mu_x_into(t, &x[..d], a, &mut drift[..d]);
                    self.model.sigma_x_into(t, &x[..d], a, &mut sig[..d * d]);
                    outer_self(&sig[..d * d], d, &mut diff[..d * d]);
                    let w = stencil_weights(&drift[..d], &diff[..d * d], dx, d);
                    worst = worst.max(w.total + self.y_lipschitz);
                }
            }
        }
        if worst > S::zero() {
            S::one() / worst
        } else {
            S::infinity()
        }
    }
}

/// Builds a grid on the model's state box with the fewest time steps that
/// satisfy the CFL bound `dt ≤ safety · stable_dt`.
pub fn cfl_grid<S: Scalar>(model: &GameModel<S>, n_x: &[usize], a_grid: &AdverseGrid<S>, rescale: Option<&Rescaling<S>>, safety: S) -> Result<Grid<S>> {
    if !(safety > S::zero() && safety <= S::one()) {
        return Err(Error::Precondition("CFL safety factor must lie in (0, 1]".into()));
    }
    let probe = Grid::new(&model.state_box, n_x, 1, model.horizon)?;
    let bound = Scheme::new(model, &probe, rescale, a_grid)?.stable_dt() * safety;
    let n_t = if bound.is_finite() {
        (model.horizon / bound).ceil().as_f64().max(1.0) as usize
    } else {
        1
    };
    Grid::new(&model.state_box, n_x, n_t, model.horizon)
}

/// Refuses grids whose time step exceeds `safety · stable_dt`.
pub fn check_cfl<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>, a_grid: &AdverseGrid<S>, rescale: Option<&Rescaling<S>>, safety: S) -> Result<S> {
    let bound = Scheme::new(model, grid, rescale, a_grid)?.stable_dt() * safety;
    if grid.dt() > bound {
        return Err(Error::Cfl {
            dt: grid.dt().as_f64(),
            bound: bound.as_f64(),
        });
    }
    Ok(bound)
}

/// Backward sweep from `g` at `t = T`. With a rescaling the sweep runs on
/// `e^{ct} w` and the result is returned in original units.
pub fn solve_hjb<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>, rescale: Option<&Rescaling<S>>, a_grid: &AdverseGrid<S>) -> Result<GridFn<S>> {
    solve_hjb_with_report(model, grid, rescale, a_grid).map(|(w, _)| w)
}

pub fn solve_hjb_with_report<S: Scalar>(
    model: &GameModel<S>,
    grid: &Grid<S>,
    rescale: Option<&Rescaling<S>>,
    a_grid: &AdverseGrid<S>,
) -> Result<(GridFn<S>, SolveReport)> {
    check_cfl(model, grid, a_grid, rescale, S::one())?;
    let scheme = Scheme::new(model, grid, rescale, a_grid)?;
    let d = grid.dim();
    let n = grid.slice_len();
    let mut values = vec![S::zero(); grid.total_len()];
    let mut x = [S::zero(); MAX_DIM];
    let terminal: Vec<S> = (0..n)
        .map(|node| {
            grid.node_coords(node, &mut x);
            model.g(&x[..d])
        })
        .collect();
    if let Some(i) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite("g", format!("terminal node {i}")));
    }
    let c = scheme.rescale.c;
    let grow_t = (c * grid.horizon).exp();
    for (dst, g) in values[grid.n_t * n..].iter_mut().zip(&terminal) {
        *dst = if scheme.rescale.is_identity() { *g } else { grow_t * *g };
    }
    let mut stats = StepStats::default();
    for k in (0..grid.n_t).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let s = scheme.backward_step(k, &tail[..n], &mut head[k * n..])?;
        stats = stats.merge(s);
    }
    if !scheme.rescale.is_identity() {
        for k in 0..grid.n_t {
            let shrink = S::one() / (c * grid.time(k)).exp();
            for v in &mut values[k * n..(k + 1) * n] {
                *v = *v * shrink;
            }
        }
    }
    values[grid.n_t * n..].copy_from_slice(&terminal);
    Ok((
        GridFn {
            grid: grid.clone(),
            values,
            label: format!("hjb:{}", model.name),
        },
        SolveReport {
            steps: grid.n_t,
            stats,
            rescale_c: c.as_f64(),
        },
    ))
}
