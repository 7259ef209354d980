use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{h, AdverseGrid};
use crate::model::{BoxDomain, GameModel};
use crate::sampling::stream_rng;
use crate::scalar::{Scalar, MAX_DIM};

use super::grid::{Grid, GridFn};
use super::scheme::Scheme;

/// A space-time node and the measured quantity there.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeValue {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

fn node_value<S: Scalar>(grid: &Grid<S>, k: usize, node: usize, value: S) -> NodeValue {
    let mut x = [S::zero(); MAX_DIM];
    grid.node_coords(node, &mut x);
    NodeValue {
        t: grid.time(k).as_f64(),
        x: x[..grid.dim()].iter().map(|v| v.as_f64()).collect(),
        value: value.as_f64(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceSummary {
    pub t: f64,
    pub max: f64,
    pub min: f64,
}

/// Discrete residual `(w_{k+1} − w_k)/dt + H_h(w_{k+1})` over interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub tol: f64,
    pub checked_nodes: usize,
    pub excluded_nodes: usize,
    pub max_abs: f64,
    pub l2: f64,
    /// Nodes with residual above `tol` (these break the super-solution sign).
    pub positive_violations: usize,
    /// Nodes with residual below `−tol` (these break the sub-solution sign).
    pub negative_violations: usize,
    pub worst_positive: Option<NodeValue>,
    pub worst_negative: Option<NodeValue>,
    pub per_slice: Vec<SliceSummary>,
}

impl ResidualReport {
    pub fn is_supersolution(&self) -> bool {
        self.positive_violations == 0
    }

    pub fn is_subsolution(&self) -> bool {
        self.negative_violations == 0
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "residual: checked {} nodes ({} excluded), tol {:.3e}", self.checked_nodes, self.excluded_nodes, self.tol)?;
        writeln!(f, "  max |R| = {:.6e}, L2 = {:.6e}", self.max_abs, self.l2)?;
        writeln!(f, "  R > tol at {} nodes, R < -tol at {} nodes", self.positive_violations, self.negative_violations)?;
        if let Some(w) = &self.worst_positive {
            writeln!(f, "  largest R = {:.6e} at t={}, x={:?}", w.value, w.t, w.x)?;
        }
        if let Some(w) = &self.worst_negative {
            writeln!(f, "  smallest R = {:.6e} at t={}, x={:?}", w.value, w.t, w.x)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualOptions<'a, S> {
    /// Defaults to `10 · mesh_size`.
    pub tol: Option<S>,
    /// Space-time mask (slice-major, slices `0..n_t`) of nodes to skip.
    pub exclude: Option<&'a [bool]>,
}

pub fn residual<S: Scalar>(model: &GameModel<S>, surface: &GridFn<S>, a_grid: &AdverseGrid<S>) -> Result<ResidualReport> {
    residual_with(model, surface, a_grid, ResidualOptions::default())
}

pub fn residual_with<S: Scalar>(model: &GameModel<S>, surface: &GridFn<S>, a_grid: &AdverseGrid<S>, opts: ResidualOptions<'_, S>) -> Result<ResidualReport> {
    surface.check_finite()?;
    let grid = &surface.grid;
    let scheme = Scheme::new(model, grid, None, a_grid)?;
    let tol = opts.tol.unwrap_or_else(|| grid.residual_tol());
    let n = grid.slice_len();
    if let Some(m) = opts.exclude {
        if m.len() != n * grid.n_t {
            return Err(Error::GridMismatch("exclusion mask does not match the grid".into()));
        }
    }
    struct Slice<S> {
        checked: usize,
        excluded: usize,
        sum_sq: f64,
        max: Option<(S, usize)>,
        min: Option<(S, usize)>,
        pos: usize,
        neg: usize,
    }
    let slices: Vec<Slice<S>> = (0..grid.n_t)
        .into_par_iter()
        .map(|k| -> Result<Slice<S>> {
            let t1 = grid.time(k + 1);
            let dt = t1 - grid.time(k);
            let now = surface.slice(k);
            let next = surface.slice(k + 1);
            let mut s = Slice {
                checked: 0,
                excluded: 0,
                sum_sq: 0.0,
                max: None,
                min: None,
                pos: 0,
                neg: 0,
            };
            for node in 0..n {
                if grid.is_boundary(node) {
                    continue;
                }
                if opts.exclude.is_some_and(|m| m[k * n + node]) {
                    s.excluded += 1;
                    continue;
                }
                let e = scheme.node_operator(t1, next, node)?;
                let r = (next[node] - now[node]) / dt + e.value;
                s.checked += 1;
                s.sum_sq += r.as_f64() * r.as_f64();
                if s.max.is_none_or(|m| r > m.0) {
                    s.max = Some((r, node));
                }
                if s.min.is_none_or(|m| r < m.0) {
                    s.min = Some((r, node));
                }
                s.pos += (r > tol) as usize;
                s.neg += (r < -tol) as usize;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut rep = ResidualReport {
        tol: tol.as_f64(),
        checked_nodes: 0,
        excluded_nodes: 0,
        max_abs: 0.0,
        l2: 0.0,
        positive_violations: 0,
        negative_violations: 0,
        worst_positive: None,
        worst_negative: None,
        per_slice: Vec::with_capacity(slices.len()),
    };
    let mut sum_sq = 0.0;
    let mut gmax: Option<(S, usize, usize)> = None;
    let mut gmin: Option<(S, usize, usize)> = None;
    for (k, s) in slices.iter().enumerate() {
        rep.checked_nodes += s.checked;
        rep.excluded_nodes += s.excluded;
        rep.positive_violations += s.pos;
        rep.negative_violations += s.neg;
        sum_sq += s.sum_sq;
        if let (Some(mx), Some(mn)) = (s.max, s.min) {
            rep.per_slice.push(SliceSummary {
                t: grid.time(k).as_f64(),
                max: mx.0.as_f64(),
                min: mn.0.as_f64(),
            });
            if gmax.is_none_or(|g| mx.0 > g.0) {
                gmax = Some((mx.0, k, mx.1));
            }
            if gmin.is_none_or(|g| mn.0 < g.0) {
                gmin = Some((mn.0, k, mn.1));
            }
        }
    }
    if rep.checked_nodes > 0 {
        rep.l2 = (sum_sq / rep.checked_nodes as f64).sqrt();
    }
    if let Some((v, k, node)) = gmax {
        rep.max_abs = rep.max_abs.max(v.as_f64().abs());
        rep.worst_positive = Some(node_value(grid, k, node, v));
    }
    if let Some((v, k, node)) = gmin {
        rep.max_abs = rep.max_abs.max(v.as_f64().abs());
        rep.worst_negative = Some(node_value(grid, k, node, v));
    }
    Ok(rep)
}

/// Largest `|g|` over the grid nodes, or the declared bound when it is larger and finite.
pub fn g_sup_norm<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>) -> S {
    let d = grid.dim();
    let mut x = [S::zero(); MAX_DIM];
    let mut m = S::zero();
    for node in 0..grid.slice_len() {
        grid.node_coords(node, &mut x);
        m = m.max(model.g(&x[..d]).abs());
    }
    if model.g_bound.is_finite() {
        m.max(model.g_bound)
    } else {
        m
    }
}

/// `φ(t, x) = −e^{λt} + N₂` with `λ = 2L + 1` and `N₂ = e^{λT} + ‖g‖_∞`.
pub fn classical_supersolution<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>) -> GridFn<S> {
    let lambda = S::lit(2.0) * model.growth_l + S::one();
    let n2 = (lambda * grid.horizon).exp() + g_sup_norm(model, grid);
    GridFn::from_fn(grid, format!("classical-supersolution:{}", model.name), |t, _| -(lambda * t).exp() + n2)
}

/// Exponent `λ = 2L + 1` used by [`classical_supersolution`].
pub fn supersolution_rate<S: Scalar>(model: &GameModel<S>) -> S {
    S::lit(2.0) * model.growth_l + S::one()
}

/// The constant surface `m = min_nodes g`. Its sub-solution status is only
/// claimed when the model declares the structure that supports it or the
/// caller accepts it explicitly.
pub fn constant_subsolution<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>, accept: bool) -> Result<GridFn<S>> {
    if !(model.declarations.constant_subsolution || accept) {
        return Err(Error::Precondition(
            "constant sub-solution requires the model to declare the no-trade and bounded-ratio structure, or explicit acceptance".into(),
        ));
    }
    let d = grid.dim();
    let mut x = [S::zero(); MAX_DIM];
    let mut m = S::infinity();
    for node in 0..grid.slice_len() {
        grid.node_coords(node, &mut x);
        m = m.min(model.g(&x[..d]));
    }
    Ok(GridFn::constant(grid, format!("constant-subsolution:{}", model.name), m))
}

/// Nodewise lattice operation plus the nodes where the residual stencil
/// mixes the two inputs.
#[derive(Clone, Debug)]
pub struct LatticeResult<S> {
    pub surface: GridFn<S>,
    /// Slice-major over slices `0..n_t`, usable as a residual exclusion mask.
    pub kinks: Vec<bool>,
    pub kink_count: usize,
}

fn lattice<S: Scalar>(w1: &GridFn<S>, w2: &GridFn<S>, take_min: bool) -> Result<LatticeResult<S>> {
    if !w1.grid.same_shape(&w2.grid) {
        return Err(Error::GridMismatch("lattice operands live on different grids".into()));
    }
    let pick = |a: S, b: S| if take_min { a.min(b) } else { a.max(b) };
    let values: Vec<S> = w1.values.iter().zip(&w2.values).map(|(&a, &b)| pick(a, b)).collect();
    // bit 0: value attained by w1, bit 1: attained by w2
    let src: Vec<u8> = values
        .iter()
        .zip(w1.values.iter().zip(&w2.values))
        .map(|(&v, (&a, &b))| (v == a) as u8 | (((v == b) as u8) << 1))
        .collect();
    let grid = &w1.grid;
    let d = grid.dim();
    let n = grid.slice_len();
    let st = grid.strides();
    let mut kinks = vec![false; n * grid.n_t];
    let mut kink_count = 0;
    let mut offsets = vec![0isize];
    for i in 0..d {
        let s = st[i] as isize;
        offsets = offsets.iter().flat_map(|&o| [o - s, o, o + s]).collect();
    }
    for k in 0..grid.n_t {
        for node in 0..n {
            if grid.is_boundary(node) {
                continue;
            }
            let mut common = src[k * n + node];
            for &o in &offsets {
                common &= src[(k + 1) * n + (node as isize + o) as usize];
            }
            if common == 0 {
                kinks[k * n + node] = true;
                kink_count += 1;
            }
        }
    }
    let op = if take_min { "min" } else { "max" };
    Ok(LatticeResult {
        surface: GridFn {
            grid: grid.clone(),
            values,
            label: format!("{op}({}, {})", w1.label, w2.label),
        },
        kinks,
        kink_count,
    })
}

pub fn lattice_min<S: Scalar>(w1: &GridFn<S>, w2: &GridFn<S>) -> Result<LatticeResult<S>> {
    lattice(w1, w2, true)
}

pub fn lattice_max<S: Scalar>(w1: &GridFn<S>, w2: &GridFn<S>) -> Result<LatticeResult<S>> {
    lattice(w1, w2, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetMode {
    Sub,
    Super,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JetReport {
    pub mode: JetMode,
    pub checked: usize,
    pub violations: usize,
    /// Largest signed excess over the tolerance, with its location.
    pub worst: Option<NodeValue>,
}

impl JetReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Tests `−q − H(t, x, w, p, M) ≤ tol` (sub) or `≥ −tol` (super) at random
/// interior nodes, with `(q, p, M)` read off the finite-difference stencils.
/// The default tolerance is `10 · mesh_size · (1 + |q| + |H|)`.
pub fn jet_check<S: Scalar>(
    model: &GameModel<S>,
    surface: &GridFn<S>,
    a_grid: &AdverseGrid<S>,
    mode: JetMode,
    n_points: usize,
    seed: u64,
    rel_tol: Option<S>,
) -> Result<JetReport> {
    surface.check_finite()?;
    let grid = &surface.grid;
    let d = grid.dim();
    let n = grid.slice_len();
    let rel = rel_tol.unwrap_or_else(|| grid.residual_tol());
    let interior: Vec<usize> = (0..n).filter(|&i| !grid.is_boundary(i)).collect();
    let mut rng = stream_rng(seed, 0);
    let picks: Vec<(usize, usize)> = (0..n_points)
        .map(|_| (rng.random_range(0..grid.n_t), interior[rng.random_range(0..interior.len())]))
        .collect();
    let outcomes: Vec<Option<S>> = picks
        .par_iter()
        .map(|&(k, node)| -> Result<Option<S>> {
            let t = grid.time(k);
            let dt = grid.time(k + 1) - t;
            let w = surface.at(k, node);
            let q = (surface.at(k + 1, node) - w) / dt;
            let mut x = [S::zero(); MAX_DIM];
            let mut p = [S::zero(); MAX_DIM];
            let mut m = [S::zero(); MAX_DIM * MAX_DIM];
            grid.node_coords(node, &mut x);
            for i in 0..d {
                p[i] = surface.node_derivative(k, node, i);
                for j in 0..d {
                    m[i * d + j] = surface.node_second_derivative(k, node, i.min(j), i.max(j));
                }
            }
            let hv = h(model, t, &x[..d], w, &p[..d], &m[..d * d], a_grid)?.value;
            let e = -q - hv;
            let tol = rel * (S::one() + q.abs() + hv.abs());
            let excess = match mode {
                JetMode::Sub => e - tol,
                JetMode::Super => -e - tol,
            };
            Ok((excess > S::zero()).then_some(excess))
        })
        .collect::<Result<_>>()?;
    let mut rep = JetReport {
        mode,
        checked: picks.len(),
        violations: 0,
        worst: None,
    };
    let mut worst: Option<(S, usize)> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(e) = *o {
            rep.violations += 1;
            if worst.is_none_or(|w| e > w.0) {
                worst = Some((e, i));
            }
        }
    }
    if let Some((e, i)) = worst {
        rep.worst = Some(node_value(grid, picks[i].0, picks[i].1, e));
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub ordered: bool,
    pub violations: usize,
    /// `max (u − v)` over all nodes, with its location.
    pub worst_gap: NodeValue,
}

/// Checks `u ≤ v + tol` on every slice given terminal ordering.
pub fn comparison_check<S: Scalar>(u: &GridFn<S>, v: &GridFn<S>, tol: S) -> Result<ComparisonReport> {
    if !u.grid.same_shape(&v.grid) {
        return Err(Error::GridMismatch("compared surfaces live on different grids".into()));
    }
    let grid = &u.grid;
    let n = grid.slice_len();
    let kt = grid.n_t;
    if let Some(node) = (0..n).find(|&i| u.at(kt, i) > v.at(kt, i) + tol) {
        let mut x = [S::zero(); MAX_DIM];
        grid.node_coords(node, &mut x);
        return Err(Error::Precondition(format!(
            "terminal slices are not ordered at x={:?}: {} > {}",
            &x[..grid.dim()],
            u.at(kt, node),
            v.at(kt, node)
        )));
    }
    let mut worst = (S::neg_infinity(), 0usize);
    let mut violations = 0;
    for (i, (&a, &b)) in u.values.iter().zip(&v.values).enumerate() {
        let gap = a - b;
        if gap > worst.0 {
            worst = (gap, i);
        }
        violations += (gap > tol) as usize;
    }
    Ok(ComparisonReport {
        ordered: violations == 0,
        violations,
        worst_gap: node_value(grid, worst.1 / n, worst.1 % n, worst.0),
    })
}

/// Interior box where Dirichlet data on the truncated boundary has had
/// little influence by time `t`: each face moves inward by
/// `max ‖σ_X row‖ · √(T − t)` measured on that face.
pub fn trust_region<S: Scalar>(model: &GameModel<S>, grid: &Grid<S>, a_grid: &AdverseGrid<S>, t: S) -> BoxDomain<S> {
    let d = grid.dim();
    let tau = (grid.horizon - t).max(S::zero()).sqrt();
    let mut lo = grid.lo.clone();
    let mut hi = grid.hi.clone();
    let mut x = [S::zero(); MAX_DIM];
    let mut idx = [0usize; MAX_DIM];
    let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
    let mut margin_lo = vec![S::zero(); d];
    let mut margin_hi = vec![S::zero(); d];
    for node in 0..grid.slice_len() {
        grid.multi_index(node, &mut idx);
        let on_lo: Vec<bool> = (0..d).map(|i| idx[i] == 0).collect();
        let on_hi: Vec<bool> = (0..d).map(|i| idx[i] + 1 == grid.n_x[i]).collect();
        if !on_lo.iter().chain(&on_hi).any(|&b| b) {
            continue;
        }
        grid.node_coords(node, &mut x);
        for a in a_grid.iter() {
            model.sigma_x_into(t, &x[..d], a, &mut sig[..d * d]);
            for i in 0..d {
                let row = (0..d).fold(S::zero(), |s, j| s + sig[i * d + j] * sig[i * d + j]).sqrt();
                if on_lo[i] {
                    margin_lo[i] = margin_lo[i].max(row);
                }
                if on_hi[i] {
                    margin_hi[i] = margin_hi[i].max(row);
                }
            }
        }
    }
    for i in 0..d {
        lo[i] = lo[i] + margin_lo[i] * tau;
        hi[i] = hi[i] - margin_hi[i] * tau;
    }
    BoxDomain::new(lo, hi)
}
