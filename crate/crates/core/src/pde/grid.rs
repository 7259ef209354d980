use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::BoxDomain;
use crate::scalar::{Scalar, MAX_DIM};

/// Rectilinear space-time grid. Space nodes are ordered lexicographically
/// with the last axis fastest; time slices run from `t = 0` (slice 0) to
/// `t = T` (slice `n_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub n_x: Vec<usize>,
    pub n_t: usize,
    pub horizon: S,
}

impl<S: Scalar> Grid<S> {
    pub fn new(domain: &BoxDomain<S>, n_x: &[usize], n_t: usize, horizon: S) -> Result<Self> {
        let d = domain.dim();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Precondition(format!("grid dimension {d} outside 1..={MAX_DIM}")));
        }
        if n_x.len() != d {
            return Err(Error::Precondition(format!("{} node counts given for a {d}-dimensional box", n_x.len())));
        }
        if let Some(n) = n_x.iter().find(|&&n| n < 3) {
            return Err(Error::Precondition(format!("each axis needs at least 3 nodes, got {n}")));
        }
        if n_t == 0 {
            return Err(Error::Precondition("grid needs at least one time step".into()));
        }
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(Error::Precondition("horizon must be positive and finite".into()));
        }
        for i in 0..d {
            if !(domain.hi[i] > domain.lo[i]) {
                return Err(Error::Precondition(format!("axis {i} of the grid box has zero width")));
            }
        }
        Ok(Self {
            lo: domain.lo.clone(),
            hi: domain.hi.clone(),
            n_x: n_x.to_vec(),
            n_t,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_x.len()
    }

    pub fn domain(&self) -> BoxDomain<S> {
        BoxDomain::new(self.lo.clone(), self.hi.clone())
    }

    pub fn dt(&self) -> S {
        self.horizon / S::lit(self.n_t as f64)
    }

    pub fn dx(&self, axis: usize) -> S {
        (self.hi[axis] - self.lo[axis]) / S::lit((self.n_x[axis] - 1) as f64)
    }

    pub fn time(&self, k: usize) -> S {
        if k == self.n_t {
            self.horizon
        } else {
            self.horizon * S::lit(k as f64) / S::lit(self.n_t as f64)
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> S {
        if i + 1 == self.n_x[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + self.dx(axis) * S::lit(i as f64)
        }
    }

    /// Number of space nodes per slice.
    pub fn slice_len(&self) -> usize {
        self.n_x.iter().product()
    }

    pub fn total_len(&self) -> usize {
        self.slice_len() * (self.n_t + 1)
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let d = self.dim();
        let mut acc = 1;
        for i in (0..d).rev() {
            s[i] = acc;
            acc *= self.n_x[i];
        }
        s
    }

    pub fn multi_index(&self, mut node: usize, out: &mut [usize]) {
        for i in (0..self.dim()).rev() {
            out[i] = node % self.n_x[i];
            node /= self.n_x[i];
        }
    }

    pub fn node_coords(&self, node: usize, out: &mut [S]) {
        let mut idx = [0; MAX_DIM];
        self.multi_index(node, &mut idx);
        for i in 0..self.dim() {
            out[i] = self.coord(i, idx[i]);
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let mut idx = [0; MAX_DIM];
        self.multi_index(node, &mut idx);
        (0..self.dim()).any(|i| idx[i] == 0 || idx[i] + 1 == self.n_x[i])
    }

    /// `dt/T + max_i dx_i / width_i`: the dimensionless mesh size.
    pub fn mesh_size(&self) -> S {
        let mut m = S::zero();
        for i in 0..self.dim() {
            m = m.max(self.dx(i) / (self.hi[i] - self.lo[i]));
        }
        S::one() / S::lit(self.n_t as f64) + m
    }

    /// Default tolerance for residual sign checks.
    pub fn residual_tol(&self) -> S {
        S::lit(10.0) * self.mesh_size()
    }

    /// Nearest node to `x` (after clamping into the box).
    pub fn nearest_node(&self, x: &[S]) -> usize {
        let st = self.strides();
        let mut node = 0;
        for i in 0..self.dim() {
            let s = ((x[i] - self.lo[i]) / self.dx(i)).round().as_f64();
            let j = (s.max(0.0) as usize).min(self.n_x[i] - 1);
            node += j * st[i];
        }
        node
    }

    /// Index of the time slice closest to `t`.
    pub fn nearest_slice(&self, t: S) -> usize {
        let k = (t / self.dt()).round().as_f64();
        (k.max(0.0) as usize).min(self.n_t)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_x == other.n_x && self.n_t == other.n_t && self.lo == other.lo && self.hi == other.hi && self.horizon == other.horizon
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Interpolation location inside one axis.
#[derive(Clone, Copy)]
struct Cell<S> {
    j: usize,
    frac: S,
}

/// Values of a surface `w(t, x)` on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn<S> {
    pub grid: Grid<S>,
    /// Slice-major: `values[k * slice_len + node]`.
    pub values: Vec<S>,
    pub label: String,
}

impl<S: Scalar> GridFn<S> {
    pub fn from_fn(grid: &Grid<S>, label: impl Into<String>, f: impl Fn(S, &[S]) -> S) -> Self {
        let d = grid.dim();
        let n = grid.slice_len();
        let mut values = Vec::with_capacity(grid.total_len());
        let mut x = [S::zero(); MAX_DIM];
        for k in 0..=grid.n_t {
            let t = grid.time(k);
            for node in 0..n {
                grid.node_coords(node, &mut x);
                values.push(f(t, &x[..d]));
            }
        }
        Self {
            grid: grid.clone(),
            values,
            label: label.into(),
        }
    }

    pub fn constant(grid: &Grid<S>, label: impl Into<String>, v: S) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![v; grid.total_len()],
            label: label.into(),
        }
    }

    pub fn slice(&self, k: usize) -> &[S] {
        let n = self.grid.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [S] {
        let n = self.grid.slice_len();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, node: usize) -> S {
        self.values[k * self.grid.slice_len() + node]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        let n = self.grid.slice_len();
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::non_finite(&self.label, format!("slice {}, node {}", i / n, i % n))),
        }
    }

    pub fn map(&self, label: impl Into<String>, f: impl Fn(S, &[S], S) -> S) -> Self {
        let g = &self.grid;
        let d = g.dim();
        let n = g.slice_len();
        let mut x = [S::zero(); MAX_DIM];
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..=g.n_t {
            let t = g.time(k);
            for node in 0..n {
                g.node_coords(node, &mut x);
                values.push(f(t, &x[..d], self.values[k * n + node]));
            }
        }
        Self {
            grid: g.clone(),
            values,
            label: label.into(),
        }
    }

    /// Copy on the same spatial nodes with at most `max_slices` time steps,
    /// linearly interpolated in time. The terminal slice is copied exactly.
    pub fn resample_time(&self, max_slices: usize) -> Result<Self> {
        let g = &self.grid;
        if g.n_t <= max_slices {
            return Ok(self.clone());
        }
        let coarse = Grid::new(&g.domain(), &g.n_x, max_slices.max(1), g.horizon)?;
        let n = g.slice_len();
        let mut values = Vec::with_capacity(coarse.total_len());
        for k in 0..=coarse.n_t {
            let (j, ft, _) = self.time_weights(coarse.time(k));
            for node in 0..n {
                let a = self.at(j, node);
                let b = self.at((j + 1).min(g.n_t), node);
                values.push(if k == coarse.n_t { self.at(g.n_t, node) } else { a + (b - a) * ft });
            }
        }
        Ok(Self {
            grid: coarse,
            values,
            label: self.label.clone(),
        })
    }

    /// SHA-256 of the grid shape, label and value bit patterns, hex encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let g = &self.grid;
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        for n in &g.n_x {
            h.update((*n as u64).to_le_bytes());
        }
        h.update((g.n_t as u64).to_le_bytes());
        for v in g.lo.iter().chain(&g.hi).chain(std::iter::once(&g.horizon)).chain(&self.values) {
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn max_abs(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    fn locate(&self, x: &[S], cells: &mut [Cell<S>]) -> bool {
        let g = &self.grid;
        let mut clamped = false;
        for i in 0..g.dim() {
            let mut s = (x[i] - g.lo[i]) / g.dx(i);
            let top = S::lit((g.n_x[i] - 1) as f64);
            if !(s >= S::zero()) {
                clamped |= s < -S::lit(1e-9) || !s.is_finite();
                s = S::zero();
            } else if s > top {
                clamped |= s > top + S::lit(1e-9);
                s = top;
            }
            let j = (s.floor().as_f64() as usize).min(g.n_x[i] - 2);
            cells[i] = Cell { j, frac: s - S::lit(j as f64) };
        }
        clamped
    }

    fn time_weights(&self, t: S) -> (usize, S, bool) {
        let g = &self.grid;
        let mut s = t / g.dt();
        let mut clamped = false;
        let top = S::lit(g.n_t as f64);
        if !(s >= S::zero()) {
            clamped = s < -S::lit(1e-9) || !s.is_finite();
            s = S::zero();
        } else if s > top {
            clamped = s > top + S::lit(1e-9);
            s = top;
        }
        let k = (s.floor().as_f64() as usize).min(g.n_t - 1);
        (k, s - S::lit(k as f64), clamped)
    }

    /// Multilinear interpolation over the `2^d` corners of the enclosing cell,
    /// applying `node_val(k, node)` at each corner.
    fn corners(&self, k: usize, cells: &[Cell<S>], mut node_val: impl FnMut(usize, usize) -> S) -> S {
        let d = self.grid.dim();
        let st = self.grid.strides();
        let mut acc = S::zero();
        for mask in 0..(1usize << d) {
            let mut w = S::one();
            let mut node = 0;
            for i in 0..d {
                if mask >> i & 1 == 1 {
                    w = w * cells[i].frac;
                    node += (cells[i].j + 1) * st[i];
                } else {
                    w = w * (S::one() - cells[i].frac);
                    node += cells[i].j * st[i];
                }
            }
            if w != S::zero() {
                acc = acc + w * node_val(k, node);
            }
        }
        acc
    }

    /// Interpolated value; the flag reports clamping of `(t, x)` into the grid.
    pub fn value_at(&self, t: S, x: &[S]) -> (S, bool) {
        let mut cells = [Cell { j: 0, frac: S::zero() }; MAX_DIM];
        let cx = self.locate(x, &mut cells);
        let (k, ft, ct) = self.time_weights(t);
        let a = self.corners(k, &cells, |k, n| self.at(k, n));
        let b = self.corners(k + 1, &cells, |k, n| self.at(k, n));
        (a + (b - a) * ft, cx || ct)
    }

    /// Central-difference first derivative along `axis` at a node
    /// (one-sided on the boundary).
    pub fn node_derivative(&self, k: usize, node: usize, axis: usize) -> S {
        let g = &self.grid;
        let st = g.strides()[axis];
        let i = (node / st) % g.n_x[axis];
        let h = g.dx(axis);
        if i == 0 {
            (self.at(k, node + st) - self.at(k, node)) / h
        } else if i + 1 == g.n_x[axis] {
            (self.at(k, node) - self.at(k, node - st)) / h
        } else {
            (self.at(k, node + st) - self.at(k, node - st)) / (h + h)
        }
    }

    /// Central-difference second derivative `∂²/∂x_a∂x_b` at a node; nodes on
    /// the boundary borrow the stencil of their inward neighbour.
    pub fn node_second_derivative(&self, k: usize, node: usize, a: usize, b: usize) -> S {
        let g = &self.grid;
        let st = g.strides();
        let inward = |node: usize, axis: usize| {
            let i = (node / st[axis]) % g.n_x[axis];
            if i == 0 {
                node + st[axis]
            } else if i + 1 == g.n_x[axis] {
                node - st[axis]
            } else {
                node
            }
        };
        let mut c = inward(node, a);
        if a == b {
            let h = g.dx(a);
            return (self.at(k, c + st[a]) - (self.at(k, c) + self.at(k, c)) + self.at(k, c - st[a])) / (h * h);
        }
        c = inward(c, b);
        let (sa, sb) = (st[a], st[b]);
        let num = self.at(k, c + sa + sb) - self.at(k, c + sa - sb) - self.at(k, c - sa + sb) + self.at(k, c - sa - sb);
        num / (S::lit(4.0) * g.dx(a) * g.dx(b))
    }

    /// Interpolated central-difference gradient. Returns the clamp flag.
    pub fn gradient_at(&self, t: S, x: &[S], out: &mut [S]) -> bool {
        let d = self.grid.dim();
        let mut cells = [Cell { j: 0, frac: S::zero() }; MAX_DIM];
        let cx = self.locate(x, &mut cells);
        let (k, ft, ct) = self.time_weights(t);
        for (axis, o) in out.iter_mut().enumerate().take(d) {
            let a = self.corners(k, &cells, |k, n| self.node_derivative(k, n, axis));
            let b = self.corners(k + 1, &cells, |k, n| self.node_derivative(k, n, axis));
            *o = a + (b - a) * ft;
        }
        cx || ct
    }

    /// Interpolated central-difference Hessian, row-major. Returns the clamp flag.
    pub fn hessian_at(&self, t: S, x: &[S], out: &mut [S]) -> bool {
        let d = self.grid.dim();
        let mut cells = [Cell { j: 0, frac: S::zero() }; MAX_DIM];
        let cx = self.locate(x, &mut cells);
        let (k, ft, ct) = self.time_weights(t);
        for a in 0..d {
            for b in a..d {
                let lo = self.corners(k, &cells, |k, n| self.node_second_derivative(k, n, a, b));
                let hi = self.corners(k + 1, &cells, |k, n| self.node_second_derivative(k, n, a, b));
                let v = lo + (hi - lo) * ft;
                out[a * d + b] = v;
                out[b * d + a] = v;
            }
        }
        cx || ct
    }

    /// CSV with a `#`-prefixed header describing the grid, then columns
    /// `t, x1..xd, value`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let g = &self.grid;
        let d = g.dim();
        let join = |v: &[S]| v.iter().map(|x| format!("{:?}", x.as_f64())).collect::<Vec<_>>().join(" ");
        writeln!(w, "# label={}", self.label.replace('\n', " "))?;
        writeln!(w, "# dim={d}")?;
        writeln!(w, "# n_x={}", g.n_x.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "))?;
        writeln!(w, "# n_t={}", g.n_t)?;
        writeln!(w, "# horizon={:?}", g.horizon.as_f64())?;
        writeln!(w, "# lo={}", join(&g.lo))?;
        writeln!(w, "# hi={}", join(&g.hi))?;
        let mut head = String::from("t");
        for i in 1..=d {
            let _ = write!(head, ",x{i}");
        }
        writeln!(w, "{head},value")?;
        let mut x = [S::zero(); MAX_DIM];
        let mut line = String::new();
        for k in 0..=g.n_t {
            let t = g.time(k).as_f64();
            for node in 0..g.slice_len() {
                g.node_coords(node, &mut x);
                line.clear();
                let _ = write!(line, "{t:?}");
                for xi in &x[..d] {
                    let _ = write!(line, ",{:?}", xi.as_f64());
                }
                let _ = write!(line, ",{:?}", self.at(k, node).as_f64());
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut values = Vec::new();
        let mut seen_columns = false;
        let mut d = 0usize;
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = no + 1;
            let perr = |m: &str| Error::Parse { line: lineno, message: m.to_string() };
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| perr("malformed header"))?;
                header.insert(k.to_string(), v.to_string());
                continue;
            }
            if !seen_columns {
                seen_columns = true;
                d = header
                    .get("dim")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| perr("missing dim header"))?;
                if line.split(',').count() != d + 2 {
                    return Err(perr("column header does not match dim"));
                }
                continue;
            }
            let last = line.rsplit(',').next().ok_or_else(|| perr("empty row"))?;
            if line.split(',').count() != d + 2 {
                return Err(perr("wrong number of columns"));
            }
            let v: f64 = last.trim().parse().map_err(|_| perr("value is not a number"))?;
            values.push(S::lit(v));
        }
        let get = |k: &str| header.get(k).ok_or_else(|| Error::Parse { line: 0, message: format!("missing header {k}") });
        let nums = |s: &String| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Parse { line: 0, message: format!("bad number {v}") }))
                .collect()
        };
        let n_x: Vec<usize> = nums(get("n_x")?)?.into_iter().map(|v| v as usize).collect();
        let n_t = nums(get("n_t")?)?.first().copied().unwrap_or(0.0) as usize;
        let horizon = S::lit(nums(get("horizon")?)?.first().copied().unwrap_or(0.0));
        let lo = nums(get("lo")?)?.into_iter().map(S::lit).collect();
        let hi = nums(get("hi")?)?.into_iter().map(S::lit).collect();
        let grid = Grid::new(&BoxDomain::new(lo, hi), &n_x, n_t, horizon)?;
        if values.len() != grid.total_len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {} rows, found {}", grid.total_len(), values.len()),
            });
        }
        Ok(Self {
            grid,
            values,
            label: header.get("label").cloned().unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid<f64> {
        Grid::new(&BoxDomain::new(vec![0.0, -1.0], vec![2.0, 1.0]), &[5, 9], 4, 1.0).unwrap()
    }

    #[test]
    fn rejects_too_few_nodes() {
        assert!(Grid::new(&BoxDomain::cube(1, 0.0, 1.0), &[2], 4, 1.0).is_err());
        assert!(Grid::new(&BoxDomain::cube(1, 0.0, 1.0), &[3], 0, 1.0).is_err());
    }

    #[test]
    fn node_layout_is_last_axis_fastest() {
        let g = grid2();
        let mut x = [0.0; 2];
        g.node_coords(1, &mut x);
        assert_eq!(x, [0.0, -0.75]);
        g.node_coords(9, &mut x);
        assert_eq!(x, [0.5, -1.0]);
        assert_eq!(g.coord(1, 8), 1.0);
        assert!(g.is_boundary(0) && !g.is_boundary(10));
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = grid2();
        let f = |t: f64, x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] + 3.0 * t;
        let w = GridFn::from_fn(&g, "bilinear", f);
        for &(t, a, b) in &[(0.1, 0.3, 0.2), (0.77, 1.9, -0.95), (1.0, 2.0, 1.0)] {
            let (v, c) = w.value_at(t, &[a, b]);
            assert!((v - f(t, &[a, b])).abs() < 1e-12);
            assert!(!c);
        }
        let (_, c) = w.value_at(0.5, &[2.5, 0.0]);
        assert!(c);
    }

    #[test]
    fn derivatives_are_exact_on_quadratics() {
        let g = grid2();
        let w = GridFn::from_fn(&g, "q", |_, x| x[0] * x[0] + 3.0 * x[0] * x[1] - 2.0 * x[1] * x[1]);
        let mut p = [0.0; 2];
        let mut m = [0.0; 4];
        let x = [1.0, 0.25];
        w.gradient_at(0.0, &x, &mut p);
        w.hessian_at(0.0, &x, &mut m);
        assert!((p[0] - (2.0 + 0.75)).abs() < 1e-12 && (p[1] - (3.0 - 1.0)).abs() < 1e-12);
        for (a, b) in m.iter().zip([2.0, 3.0, 3.0, -4.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = grid2();
        let w = GridFn::from_fn(&g, "round trip", |t, x| t.sin() + x[0] / 3.0 - x[1]);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = GridFn::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn csv_rejects_truncated_file() {
        let g = grid2();
        let w = GridFn::constant(&g, "c", 1.0);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let cut: String = s.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(GridFn::<f64>::read_csv(cut.as_bytes()).is_err());
    }

    #[test]
    fn mesh_size_is_dimensionless() {
        let g = Grid::<f64>::new(&BoxDomain::cube(1, 0.0, 400.0), &[401], 100, 2.0).unwrap();
        assert!((g.mesh_size() - (0.01 + 1.0 / 400.0)).abs() < 1e-15);
    }

    #[test]
    fn time_resampling_is_exact_on_time_linear_functions() {
        let g = Grid::<f64>::new(&BoxDomain::cube(1, 0.0, 1.0), &[11], 90, 1.0).unwrap();
        let f = |t: f64, x: &[f64]| 2.0 * t - x[0] * x[0] + 0.5 * t * x[0];
        let w = GridFn::from_fn(&g, "lin-t", f);
        let r = w.resample_time(7).unwrap();
        assert_eq!(r.grid.n_t, 7);
        assert_eq!(r.grid.n_x, g.n_x);
        assert_eq!(r.slice(7), w.slice(90));
        for k in 0..7 {
            let t = r.grid.time(k);
            let mut x = [0.0];
            for node in 0..11 {
                r.grid.node_coords(node, &mut x);
                assert!((r.slice(k)[node] - f(t, &x)).abs() < 1e-12);
            }
        }
        assert_eq!(w.resample_time(200).unwrap(), w);
    }
}
