//! The per-control Hamiltonian `H^{u,a}`, the game Hamiltonian `H` (sup over
//! the adverse set), and its exponentially rescaled version `H̃`.
//!
//! The sup over `A` is an exhaustive search over a tensor grid of the box;
//! ties go to the lexicographically smallest grid point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GameModel;
use crate::sampling::{stream_rng, Halton};
use crate::scalar::{dot, mat_vec, outer_self, Scalar, MAX_DIM};

pub const DEFAULT_A_POINTS: usize = 64;

/// Tensor grid over the adverse box, flattened with stride `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdverseGrid<S> {
    dim: usize,
    points_per_axis: usize,
    flat: Vec<S>,
}

impl<S: Scalar> AdverseGrid<S> {
    pub fn new(model: &GameModel<S>, points_per_axis: usize) -> Result<Self> {
        if points_per_axis == 0 {
            return Err(Error::Precondition("a-grid needs at least one point per axis".into()));
        }
        let pts = model.adverse_set_a.tensor_grid(points_per_axis);
        Ok(Self {
            dim: model.dim,
            points_per_axis,
            flat: pts.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[S]> {
        self.flat.chunks_exact(self.dim)
    }
}

/// Value of a Hamiltonian at a point together with the maximizing adverse control.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianEval<S> {
    pub value: S,
    pub argmax_a: Vec<S>,
    pub argmax_index: usize,
    /// `û` used at the argmax.
    pub u_at_argmax: Vec<S>,
    pub clamped: bool,
}

/// Exponential change of variables `Ỹ = e^{ct} Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescaling<S> {
    pub c: S,
    pub monotone_verified: bool,
    /// Description of the sample set the monotonicity check ran on.
    pub check_grid: String,
}

impl<S: Scalar> Rescaling<S> {
    pub fn identity() -> Self {
        Self {
            c: S::zero(),
            monotone_verified: true,
            check_grid: "identity".into(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.c == S::zero()
    }
}

/// Ingredients of `H̃^a` at one adverse control, used by the finite-difference
/// scheme to assemble monotone stencil weights.
#[derive(Clone, Copy, Debug)]
pub struct AdverseTerms<S> {
    pub drift: [S; MAX_DIM],
    /// `σ_X σ_Xᵀ`, row-major.
    pub diffusion: [S; MAX_DIM * MAX_DIM],
    /// `−c y − e^{ct} μ_Y^û(t, x, e^{−ct}y, e^{−ct}σ_X p, a)`.
    pub zero_order: S,
    pub clamped: bool,
    pub u: [S; MAX_DIM],
}

fn finite_or<S: Scalar>(v: S, what: &str, t: S, x: &[S], a: &[S]) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite(what, format!("t={t}, x={x:?}, a={a:?}")))
    }
}

/// `½ Tr[Σ M]` for row-major `d×d` matrices.
#[inline]
pub fn half_trace<S: Scalar>(sigma2: &[S], m: &[S], d: usize) -> S {
    let mut acc = S::zero();
    for i in 0..d {
        for j in 0..d {
            acc = acc + sigma2[i * d + j] * m[j * d + i];
        }
    }
    acc * S::lit(0.5)
}

/// `H^{u,a}(t,x,y,p,M) = −μ_Y(t,x,y,u,a) + μ_X(t,x,a)ᵀp + ½Tr[σ_Xσ_Xᵀ(t,x,a) M]`.
#[allow(clippy::too_many_arguments)]
pub fn h_ua<S: Scalar>(model: &GameModel<S>, t: S, x: &[S], y: S, u: &[S], a: &[S], p: &[S], m: &[S]) -> Result<S> {
    let d = model.dim;
    let mut mu = [S::zero(); MAX_DIM];
    let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
    let mut sig2 = [S::zero(); MAX_DIM * MAX_DIM];
    model.mu_x_into(t, x, a, &mut mu[..d]);
    model.sigma_x_into(t, x, a, &mut sig[..d * d]);
    outer_self(&sig[..d * d], d, &mut sig2[..d * d]);
    let my = finite_or(model.mu_y(t, x, y, u, a), "mu_Y", t, x, a)?;
    let v = -my + dot(&mu[..d], p) + half_trace(&sig2[..d * d], m, d);
    finite_or(v, "H^{u,a}", t, x, a)
}

/// Evaluates the pieces of `H̃^a` at `(t, x, y, p)` under `rescale`.
#[allow(clippy::too_many_arguments)]
pub fn adverse_terms<S: Scalar>(
    model: &GameModel<S>,
    rescale: &Rescaling<S>,
    t: S,
    x: &[S],
    y: S,
    p: &[S],
    a: &[S],
    out: &mut AdverseTerms<S>,
) -> Result<()> {
    let d = model.dim;
    let mut sig = [S::zero(); MAX_DIM * MAX_DIM];
    model.mu_x_into(t, x, a, &mut out.drift[..d]);
    model.sigma_x_into(t, x, a, &mut sig[..d * d]);
    outer_self(&sig[..d * d], d, &mut out.diffusion[..d * d]);
    let mut z = [S::zero(); MAX_DIM];
    mat_vec(&sig[..d * d], p, &mut z[..d]);
    let c = rescale.c;
    let zero_order = if c == S::zero() {
        let inv = model.invert_sigma_y(t, x, y, &z[..d], a, &mut out.u)?;
        out.clamped = inv.clamped;
        -finite_or(model.mu_y(t, x, y, &out.u[..d], a), "mu_Y", t, x, a)?
    } else {
        let grow = (c * t).exp();
        let shrink = S::one() / grow;
        for zi in z[..d].iter_mut() {
            *zi = *zi * shrink;
        }
        let ys = y * shrink;
        let inv = model.invert_sigma_y(t, x, ys, &z[..d], a, &mut out.u)?;
        out.clamped = inv.clamped;
        -c * y - grow * finite_or(model.mu_y(t, x, ys, &out.u[..d], a), "mu_Y", t, x, a)?
    };
    out.zero_order = finite_or(zero_order, "mu_Y^u_hat", t, x, a)?;
    Ok(())
}

impl<S: Scalar> AdverseTerms<S> {
    pub fn zeroed() -> Self {
        Self {
            drift: [S::zero(); MAX_DIM],
            diffusion: [S::zero(); MAX_DIM * MAX_DIM],
            zero_order: S::zero(),
            clamped: false,
            u: [S::zero(); MAX_DIM],
        }
    }

    /// `zero_order + driftᵀp + ½Tr[diffusion · M]`.
    #[inline]
    pub fn value(&self, p: &[S], m: &[S], d: usize) -> S {
        self.zero_order + dot(&self.drift[..d], p) + half_trace(&self.diffusion[..d * d], m, d)
    }
}

#[allow(clippy::too_many_arguments)]
fn sup_over_grid<S: Scalar>(
    model: &GameModel<S>,
    rescale: &Rescaling<S>,
    t: S,
    x: &[S],
    y: S,
    p: &[S],
    m: &[S],
    grid: &AdverseGrid<S>,
) -> Result<HamiltonianEval<S>> {
    let d = model.dim;
    let mut terms = AdverseTerms::zeroed();
    let mut best: Option<(S, usize, [S; MAX_DIM], bool)> = None;
    for (i, a) in grid.iter().enumerate() {
        adverse_terms(model, rescale, t, x, y, p, a, &mut terms).map_err(|e| match e {
            Error::Inversion { residual, iterations, .. } => Error::Inversion {
                residual,
                iterations,
                a: a.iter().map(|v| v.as_f64()).collect(),
            },
            other => other,
        })?;
        let v = finite_or(terms.value(p, m, d), "Hamiltonian", t, x, a)?;
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, i, terms.u, terms.clamped));
        }
    }
    let (value, idx, u, clamped) = best.ok_or_else(|| Error::Precondition("empty a-grid".into()))?;
    Ok(HamiltonianEval {
        value,
        argmax_a: grid.point(idx).to_vec(),
        argmax_index: idx,
        u_at_argmax: u[..d].to_vec(),
        clamped,
    })
}

/// `H(t,x,y,p,M) = sup_a { −μ_Y^û(t,x,y,σ_X p,a) + μ_Xᵀp + ½Tr[σ_Xσ_Xᵀ M] }` on the a-grid.
#[allow(clippy::too_many_arguments)]
pub fn h<S: Scalar>(model: &GameModel<S>, t: S, x: &[S], y: S, p: &[S], m: &[S], grid: &AdverseGrid<S>) -> Result<HamiltonianEval<S>> {
    check_symmetric(m, model.dim)?;
    sup_over_grid(model, &Rescaling::identity(), t, x, y, p, m, grid)
}

/// `H̃` of the exponentially rescaled problem with rate `rescale.c`.
#[allow(clippy::too_many_arguments)]
pub fn h_tilde<S: Scalar>(
    model: &GameModel<S>,
    rescale: &Rescaling<S>,
    t: S,
    x: &[S],
    y: S,
    p: &[S],
    m: &[S],
    grid: &AdverseGrid<S>,
) -> Result<HamiltonianEval<S>> {
    if !rescale.monotone_verified {
        return Err(Error::Precondition("rescaling has not been verified monotone".into()));
    }
    check_symmetric(m, model.dim)?;
    sup_over_grid(model, rescale, t, x, y, p, m, grid)
}

fn check_symmetric<S: Scalar>(m: &[S], d: usize) -> Result<()> {
    if m.len() != d * d {
        return Err(Error::Precondition(format!("M must be {d}x{d}")));
    }
    for i in 0..d {
        for j in 0..i {
            let (a, b) = (m[i * d + j], m[j * d + i]);
            if (a - b).abs() > S::epsilon() * S::lit(64.0) * (S::one() + a.abs().max(b.abs())) {
                return Err(Error::Precondition("M must be symmetric".into()));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ScalingOptions<S> {
    /// First candidate is `c = L + margin`.
    pub margin: S,
    pub c_max: S,
}

impl<S: Scalar> ScalingOptions<S> {
    pub fn for_model(model: &GameModel<S>) -> Self {
        let margin = S::one();
        Self {
            margin,
            c_max: S::lit(64.0) * (model.growth_l + margin),
        }
    }
}

/// `μ̃_Y^û(t,x,y,z,a) = c y + e^{ct} μ_Y^û(t,x,e^{−ct}y,e^{−ct}z,a)`.
pub fn rescaled_drift<S: Scalar>(model: &GameModel<S>, c: S, t: S, x: &[S], y: S, z: &[S], a: &[S]) -> Result<S> {
    let grow = (c * t).exp();
    let mut zs = [S::zero(); MAX_DIM];
    for i in 0..model.dim {
        zs[i] = z[i] / grow;
    }
    let (m, _) = model.mu_y_hat(t, x, y / grow, &zs[..model.dim], a)?;
    Ok(c * y + grow * m)
}

/// Picks the scaling rate with the default escalation policy.
pub fn select_scaling<S: Scalar>(model: &GameModel<S>, samples: usize, seed: u64) -> Result<Rescaling<S>> {
    select_scaling_with(model, samples, seed, ScalingOptions::for_model(model))
}

/// Starts at `c = L + margin` and doubles `c` until the rescaled drift is
/// non-decreasing in `y` on every sampled pair, or `c` exceeds `c_max`.
pub fn select_scaling_with<S: Scalar>(model: &GameModel<S>, samples: usize, seed: u64, opts: ScalingOptions<S>) -> Result<Rescaling<S>> {
    if samples == 0 {
        return Err(Error::Precondition("scaling check needs at least one sample".into()));
    }
    let d = model.dim;
    let (ylo, yhi) = model.sample_ranges.y;
    let (zlo, zhi) = model.sample_ranges.z;
    let halton = Halton::new(2 + 3 * d + 1, seed);
    let mut unit = vec![0.0; halton.dims()];
    // (t, x, y, z, a, gap) with y and z in unscaled units
    let mut pts: Vec<(S, [S; MAX_DIM], S, [S; MAX_DIM], [S; MAX_DIM], S)> = Vec::with_capacity(samples);
    let mut rng = stream_rng(seed, 7);
    for i in 0..samples as u64 {
        halton.point(i, &mut unit);
        let c = |k: usize| S::lit(unit[k]);
        let t = model.horizon * c(0);
        let mut x = [S::zero(); MAX_DIM];
        let mut a = [S::zero(); MAX_DIM];
        let mut z = [S::zero(); MAX_DIM];
        let ux: Vec<S> = (0..d).map(|k| c(2 + k)).collect();
        let ua: Vec<S> = (0..d).map(|k| c(2 + d + k)).collect();
        model.state_box.from_unit(&ux, &mut x);
        model.adverse_set_a.from_unit(&ua, &mut a);
        for k in 0..d {
            z[k] = zlo + (zhi - zlo) * c(2 + 2 * d + k);
        }
        let y = ylo + (yhi - ylo) * c(1);
        // alternate local finite-difference gaps with wide random gaps
        let gap = if i % 2 == 0 {
            (yhi - ylo).max(S::one()) * S::lit(1e-4)
        } else {
            (yhi - ylo).max(S::one()) * S::lit(rand::Rng::random::<f64>(&mut rng))
        };
        pts.push((t, x, y, z, a, gap));
    }
    let tol = model.tolerances.mono_tol;
    let mut c = model.growth_l + opts.margin;
    loop {
        let mut worst: Option<(S, String)> = None;
        for (t, x, y, z, a, gap) in &pts {
            let grow = (c * *t).exp();
            let ys = *y * grow;
            let mut zs = [S::zero(); MAX_DIM];
            for k in 0..d {
                zs[k] = z[k] * grow;
            }
            let y2 = ys + *gap * grow;
            let lo = rescaled_drift(model, c, *t, &x[..d], ys, &zs[..d], &a[..d])?;
            let hi = rescaled_drift(model, c, *t, &x[..d], y2, &zs[..d], &a[..d])?;
            let slack = tol * S::one().max(lo.abs()).max(hi.abs());
            let deficit = lo - hi;
            if deficit > slack && worst.as_ref().is_none_or(|w| deficit > w.0) {
                worst = Some((deficit, format!("t={t}, x={:?}, y={ys}, y'={y2}, a={:?}", &x[..d], &a[..d])));
            }
        }
        match worst {
            None => {
                return Ok(Rescaling {
                    c,
                    monotone_verified: true,
                    check_grid: format!("{samples} Halton samples of (t,x,y,z,a), seed {seed}, alternating local/wide y-gaps"),
                })
            }
            Some((deficit, at)) => {
                let next = c + c;
                if next > opts.c_max || c == S::zero() {
                    return Err(Error::Scaling {
                        c_max: opts.c_max.as_f64(),
                        worst: deficit.as_f64(),
                        at,
                    });
                }
                c = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{capped_call, uncertain_volatility, BoxDomain, SampleRanges};
    use proptest::prelude::*;

    fn bsb() -> GameModel<f64> {
        uncertain_volatility(1, 0.1, 0.3, 400.0, 0.0, capped_call(100.0, 300.0), 300.0).unwrap()
    }

    fn drift_model(slope: impl Fn(f64) -> f64 + Send + Sync + 'static, l: f64) -> GameModel<f64> {
        GameModel::<f64>::builder("drift", 1)
            .mu_y(move |_, _, y, _, _| slope(y))
            .adverse_set(BoxDomain::cube(1, 0.0, 1.0))
            .growth_l(l)
            .sample_ranges(SampleRanges { y: (-2.0, 2.0), z: (-1.0, 1.0) })
            .build()
            .unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let m = GameModel::<f64>::builder("flat", 1).build().unwrap();
        assert_eq!(h_ua(&m, 0.0, &[0.3], 1.0, &[0.0], &[0.0], &[2.0], &[5.0]).unwrap(), 0.0);
    }

    #[test]
    fn diffusion_term_matches_generator_on_quadratic() {
        let m = bsb();
        let v = h_ua(&m, 0.0, &[1.0], 0.0, &[0.0], &[0.3], &[0.0], &[2.0]).unwrap();
        assert!((v - 0.09).abs() < 1e-15);
        // finite-difference generator ½a²x² φ'' applied to φ(x) = x²
        let (x, hh, a) = (1.0f64, 1e-3, 0.3f64);
        let phi = |s: f64| s * s;
        let gen = 0.5 * a * a * x * x * (phi(x + hh) - 2.0 * phi(x) + phi(x - hh)) / (hh * hh);
        assert!((v - gen).abs() < 1e-9);
    }

    #[test]
    fn constant_drift_of_y_enters_with_minus_sign() {
        let m = GameModel::<f64>::builder("c", 1).mu_y(|_, _, _, _, _| 5.0).build().unwrap();
        assert_eq!(h_ua(&m, 0.0, &[0.0], 0.0, &[0.0], &[0.0], &[1.0], &[1.0]).unwrap(), -5.0);
    }

    #[test]
    fn singleton_adverse_set_reduces_to_h_ua() {
        let mut m = bsb();
        m.adverse_set_a = BoxDomain::point(&[0.2]);
        let g = AdverseGrid::new(&m, 7).unwrap();
        assert_eq!(g.len(), 1);
        let e = h(&m, 0.1, &[90.0], 3.0, &[0.5], &[0.01], &g).unwrap();
        let mut u = [0.0];
        m.invert_sigma_y(0.1, &[90.0], 3.0, &[0.2 * 90.0 * 0.5], &[0.2], &mut u).unwrap();
        let direct = h_ua(&m, 0.1, &[90.0], 3.0, &u, &[0.2], &[0.5], &[0.01]).unwrap();
        assert_eq!(e.value, direct);
        assert_eq!(e.u_at_argmax, u.to_vec());
    }

    fn dense_oracle(mm: f64) -> (f64, f64) {
        (0..=100_000)
            .map(|k| 0.1 + 0.2 * k as f64 / 100_000.0)
            .map(|a| (0.5 * a * a * mm, a))
            .fold((f64::NEG_INFINITY, 0.0), |b, c| if c.0 > b.0 { c } else { b })
    }

    #[test]
    fn sup_picks_largest_volatility_for_convex_test_function() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 101).unwrap();
        let e = h(&m, 0.0, &[1.0], 0.0, &[0.0], &[2.0], &g).unwrap();
        let (ov, oa) = dense_oracle(2.0);
        assert!((e.value - 0.09).abs() < 1e-12 && (e.value - ov).abs() < 1e-12);
        assert_eq!(e.argmax_a, vec![0.3]);
        assert!((oa - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sup_picks_smallest_volatility_for_concave_test_function() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 101).unwrap();
        let e = h(&m, 0.0, &[1.0], 0.0, &[0.0], &[-2.0], &g).unwrap();
        let (ov, oa) = dense_oracle(-2.0);
        // ½ · 0.1² · 1 · (−2)
        assert!((e.value + 0.01).abs() < 1e-12 && (e.value - ov).abs() < 1e-12);
        assert_eq!(e.argmax_a, vec![0.1]);
        assert!((oa - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ties_resolve_to_smallest_a() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 5).unwrap();
        let e = h(&m, 0.0, &[1.0], 0.0, &[0.0], &[0.0], &g).unwrap();
        assert_eq!(e.argmax_index, 0);
        assert_eq!(e.argmax_a, vec![0.1]);
    }

    #[test]
    fn asymmetric_hessian_is_rejected() {
        let m = GameModel::<f64>::builder("flat", 2).build().unwrap();
        let g = AdverseGrid::new(&m, 2).unwrap();
        assert!(h(&m, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &[1.0, 2.0, 0.0, 1.0], &g).is_err());
    }

    #[test]
    fn identity_rescaling_reproduces_h() {
        let m = drift_model(|y| -0.7 * y + 0.2, 0.7);
        let g = AdverseGrid::new(&m, 9).unwrap();
        for &(t, x, y) in &[(0.0, 0.2, 1.0), (0.4, -0.5, -3.0), (1.0, 0.9, 0.0)] {
            let a = h(&m, t, &[x], y, &[0.3], &[1.5], &g).unwrap();
            let b = h_tilde(&m, &Rescaling::identity(), t, &[x], y, &[0.3], &[1.5], &g).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rescaled_hamiltonian_keeps_only_discount_when_drift_vanishes() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 9).unwrap();
        let r = Rescaling { c: 1.0, monotone_verified: true, check_grid: String::new() };
        let e = h_tilde(&m, &r, 0.0, &[100.0], 2.0, &[0.0], &[0.0], &g).unwrap();
        assert_eq!(e.value, -2.0);
    }

    #[test]
    fn rescaled_hamiltonian_matches_substitution_identity() {
        // H̃(t, x, e^{ct}y, e^{ct}p, e^{ct}M) + c e^{ct} y = e^{ct} H(t, x, y, p, M)
        let m = uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.04, capped_call(100.0, 300.0), 300.0).unwrap();
        let g = AdverseGrid::new(&m, 17).unwrap();
        let c = 0.8;
        let r = Rescaling { c, monotone_verified: true, check_grid: String::new() };
        let mut rng = crate::sampling::stream_rng(42, 0);
        for _ in 0..100 {
            use rand::Rng;
            let t: f64 = rng.random::<f64>();
            let x: f64 = 1.0 + 399.0 * rng.random::<f64>();
            let y: f64 = -50.0 + 100.0 * rng.random::<f64>();
            let p: f64 = -1.0 + 2.0 * rng.random::<f64>();
            let mm: f64 = -0.05 + 0.1 * rng.random::<f64>();
            let e = (c * t).exp();
            let lhs = h_tilde(&m, &r, t, &[x], e * y, &[e * p], &[e * mm], &g).unwrap().value + c * e * y;
            let rhs = e * h(&m, t, &[x], y, &[p], &[mm], &g).unwrap().value;
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn unverified_rescaling_is_refused() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 3).unwrap();
        let r = Rescaling { c: 1.0, monotone_verified: false, check_grid: String::new() };
        assert!(h_tilde(&m, &r, 0.0, &[1.0], 0.0, &[0.0], &[0.0], &g).is_err());
    }

    #[test]
    fn y_independent_drift_verifies_at_l_plus_one() {
        let m = drift_model(|_| 3.0, 2.0);
        assert_eq!(select_scaling(&m, 200, 1).unwrap().c, 3.0);
    }

    #[test]
    fn linear_decreasing_drift_verifies_at_l_plus_one() {
        let l = 1.5;
        let m = drift_model(move |y| -l * y, l);
        let r = select_scaling(&m, 200, 1).unwrap();
        assert_eq!(r.c, l + 1.0);
        // finite-difference slope of the rescaled drift is c − L ≥ 0
        let fd = (rescaled_drift(&m, r.c, 0.5, &[0.0], 1.0 + 1e-6, &[0.0], &[0.0]).unwrap()
            - rescaled_drift(&m, r.c, 0.5, &[0.0], 1.0, &[0.0], &[0.0]).unwrap())
            / 1e-6;
        assert!((fd - (r.c - l)).abs() < 1e-6);
    }

    #[test]
    fn stiff_drift_escalates_c() {
        // slope −5L on |y| < 0.5, −L elsewhere; declared growth L
        let l = 1.0;
        let m = drift_model(
            move |y| {
                if y.abs() < 0.5 {
                    -5.0 * l * y
                } else {
                    -l * y - 4.0 * l * 0.5 * y.signum()
                }
            },
            l,
        );
        let r = select_scaling(&m, 400, 3).unwrap();
        assert!(r.c >= 5.0 * l, "c = {}", r.c);
        assert!(r.monotone_verified);
    }

    #[test]
    fn hopeless_drift_reports_scaling_error() {
        let m = drift_model(|y| -1e6 * y, 1.0);
        assert!(matches!(select_scaling(&m, 50, 1), Err(Error::Scaling { .. })));
    }

    #[test]
    fn homogeneous_in_hessian_for_uncertain_volatility() {
        let m = bsb();
        let g = AdverseGrid::new(&m, 33).unwrap();
        for &(x, mm, lam) in &[(50.0, 0.01, 2.0), (120.0, 0.3, 0.5), (300.0, 0.0, 3.0)] {
            let a = h(&m, 0.0, &[x], 0.0, &[0.0], &[lam * mm], &g).unwrap().value;
            let b = h(&m, 0.0, &[x], 0.0, &[0.0], &[mm], &g).unwrap().value;
            assert!((a - lam * b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    proptest! {
        #[test]
        fn nested_grid_refinement_never_lowers_sup(x in 1.0f64..400.0, p in -1.0f64..1.0, mm in -0.5f64..0.5, k in 1usize..5) {
            let m = uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.03, capped_call(100.0, 300.0), 300.0).unwrap();
            let coarse = AdverseGrid::new(&m, (1 << k) + 1).unwrap();
            let fine = AdverseGrid::new(&m, (1 << (k + 1)) + 1).unwrap();
            let hc = h(&m, 0.3, &[x], 1.0, &[p], &[mm], &coarse).unwrap().value;
            let hf = h(&m, 0.3, &[x], 1.0, &[p], &[mm], &fine).unwrap().value;
            prop_assert!(hf >= hc);
        }

        #[test]
        fn rescaled_hamiltonian_decreases_in_y(y in -2.0f64..2.0, gap in 1e-3f64..2.0, t in 0.0f64..1.0, p in -1.0f64..1.0) {
            let l = 1.5;
            let m = drift_model(move |y| -l * y.sin(), l);
            let r = select_scaling(&m, 200, 5).unwrap();
            let g = AdverseGrid::new(&m, 3).unwrap();
            let hi = h_tilde(&m, &r, t, &[0.1], y + gap, &[p], &[0.2], &g).unwrap().value;
            let lo = h_tilde(&m, &r, t, &[0.1], y, &[p], &[0.2], &g).unwrap().value;
            prop_assert!(hi - lo <= -(r.c - l) * gap + 1e-9);
        }
    }
}
