//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Largest state/control dimension supported by the stack-allocated scratch buffers.
pub const MAX_DIM: usize = 8;

/// Floating-point scalar the solver, strategies and simulator are generic over.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every literal used in the crate is representable.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Absolute tolerance for `σ_Y(û) = z`, tightened to what the type can resolve.
    fn default_inversion_tol() -> Self;
}

impl Scalar for f64 {
    fn default_inversion_tol() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn default_inversion_tol() -> Self {
        1e-4
    }
}

/// Euclidean norm of a vector slice.
#[inline]
pub fn norm<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Euclidean distance between two equally sized slices.
#[inline]
pub fn dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out = m · v` for a row-major `d×d` matrix.
#[inline]
pub fn mat_vec<S: Scalar>(m: &[S], v: &[S], out: &mut [S]) {
    let d = v.len();
    for i in 0..d {
        out[i] = dot(&m[i * d..(i + 1) * d], v);
    }
}

/// `out = mᵀ · v` for a row-major `d×d` matrix.
#[inline]
pub fn mat_t_vec<S: Scalar>(m: &[S], v: &[S], out: &mut [S]) {
    let d = v.len();
    for j in 0..d {
        let mut acc = S::zero();
        for i in 0..d {
            acc = acc + m[i * d + j] * v[i];
        }
        out[j] = acc;
    }
}

/// `out = m mᵀ` for a row-major `d×d` matrix.
#[inline]
pub fn outer_self<S: Scalar>(m: &[S], d: usize, out: &mut [S]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = dot(&m[i * d..(i + 1) * d], &m[j * d..(j + 1) * d]);
        }
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
///
/// Returns `false` when a pivot falls below `eps · max|a|`.
pub fn solve_in_place<S: Scalar>(a: &mut [S], b: &mut [S], d: usize) -> bool {
    let scale = a.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    if scale == S::zero() {
        return false;
    }
    let tiny = scale * S::epsilon() * S::lit(16.0);
    for col in 0..d {
        let (piv, pmax) = (col..d)
            .map(|r| (r, a[r * d + col].abs()))
            .fold((col, S::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tiny {
            return false;
        }
        if piv != col {
            for k in 0..d {
                a.swap(piv * d + k, col * d + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..d {
            let f = a[r * d + col] / a[col * d + col];
            for k in col..d {
                a[r * d + k] = a[r * d + k] - f * a[col * d + k];
            }
            b[r] = b[r] - f * b[col];
        }
    }
    for col in (0..d).rev() {
        let mut acc = b[col];
        for k in col + 1..d {
            acc = acc - a[col * d + k] * b[k];
        }
        b[col] = acc / a[col * d + col];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_elimination_solves_pivoted_system() {
        let mut a = [0.0, 2.0, 1.0, 1.0];
        let mut b = [4.0, 3.0];
        assert!(solve_in_place(&mut a, &mut b, 2));
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = [1.0, 2.0, 2.0, 4.0];
        let mut b = [1.0, 2.0];
        assert!(!solve_in_place(&mut a, &mut b, 2));
    }

    #[test]
    fn f32_literals_convert() {
        assert_eq!(<f32 as Scalar>::lit(0.5), 0.5f32);
    }
}
