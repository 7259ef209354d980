//! Registry-backed model specifications: every coefficient is chosen by a
//! registered name plus a parameter map, so a model can live in a TOML file.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{diagonal_scaled_inverse, diagonal_scaled_vol, BoxDomain, Declarations, GameModel, SampleRanges, Tolerances};
use crate::error::{Error, Result};
use crate::scalar::{mat_t_vec, solve_in_place, Scalar, MAX_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Num(f64),
    List(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, Param>,
}

impl CoefficientSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Param) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn num(&self, field: &str, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(Param::Num(v)) => Ok(*v),
            Some(_) => Err(cfg(&format!("{field}.{key}"), "expected a number")),
            None => Err(cfg(&format!("{field}.{key}"), "missing parameter")),
        }
    }

    fn list(&self, field: &str, key: &str, len: usize) -> Result<Vec<f64>> {
        match self.params.get(key) {
            Some(Param::List(v)) if v.len() == len => Ok(v.clone()),
            Some(Param::Num(v)) => Ok(vec![*v; len]),
            Some(_) => Err(cfg(&format!("{field}.{key}"), &format!("expected a list of {len} numbers"))),
            None => Err(cfg(&format!("{field}.{key}"), "missing parameter")),
        }
    }

    fn matrix(&self, field: &str, key: &str, d: usize) -> Result<Vec<f64>> {
        match self.params.get(key) {
            Some(Param::Matrix(rows)) if rows.len() == d && rows.iter().all(|r| r.len() == d) => {
                Ok(rows.iter().flatten().copied().collect())
            }
            Some(Param::List(v)) if d == 1 && v.len() == 1 => Ok(v.clone()),
            Some(Param::Num(v)) if d == 1 => Ok(vec![*v]),
            _ => Err(cfg(&format!("{field}.{key}"), &format!("expected a {d}x{d} matrix"))),
        }
    }
}

/// Payoff registry entry; same shape as a coefficient.
pub type PayoffSpec = CoefficientSpec;

fn cfg(field: &str, message: &str) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn default_max_iter() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub inversion_tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub mono_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub lipschitz_k: f64,
    pub growth_l: f64,
    pub g_bound: f64,
    pub ratio_bound: Option<f64>,
    pub control_box: Vec<[f64; 2]>,
    pub adverse_box: Vec<[f64; 2]>,
    pub state_box: Vec<[f64; 2]>,
    pub mu_x: CoefficientSpec,
    pub sigma_x: CoefficientSpec,
    pub mu_y: CoefficientSpec,
    pub sigma_y: CoefficientSpec,
    pub payoff: PayoffSpec,
    /// `"closed_form"` (default when the registry has one) or `"numeric"`.
    pub u_hat: Option<String>,
    pub tolerances: Option<ToleranceSpec>,
    pub sample_y: Option<[f64; 2]>,
    pub sample_z: Option<[f64; 2]>,
    #[serde(default)]
    pub declare_constant_subsolution: bool,
}

fn boxed<S: Scalar>(field: &str, v: &[[f64; 2]], d: usize) -> Result<BoxDomain<S>> {
    if v.len() != d {
        return Err(cfg(field, &format!("expected {d} [lo, hi] pairs, got {}", v.len())));
    }
    if v.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(cfg(field, "every axis needs finite lo <= hi"));
    }
    Ok(BoxDomain::new(
        v.iter().map(|p| S::lit(p[0])).collect(),
        v.iter().map(|p| S::lit(p[1])).collect(),
    ))
}

fn lits<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

impl ModelSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| toml_error(s, &e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    /// Instantiates the registered coefficients for scalar type `S`.
    pub fn build<S: Scalar>(&self) -> Result<GameModel<S>> {
        let d = self.dim;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(cfg("dim", &format!("must be in 1..={MAX_DIM}")));
        }
        let mut b = GameModel::<S>::builder(self.name.clone(), d)
            .horizon(S::lit(self.horizon))
            .lipschitz_k(S::lit(self.lipschitz_k))
            .growth_l(S::lit(self.growth_l))
            .g_bound(S::lit(self.g_bound))
            .ratio_bound(self.ratio_bound.map(S::lit).unwrap_or_else(S::infinity))
            .control_set(boxed("control_box", &self.control_box, d)?)
            .adverse_set(boxed("adverse_box", &self.adverse_box, d)?)
            .state_box(boxed("state_box", &self.state_box, d)?)
            .declarations(Declarations {
                constant_subsolution: self.declare_constant_subsolution,
            });

        let mu_x = &self.mu_x;
        b = match mu_x.name.as_str() {
            "zero" => b,
            "constant" => {
                let v = lits::<S>(&mu_x.list("mu_x", "value", d)?);
                b.mu_x(move |_, _, _, out| out.copy_from_slice(&v))
            }
            "linear" => {
                let r = S::lit(mu_x.num("mu_x", "rate")?);
                b.mu_x(move |_, x, _, out| {
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o = r * *xi;
                    }
                })
            }
            "adverse_constant" => b.mu_x(|_, _, a, out| out.copy_from_slice(a)),
            other => return Err(cfg("mu_x.name", &format!("unknown coefficient `{other}`"))),
        };

        let sx = &self.sigma_x;
        b = match sx.name.as_str() {
            "zero" => b,
            "constant" => {
                let m = lits::<S>(&sx.matrix("sigma_x", "matrix", d)?);
                b.sigma_x(move |_, _, _, out| out.copy_from_slice(&m))
            }
            "diagonal_scaled" => b.sigma_x(diagonal_scaled_vol),
            "adverse_constant" => b.sigma_x(|_, x, a, out| {
                let d = x.len();
                out.iter_mut().for_each(|v| *v = S::zero());
                for i in 0..d {
                    out[i * d + i] = a[i];
                }
            }),
            "square" => b.sigma_x(|_, x, _, out| {
                let d = x.len();
                out.iter_mut().for_each(|v| *v = S::zero());
                for i in 0..d {
                    out[i * d + i] = x[i] * x[i];
                }
            }),
            other => return Err(cfg("sigma_x.name", &format!("unknown coefficient `{other}`"))),
        };

        let my = &self.mu_y;
        b = match my.name.as_str() {
            "zero" => b,
            "constant" => {
                let v = S::lit(my.num("mu_y", "value")?);
                b.mu_y(move |_, _, _, _, _| v)
            }
            "linear" => {
                let r = S::lit(my.num("mu_y", "rate")?);
                b.mu_y(move |_, _, y, _, _| r * y)
            }
            other => return Err(cfg("mu_y.name", &format!("unknown coefficient `{other}`"))),
        };

        let sy = &self.sigma_y;
        let diagonal_vol = sx.name == "diagonal_scaled";
        b = match sy.name.as_str() {
            "identity" => b.sigma_y(|_, _, _, u, _, out| out.copy_from_slice(u)).u_hat(|_, _, _, z, _, out| out.copy_from_slice(z)),
            "linear" => {
                let s = S::lit(sy.num("sigma_y", "scale")?);
                if s == S::zero() {
                    return Err(cfg("sigma_y.scale", "must be nonzero for sigma_Y to be invertible"));
                }
                b.sigma_y(move |_, _, _, u, _, out| {
                    for (o, ui) in out.iter_mut().zip(u) {
                        *o = s * *ui;
                    }
                })
                .u_hat(move |_, _, _, z, _, out| {
                    for (o, zi) in out.iter_mut().zip(z) {
                        *o = *zi / s;
                    }
                })
            }
            "cubic" => b.sigma_y(|_, _, _, u, _, out| {
                for (o, ui) in out.iter_mut().zip(u) {
                    *o = *ui * *ui * *ui + *ui;
                }
            }),
            "portfolio" => {
                let sigma = b.sigma_x_fn();
                let s2 = sigma.clone();
                let b = b.sigma_y(move |t, x, _, u, a, out| {
                    let d = x.len();
                    let mut m = [S::zero(); MAX_DIM * MAX_DIM];
                    sigma(t, x, a, &mut m[..d * d]);
                    mat_t_vec(&m[..d * d], u, out);
                });
                if diagonal_vol {
                    b.u_hat(diagonal_scaled_inverse)
                } else {
                    b.u_hat(move |t, x, _, z, a, out| {
                        let d = x.len();
                        let mut m = [S::zero(); MAX_DIM * MAX_DIM];
                        s2(t, x, a, &mut m[..d * d]);
                        // transpose in place: solve σ_Xᵀ u = z
                        let mut mt = [S::zero(); MAX_DIM * MAX_DIM];
                        for i in 0..d {
                            for j in 0..d {
                                mt[i * d + j] = m[j * d + i];
                            }
                        }
                        out.copy_from_slice(z);
                        if !solve_in_place(&mut mt[..d * d], out, d) {
                            out.iter_mut().for_each(|v| *v = S::zero());
                        }
                    })
                }
            }
            other => return Err(cfg("sigma_y.name", &format!("unknown coefficient `{other}`"))),
        };
        match self.u_hat.as_deref() {
            None | Some("closed_form") => {}
            Some("numeric") => b = b.numeric_u_hat(),
            Some(other) => return Err(cfg("u_hat", &format!("expected `closed_form` or `numeric`, got `{other}`"))),
        }

        let p = &self.payoff;
        b = match p.name.as_str() {
            "constant" => {
                let v = S::lit(p.num("payoff", "value")?);
                b.payoff(move |_| v)
            }
            "capped_call" => {
                let k = S::lit(p.num("payoff", "strike")?);
                let cap = match p.params.get("cap") {
                    Some(_) => S::lit(p.num("payoff", "cap")?),
                    None => {
                        // cap at the right edge of the state box
                        let hi = self.state_box.iter().map(|a| a[1]).sum::<f64>() / d as f64;
                        S::lit(hi) - k
                    }
                };
                b.payoff(super::capped_call(k, cap))
            }
            "digital" => {
                let k = S::lit(p.num("payoff", "strike")?);
                b.payoff(move |x| {
                    let mean = x.iter().copied().sum::<S>() / S::lit(x.len() as f64);
                    if mean >= k {
                        S::one()
                    } else {
                        S::zero()
                    }
                })
            }
            other => return Err(cfg("payoff.name", &format!("unknown payoff `{other}`"))),
        };

        let mut tol = Tolerances::<S>::default();
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.inversion_tol {
                tol.inversion_tol = S::lit(v);
            }
            if let Some(v) = t.mono_tol {
                tol.mono_tol = S::lit(v);
            }
            tol.max_iter = t.max_iter;
        }
        let gy = self.g_bound + 1.0;
        let zmax = self.lipschitz_k.max(1.0);
        let ranges = SampleRanges {
            y: self.sample_y.map(|[a, b]| (S::lit(a), S::lit(b))).unwrap_or((S::lit(-gy), S::lit(gy))),
            z: self.sample_z.map(|[a, b]| (S::lit(a), S::lit(b))).unwrap_or((S::lit(-zmax), S::lit(zmax))),
        };
        b.tolerances(tol).sample_ranges(ranges).build()
    }
}

impl<S: Scalar> super::GameModelBuilder<S> {
    fn sigma_x_fn(&self) -> super::VolX<S> {
        Arc::clone(&self.model.sigma_x)
    }
}

/// Maps a TOML error onto a line-numbered parse error.
pub fn toml_error(src: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|sp| src[..sp.start.min(src.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        line,
        message: e.message().to_string(),
    }
}
