//! Sampling-based falsification of the standing assumptions on a model.
//!
//! A passing check means "not falsified on N samples"; nothing here proves
//! an inequality globally.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GameModel;
use crate::error::{Error, Result};
use crate::sampling::{stream_rng, Halton};
use crate::scalar::{dist, norm, Scalar, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssumptionId {
    /// Regularity, boundedness and growth of `μ_X, σ_X, μ_Y, σ_Y` with constant `K`.
    CoefficientRegularity,
    /// `û` inverts `u ↦ σ_Y`.
    Invertibility,
    /// `μ_Y^û` Lipschitz with linear growth, constant `L`.
    DriftHatRegularity,
    /// `sup_u |μ_Y| / (1 + ‖σ_Y‖)` locally bounded.
    RelativeGrowth,
    /// A constant control with `μ_Y = σ_Y = 0` exists.
    NoTradeControl,
    /// `|μ_Y| / ‖σ_Y‖` bounded where `σ_Y ≠ 0`.
    DriftToVolRatio,
}

impl AssumptionId {
    pub const ALL: [AssumptionId; 6] = [
        AssumptionId::CoefficientRegularity,
        AssumptionId::Invertibility,
        AssumptionId::DriftHatRegularity,
        AssumptionId::RelativeGrowth,
        AssumptionId::NoTradeControl,
        AssumptionId::DriftToVolRatio,
    ];

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            AssumptionId::CoefficientRegularity => "regularity",
            AssumptionId::Invertibility => "inversion",
            AssumptionId::DriftHatRegularity => "drift-hat",
            AssumptionId::RelativeGrowth => "growth",
            AssumptionId::NoTradeControl => "no-trade",
            AssumptionId::DriftToVolRatio => "drift-vol-ratio",
        }
    }
}

/// Sample point at which an inequality was evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AssumptionStatus {
    /// Not falsified on `samples` points.
    Pass { samples: usize },
    Fail { witness: Witness },
    NotChecked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: AssumptionId,
    pub status: AssumptionStatus,
    /// Largest observed ratio/constant for this assumption.
    pub measured: f64,
    /// Declared constant the measurement is compared against.
    pub declared: f64,
    /// Sample point realizing `measured`.
    pub worst: Option<Witness>,
    /// Individual measured constants, e.g. `("lipschitz_tx", 0.3)`.
    pub constants: Vec<(String, f64)>,
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self.status, AssumptionStatus::Pass { .. })
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl AssumptionReport {
    pub fn get(&self, id: AssumptionId) -> &Check {
        self.checks.iter().find(|c| c.id == id).expect("every assumption is reported")
    }

    pub fn all_checked_pass(&self) -> bool {
        self.checks.iter().all(|c| !matches!(c.status, AssumptionStatus::Fail { .. }))
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "assumption report for `{}` ({} samples, seed {})", self.model, self.samples, self.seed)?;
        for c in &self.checks {
            let status = match &c.status {
                AssumptionStatus::Pass { samples } => format!("pass (not falsified on {samples} samples)"),
                AssumptionStatus::Fail { witness } => format!("FAIL: {} at t={}, x={:?}", witness.note, witness.t, witness.x),
                AssumptionStatus::NotChecked => "not checked".to_string(),
            };
            writeln!(
                f,
                "  assumption {:<16} measured {:>12.6e}  declared {:>12.6e}  {}",
                c.id.label(),
                c.measured,
                c.declared,
                status
            )?;
        }
        Ok(())
    }
}

struct Tracker {
    id: AssumptionId,
    declared: f64,
    measured: f64,
    worst: Option<Witness>,
    failure: Option<Witness>,
    evaluated: bool,
    constants: Vec<(String, f64)>,
}

impl Tracker {
    fn new(id: AssumptionId, declared: f64) -> Self {
        Self {
            id,
            declared,
            measured: 0.0,
            worst: None,
            failure: None,
            evaluated: false,
            constants: Vec::new(),
        }
    }

    /// Records an observed ratio; fails when it exceeds the declared constant.
    fn observe(&mut self, name: &str, value: f64, at: impl FnOnce() -> Witness) {
        self.evaluated = true;
        match self.constants.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = if value.is_finite() { v.max(value) } else { f64::INFINITY },
            None => self.constants.push((name.to_string(), if value.is_finite() { value } else { f64::INFINITY })),
        }
        if !value.is_finite() {
            if self.failure.is_none() {
                let mut w = at();
                w.note = format!("{} (non-finite)", w.note);
                self.failure = Some(w);
            }
            self.measured = f64::INFINITY;
            return;
        }
        let limit = self.declared * (1.0 + 1e-9) + 1e-12;
        if value > self.measured || self.worst.is_none() {
            let w = at();
            if value > limit && self.failure.is_none() {
                self.failure = Some(w.clone());
            }
            if value >= self.measured {
                self.measured = value;
                self.worst = Some(w);
            }
        }
    }

    fn fail_with(&mut self, w: Witness) {
        self.evaluated = true;
        if self.failure.is_none() {
            self.failure = Some(w);
        }
    }

    fn finish(self, samples: usize) -> Check {
        let status = match (self.failure, self.evaluated) {
            (Some(witness), _) => AssumptionStatus::Fail { witness },
            (None, true) => AssumptionStatus::Pass { samples },
            (None, false) => AssumptionStatus::NotChecked,
        };
        Check {
            id: self.id,
            status,
            measured: self.measured,
            declared: self.declared,
            worst: self.worst,
            constants: self.constants,
        }
    }
}

struct Sample<S> {
    t: S,
    x: [S; MAX_DIM],
    y: S,
    u: [S; MAX_DIM],
    z: [S; MAX_DIM],
    a: [S; MAX_DIM],
}

fn witness<S: Scalar>(s: &Sample<S>, d: usize, note: &str) -> Witness {
    let v = |a: &[S]| a[..d].iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    Witness {
        t: s.t.as_f64(),
        x: v(&s.x),
        y: s.y.as_f64(),
        u: v(&s.u),
        z: v(&s.z),
        a: v(&s.a),
        note: note.to_string(),
    }
}

fn frob_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    dist(a, b)
}

/// Evaluates each checkable assumption on `n_samples` quasi-random points
/// (plus a nearby partner point per sample for the Lipschitz ratios).
pub fn validate_assumptions<S: Scalar>(model: &GameModel<S>, n_samples: usize, seed: u64) -> Result<AssumptionReport> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be at least 1".into()));
    }
    let d = model.dim;
    let (ylo, yhi) = model.sample_ranges.y;
    let (zlo, zhi) = model.sample_ranges.z;
    if !(model.state_box.is_nonempty() && model.adverse_set_a.is_nonempty() && model.control_set_u.is_nonempty() && ylo <= yhi && zlo <= zhi)
    {
        return Err(Error::Precondition("sampling domain is empty".into()));
    }
    let k = model.lipschitz_k.as_f64();
    let l = model.growth_l.as_f64();
    let ratio = model.ratio_bound.as_f64();
    let mut regularity = Tracker::new(AssumptionId::CoefficientRegularity, k);
    let mut invert = Tracker::new(AssumptionId::Invertibility, model.tolerances.inversion_tol.as_f64());
    let mut hat = Tracker::new(AssumptionId::DriftHatRegularity, l);
    let mut rel = Tracker::new(AssumptionId::RelativeGrowth, ratio);
    let mut notrade = Tracker::new(AssumptionId::NoTradeControl, model.tolerances.inversion_tol.as_f64());
    let mut novikov = Tracker::new(AssumptionId::DriftToVolRatio, ratio);

    let dims = 2 + 4 * d;
    let halton = Halton::new(dims, seed);
    let mut rng = stream_rng(seed, 1);
    let mut unit = vec![0.0; dims];
    let draw = |unit: &[f64]| -> Sample<S> {
        let mut s = Sample {
            t: model.horizon * S::lit(unit[0]),
            x: [S::zero(); MAX_DIM],
            y: ylo + (yhi - ylo) * S::lit(unit[1]),
            u: [S::zero(); MAX_DIM],
            z: [S::zero(); MAX_DIM],
            a: [S::zero(); MAX_DIM],
        };
        let c = |k: usize| S::lit(unit[k]);
        let ux: Vec<S> = (0..d).map(|i| c(2 + i)).collect();
        let uu: Vec<S> = (0..d).map(|i| c(2 + d + i)).collect();
        let ua: Vec<S> = (0..d).map(|i| c(2 + 2 * d + i)).collect();
        model.state_box.from_unit(&ux, &mut s.x);
        model.control_set_u.from_unit(&uu, &mut s.u);
        model.adverse_set_a.from_unit(&ua, &mut s.a);
        for i in 0..d {
            s.z[i] = zlo + (zhi - zlo) * c(2 + 3 * d + i);
        }
        s
    };

    let mut no_trade_u: Option<[S; MAX_DIM]> = None;
    for idx in 0..n_samples as u64 {
        halton.point(idx, &mut unit);
        let s = draw(&unit);
        // local partner: small perturbation of (t, x, y, z), same a and u
        let mut p = Sample { ..draw(&unit) };
        let h = 1e-3;
        p.t = (s.t + model.horizon * S::lit(h * (rng.random::<f64>() - 0.5))).max(S::zero()).min(model.horizon);
        for i in 0..d {
            let w = model.state_box.width(i);
            p.x[i] = (s.x[i] + w * S::lit(h * (rng.random::<f64>() - 0.5))).max(model.state_box.lo[i]).min(model.state_box.hi[i]);
            p.z[i] = s.z[i] + (zhi - zlo) * S::lit(h * (rng.random::<f64>() - 0.5));
        }
        p.y = s.y + (yhi - ylo) * S::lit(h * (rng.random::<f64>() - 0.5)) + S::lit(1e-9);
        // global partner: the next point of the sequence, same a and u
        halton.point(idx + n_samples as u64, &mut unit);
        let mut q = draw(&unit);
        q.a = s.a;
        q.u = s.u;

        let (x, a, u) = (&s.x[..d], &s.a[..d], &s.u[..d]);
        let mut mx = [S::zero(); MAX_DIM];
        let mut sx = [S::zero(); MAX_DIM * MAX_DIM];
        model.mu_x_into(s.t, x, a, &mut mx[..d]);
        model.sigma_x_into(s.t, x, a, &mut sx[..d * d]);
        let bound = norm(&mx[..d]) + norm(&sx[..d * d]);
        regularity.observe("bound", bound.as_f64(), || witness(&s, d, "|mu_X| + |sigma_X| exceeds K"));

        for partner in [&p, &q] {
            let mut mx2 = [S::zero(); MAX_DIM];
            let mut sx2 = [S::zero(); MAX_DIM * MAX_DIM];
            model.mu_x_into(partner.t, &partner.x[..d], a, &mut mx2[..d]);
            model.sigma_x_into(partner.t, &partner.x[..d], a, &mut sx2[..d * d]);
            let num = frob_diff(&mx[..d], &mx2[..d]) + frob_diff(&sx[..d * d], &sx2[..d * d]);
            let den = (s.t - partner.t).abs() + dist(x, &partner.x[..d]);
            if den > S::zero() {
                regularity.observe("lipschitz_tx", (num / den).as_f64(), || witness(&s, d, "(t,x)-Lipschitz ratio of mu_X, sigma_X exceeds K"));
            }
        }

        let my = model.mu_y(s.t, x, s.y, u, a);
        let mut sy = [S::zero(); MAX_DIM];
        model.sigma_y_into(s.t, x, s.y, u, a, &mut sy[..d]);
        let my_p = model.mu_y(s.t, x, p.y, u, a);
        let mut sy_p = [S::zero(); MAX_DIM];
        model.sigma_y_into(s.t, x, p.y, u, a, &mut sy_p[..d]);
        let dy = (s.y - p.y).abs();
        if dy > S::zero() {
            let r = ((my - my_p).abs() + dist(&sy[..d], &sy_p[..d])) / dy;
            regularity.observe("lipschitz_y", r.as_f64(), || witness(&s, d, "y-Lipschitz ratio of mu_Y, sigma_Y exceeds K"));
        }
        let growth = (my.abs() + norm(&sy[..d])) / (S::one() + norm(u) + s.y.abs());
        regularity.observe("growth", growth.as_f64(), || witness(&s, d, "|mu_Y| + |sigma_Y| exceeds K(1 + |u| + |y|)"));

        let rel_v = my.abs() / (S::one() + norm(&sy[..d]));
        rel.observe("ratio", rel_v.as_f64(), || witness(&s, d, "|mu_Y| / (1 + |sigma_Y|) exceeds declared ratio bound"));
        let nsy = norm(&sy[..d]);
        if nsy > S::zero() {
            novikov.observe("ratio", (my.abs() / nsy).as_f64(), || witness(&s, d, "|mu_Y| / |sigma_Y| exceeds declared ratio bound"));
        }

        // invertibility and mu_Y^û
        let mut uh = [S::zero(); MAX_DIM];
        match model.invert_sigma_y(s.t, x, s.y, &s.z[..d], a, &mut uh) {
            Ok(inv) => {
                invert.observe("residual", inv.residual.as_f64(), || witness(&s, d, "|sigma_Y(u_hat) - z| exceeds inversion_tol"));
            }
            Err(e) => invert.fail_with(witness(&s, d, &format!("inversion failed: {e}"))),
        }
        let hat_at = |smp: &Sample<S>| model.mu_y_hat(smp.t, &smp.x[..d], smp.y, &smp.z[..d], a).map(|v| v.0);
        if let Ok(h0) = hat_at(&s) {
            let g = h0.abs() / (S::one() + s.y.abs() + norm(&s.z[..d]));
            hat.observe("growth", g.as_f64(), || witness(&s, d, "|mu_Y^u_hat| exceeds L(1 + |y| + |z|)"));
            for partner in [&p, &q] {
                if let Ok(h1) = hat_at(partner) {
                    let den = (s.t - partner.t).abs() + dist(x, &partner.x[..d]) + (s.y - partner.y).abs() + dist(&s.z[..d], &partner.z[..d]);
                    if den > S::zero() {
                        hat.observe("lipschitz", ((h0 - h1).abs() / den).as_f64(), || witness(&s, d, "Lipschitz ratio of mu_Y^u_hat exceeds L"));
                    }
                }
            }
        }

        // a no-trade control is the candidate û(·, z = 0) at the first sample
        if no_trade_u.is_none() {
            let mut u0 = [S::zero(); MAX_DIM];
            let zero = [S::zero(); MAX_DIM];
            if model.invert_sigma_y(s.t, x, s.y, &zero[..d], a, &mut u0).is_ok() {
                no_trade_u = Some(u0);
            }
        }
        if let Some(u0) = no_trade_u {
            let m0 = model.mu_y(s.t, x, s.y, &u0[..d], a);
            let mut s0 = [S::zero(); MAX_DIM];
            model.sigma_y_into(s.t, x, s.y, &u0[..d], a, &mut s0[..d]);
            let v = m0.abs() + norm(&s0[..d]);
            notrade.observe("residual", v.as_f64(), || {
                let mut w = witness(&s, d, "mu_Y or sigma_Y nonzero at the no-trade control");
                w.u = u0[..d].iter().map(|v| v.as_f64()).collect();
                w
            });
        }
    }
    if no_trade_u.is_none() {
        notrade.fail_with(Witness {
            note: "no control with sigma_Y = 0 found".into(),
            ..Witness::default()
        });
    }

    Ok(AssumptionReport {
        model: model.name.clone(),
        samples: n_samples,
        seed,
        checks: vec![
            regularity.finish(n_samples),
            invert.finish(n_samples),
            hat.finish(n_samples),
            rel.finish(n_samples),
            notrade.finish(n_samples),
            novikov.finish(n_samples),
        ],
    })
}
