use std::fmt::{self, Write as _};
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BoxDomain, GameModel};
use crate::pde::{comparison_check, hex, GridFn};
use crate::sampling::stream_rng;
use crate::scalar::Scalar;
use crate::strategy::{synthesize, StopFamily, Strategy};

use super::adversary::AdversaryPolicy;
use super::path::{simulate_path, PathSpec, SimPath};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `n` at 95% confidence.
pub fn wilson_interval(successes: usize, n: usize) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    Some((lo, hi))
}

/// Path count, step count and master seed of a Monte-Carlo experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

/// Random start `(τ, x, w(τ, x) + offset)` with evaluation at a later `ρ`.
#[derive(Clone)]
pub struct SampledStart<S: Scalar> {
    pub surface: Arc<GridFn<S>>,
    /// Candidate start times `τ`.
    pub times: Vec<S>,
    pub region: BoxDomain<S>,
    pub offset: S,
}

#[derive(Clone)]
pub enum Start<S: Scalar> {
    Fixed(PathSpec<S>),
    Sampled(SampledStart<S>),
}

/// The pathwise event a certification run counts.
#[derive(Clone)]
pub enum Property<S: Scalar> {
    /// `Y(T) ≥ g(X(T)) − slack_tol`.
    Target { slack_tol: S },
    /// `Y(θ) ≥ w(θ, X(θ)) − tol`; paths whose `X(θ)` is not strictly inside the grid are excluded.
    StayAbove { surface: Arc<GridFn<S>>, tol: S },
    /// `Y(θ) < w(θ, X(θ))`; paths whose `X(θ)` is not strictly inside the grid are excluded.
    FallBelow { surface: Arc<GridFn<S>> },
}

impl<S: Scalar> fmt::Display for Property<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Property::Target { slack_tol } => write!(f, "Y(T) >= g(X(T)) - {slack_tol}"),
            Property::StayAbove { surface, tol } => write!(f, "Y(theta) >= {}(theta, X(theta)) - {tol}", surface.label),
            Property::FallBelow { surface } => write!(f, "Y(theta) < {}(theta, X(theta))", surface.label),
        }
    }
}

/// Result of evaluating a property on one path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    /// Signed slack: `Y − g` or `Y − w` at the evaluation time.
    pub metric: f64,
    pub pass: bool,
    pub excluded: bool,
}

/// Reproduces one notable path: rerunning the experiment with the same
/// configuration hash on `(adversary_index, path_index)` yields the same outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub seed: u64,
    pub adversary_index: usize,
    pub path_index: usize,
    pub stream: u64,
    pub config_hash: String,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSummary {
    pub adversary_index: usize,
    pub path_index: usize,
    pub stream: u64,
    pub metric: f64,
    pub pass: bool,
    pub excluded: bool,
    pub clamped_steps: usize,
    pub stop_step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdversaryStats {
    pub adversary: String,
    pub total: usize,
    pub passes: usize,
    pub excluded: usize,
    pub fraction: Option<f64>,
    pub wilson: Option<(f64, f64)>,
    pub mean_metric: Option<f64>,
    pub std_error: Option<f64>,
}

/// Aggregated outcome of a certification run. Excluded paths do not count
/// towards `total`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertReport {
    pub label: String,
    pub property: String,
    pub config_hash: String,
    pub mc: McConfig,
    pub total: usize,
    pub passes: usize,
    pub excluded: usize,
    /// `None` when no path was evaluated.
    pub success_fraction: Option<f64>,
    pub wilson: Option<(f64, f64)>,
    pub mean_slack: Option<f64>,
    pub clamped_paths: usize,
    pub per_adversary: Vec<AdversaryStats>,
    /// Failing paths (or, for `FallBelow`, witness paths), most negative slack first.
    pub certificates: Vec<Certificate>,
    pub paths: Vec<PathSummary>,
}

impl CertReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[{}]", self.label);
        let _ = writeln!(s, "property: {}", self.property);
        let _ = writeln!(s, "config hash: {}", self.config_hash);
        let _ = writeln!(s, "paths: {} per adversary, {} steps, seed {}", self.mc.n_paths, self.mc.n_steps, self.mc.seed);
        let frac = |f: Option<f64>| f.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let ci = |w: Option<(f64, f64)>| w.map_or("undefined".to_string(), |(a, b)| format!("[{a:.6}, {b:.6}]"));
        let _ = writeln!(
            s,
            "overall: {}/{} pass ({} excluded), fraction {}, 95% Wilson {}",
            self.passes,
            self.total,
            self.excluded,
            frac(self.success_fraction),
            ci(self.wilson)
        );
        if let Some(m) = self.mean_slack {
            let _ = writeln!(s, "mean slack: {m:.6e}");
        }
        let _ = writeln!(s, "paths with clamped controls: {}", self.clamped_paths);
        for a in &self.per_adversary {
            let _ = writeln!(
                s,
                "  {}: {}/{} pass ({} excluded), fraction {}, Wilson {}, mean slack {} ± {}",
                a.adversary,
                a.passes,
                a.total,
                a.excluded,
                frac(a.fraction),
                ci(a.wilson),
                a.mean_metric.map_or("-".into(), |v| format!("{v:.4e}")),
                a.std_error.map_or("-".into(), |v| format!("{v:.2e}")),
            );
        }
        for c in &self.certificates {
            let _ = writeln!(
                s,
                "  certificate: seed={} adversary={} path={} stream={} slack={:.6e}",
                c.seed, c.adversary_index, c.path_index, c.stream, c.metric
            );
        }
        s
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "adversary,path,stream,metric,pass,excluded,clamped_steps,stop_step")?;
        for p in &self.paths {
            writeln!(
                w,
                "{},{},{},{:?},{},{},{},{}",
                p.adversary_index, p.path_index, p.stream, p.metric, p.pass as u8, p.excluded as u8, p.clamped_steps, p.stop_step
            )?;
        }
        Ok(())
    }
}

/// A fully specified Monte-Carlo experiment.
#[derive(Clone)]
pub struct Experiment<S: Scalar> {
    pub label: String,
    pub model: GameModel<S>,
    pub strategy: Strategy<S>,
    pub adversaries: Vec<AdversaryPolicy<S>>,
    pub start: Start<S>,
    pub property: Property<S>,
    pub mc: McConfig,
    pub max_certificates: usize,
}

fn strategy_surfaces<S: Scalar>(s: &Strategy<S>, out: &mut Vec<Arc<GridFn<S>>>) {
    match s {
        Strategy::Feedback(f) => out.push(f.surface.clone()),
        Strategy::Constant { .. } => {}
        Strategy::Concat(c) => {
            strategy_surfaces(&c.base, out);
            strategy_surfaces(&c.after, out);
        }
    }
}

fn stream_id(adversary_index: usize, path_index: usize) -> u64 {
    ((adversary_index as u64) << 40) | path_index as u64
}

impl<S: Scalar> Experiment<S> {
    /// SHA-256 over everything that determines the simulated paths and
    /// their evaluation, including the content of every surface involved.
    pub fn config_hash(&self) -> String {
        let mut surfaces = Vec::new();
        strategy_surfaces(&self.strategy, &mut surfaces);
        for a in &self.adversaries {
            if let AdversaryPolicy::Greedy { surface, .. } = a {
                surfaces.push(surface.clone());
            }
        }
        match &self.property {
            Property::StayAbove { surface, .. } | Property::FallBelow { surface } => surfaces.push(surface.clone()),
            Property::Target { .. } => {}
        }
        if let Start::Sampled(s) = &self.start {
            surfaces.push(s.surface.clone());
        }
        let mut text = String::new();
        let m = &self.model;
        let _ = writeln!(text, "label={}", self.label);
        let _ = writeln!(text, "model={} dim={} horizon={:?}", m.name, m.dim, m.horizon.as_f64());
        let _ = writeln!(text, "A={:?}-{:?} U={:?}-{:?} box={:?}-{:?}", m.adverse_set_a.lo, m.adverse_set_a.hi, m.control_set_u.lo, m.control_set_u.hi, m.state_box.lo, m.state_box.hi);
        let _ = writeln!(text, "strategy={}", self.strategy);
        for a in &self.adversaries {
            let _ = writeln!(text, "adversary={a}");
            if let AdversaryPolicy::Scripted(s) = a {
                for row in s.iter() {
                    let _ = writeln!(text, "  {:?}", row.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
                }
            }
        }
        match &self.start {
            Start::Fixed(p) => {
                let _ = writeln!(
                    text,
                    "start=fixed t0={:?} x0={:?} y0={:?} t_end={:?} n_steps={} stop={}",
                    p.t0.as_f64(),
                    p.x0.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                    p.y0.as_f64(),
                    p.t_end.map(|v| v.as_f64()),
                    p.n_steps,
                    p.stop.as_ref().map_or("none".into(), |s| s.to_string())
                );
            }
            Start::Sampled(s) => {
                let _ = writeln!(
                    text,
                    "start=sampled times={:?} region={:?}-{:?} offset={:?}",
                    s.times.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                    s.region.lo,
                    s.region.hi,
                    s.offset.as_f64()
                );
            }
        }
        let _ = writeln!(text, "property={}", self.property);
        let _ = writeln!(text, "mc={:?}", self.mc);
        let mut seen = Vec::new();
        for s in &surfaces {
            let ptr = Arc::as_ptr(s);
            if !seen.contains(&ptr) {
                seen.push(ptr);
                let _ = writeln!(text, "surface {} {}", s.label, s.digest());
            }
        }
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn resolve_start(&self, stream: u64) -> Result<PathSpec<S>> {
        match &self.start {
            Start::Fixed(p) => {
                let mut p = p.clone();
                p.n_steps = self.mc.n_steps;
                Ok(p)
            }
            Start::Sampled(s) => {
                if s.times.is_empty() {
                    return Err(Error::Precondition("sampled start needs at least one start time".into()));
                }
                let mut rng = stream_rng(self.mc.seed, 3 * stream + 2);
                let horizon = self.model.horizon;
                let tau = s.times[rng.random_range(0..s.times.len())];
                let x0: Vec<S> = s
                    .region
                    .lo
                    .iter()
                    .zip(&s.region.hi)
                    .map(|(&l, &h)| l + (h - l) * S::lit(rng.random::<f64>()))
                    .collect();
                let rho = tau + (horizon - tau) * S::lit(rng.random_range(0.25..=1.0));
                let (w, _) = s.surface.value_at(tau, &x0);
                let frac = ((rho - tau) / horizon).as_f64();
                let n_steps = ((self.mc.n_steps as f64 * frac).round() as usize).max(1);
                Ok(PathSpec::new(tau, x0, w + s.offset, n_steps).with_end(rho))
            }
        }
    }

    fn evaluate(&self, path: &SimPath<S>) -> Outcome {
        let at_surface = |surface: &GridFn<S>| {
            let k = path.stop_step();
            let x = path.x_at(k);
            let (w, clamped) = surface.value_at(path.times[k], x);
            let g = &surface.grid;
            let inside = x.iter().enumerate().all(|(i, &v)| v > g.lo[i] && v < g.hi[i]);
            ((path.y[k] - w).as_f64(), clamped || !inside)
        };
        match &self.property {
            Property::Target { slack_tol } => {
                let k = path.last();
                let slack = path.y[k] - self.model.g(path.x_at(k));
                Outcome {
                    metric: slack.as_f64(),
                    pass: slack >= -*slack_tol,
                    excluded: false,
                }
            }
            Property::StayAbove { surface, tol } => {
                let (m, out) = at_surface(surface);
                Outcome {
                    metric: m,
                    pass: m >= -tol.as_f64(),
                    excluded: out,
                }
            }
            Property::FallBelow { surface } => {
                let (m, out) = at_surface(surface);
                Outcome {
                    metric: m,
                    pass: m < 0.0,
                    excluded: out,
                }
            }
        }
    }

    fn run_one(&self, adversary_index: usize, path_index: usize) -> Result<(SimPath<S>, Outcome)> {
        let stream = stream_id(adversary_index, path_index);
        let spec = self.resolve_start(stream)?;
        let path = simulate_path(&self.model, &self.strategy, &self.adversaries[adversary_index], &spec, self.mc.seed, stream)?;
        let o = self.evaluate(&path);
        Ok((path, o))
    }

    pub fn run(&self) -> Result<CertReport> {
        let hash = self.config_hash();
        let n_adv = self.adversaries.len();
        let n = self.mc.n_paths;
        let rows: Vec<PathSummary> = (0..n_adv * n)
            .into_par_iter()
            .map(|i| {
                let (ai, pi) = (i / n, i % n);
                let (path, o) = self.run_one(ai, pi)?;
                Ok(PathSummary {
                    adversary_index: ai,
                    path_index: pi,
                    stream: stream_id(ai, pi),
                    metric: o.metric,
                    pass: o.pass,
                    excluded: o.excluded,
                    clamped_steps: path.clamped_steps(),
                    stop_step: path.stop_step(),
                })
            })
            .collect::<Result<_>>()?;
        let mut per_adversary = Vec::with_capacity(n_adv);
        for (ai, adv) in self.adversaries.iter().enumerate() {
            let mine: Vec<&PathSummary> = rows[ai * n..(ai + 1) * n].iter().filter(|r| !r.excluded).collect();
            let total = mine.len();
            let passes = mine.iter().filter(|r| r.pass).count();
            let (mean, se) = mean_and_se(mine.iter().map(|r| r.metric));
            per_adversary.push(AdversaryStats {
                adversary: adv.to_string(),
                total,
                passes,
                excluded: n - total,
                fraction: (total > 0).then(|| passes as f64 / total as f64),
                wilson: wilson_interval(passes, total),
                mean_metric: mean,
                std_error: se,
            });
        }
        let counted: Vec<&PathSummary> = rows.iter().filter(|r| !r.excluded).collect();
        let total = counted.len();
        let passes = counted.iter().filter(|r| r.pass).count();
        let notable = |r: &&PathSummary| match self.property {
            Property::FallBelow { .. } => r.pass,
            _ => !r.pass,
        };
        let mut certs: Vec<&PathSummary> = counted.iter().copied().filter(notable).collect();
        certs.sort_by(|a, b| a.metric.total_cmp(&b.metric).then(a.stream.cmp(&b.stream)));
        let certificates = certs
            .into_iter()
            .take(self.max_certificates)
            .map(|r| Certificate {
                seed: self.mc.seed,
                adversary_index: r.adversary_index,
                path_index: r.path_index,
                stream: r.stream,
                config_hash: hash.clone(),
                metric: r.metric,
            })
            .collect();
        Ok(CertReport {
            label: self.label.clone(),
            property: self.property.to_string(),
            config_hash: hash,
            mc: self.mc,
            total,
            passes,
            excluded: rows.len() - total,
            success_fraction: (total > 0).then(|| passes as f64 / total as f64),
            wilson: wilson_interval(passes, total),
            mean_slack: mean_and_se(counted.iter().map(|r| r.metric)).0,
            clamped_paths: rows.iter().filter(|r| r.clamped_steps > 0).count(),
            per_adversary,
            certificates,
            paths: rows,
        })
    }

    /// Re-simulates the path named by `cert`. Fails when the certificate was
    /// produced under a different configuration.
    pub fn replay(&self, cert: &Certificate) -> Result<(SimPath<S>, Outcome)> {
        if cert.config_hash != self.config_hash() || cert.seed != self.mc.seed {
            return Err(Error::Precondition("certificate was produced under a different configuration".into()));
        }
        if cert.adversary_index >= self.adversaries.len() || cert.path_index >= self.mc.n_paths {
            return Err(Error::Precondition("certificate indices are out of range".into()));
        }
        self.run_one(cert.adversary_index, cert.path_index)
    }
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) / n).sqrt());
    (Some(mean), se)
}

/// Default terminal slack tolerance `5 · mesh_size · (1 + ‖g‖_∞)`.
pub fn default_slack_tol<S: Scalar>(surface: &GridFn<S>, g_sup: S) -> S {
    S::lit(5.0) * surface.grid.mesh_size() * (S::one() + g_sup)
}

/// Runs `n_paths` per adversary from `(t0, x0, y0)` and counts
/// `Y(T) ≥ g(X(T)) − slack_tol`.
#[allow(clippy::too_many_arguments)]
pub fn certify_target<S: Scalar>(
    model: &GameModel<S>,
    strategy: &Strategy<S>,
    adversaries: &[AdversaryPolicy<S>],
    t0: S,
    x0: &[S],
    y0: S,
    mc: McConfig,
    slack_tol: S,
) -> Result<CertReport> {
    Experiment {
        label: "target".into(),
        model: model.clone(),
        strategy: strategy.clone(),
        adversaries: adversaries.to_vec(),
        start: Start::Fixed(PathSpec::new(t0, x0.to_vec(), y0, mc.n_steps)),
        property: Property::Target { slack_tol },
        mc,
        max_certificates: 16,
    }
    .run()
}

/// Counts `Y(θ) ≥ w(θ, X(θ)) − tol` at the stop rule's first hit (or at
/// the horizon when it never fires) starting strictly above the surface.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp1<S: Scalar>(
    model: &GameModel<S>,
    surface: &Arc<GridFn<S>>,
    strategy: &Strategy<S>,
    adversaries: &[AdversaryPolicy<S>],
    stop: &StopFamily<S>,
    t0: S,
    x0: &[S],
    y0: S,
    mc: McConfig,
    tol: S,
) -> Result<CertReport> {
    let (w0, _) = surface.value_at(t0, x0);
    if !(y0 > w0) {
        return Err(Error::Precondition(format!("start capital {y0} must exceed the surface value {w0}")));
    }
    Experiment {
        label: "dpp1".into(),
        model: model.clone(),
        strategy: strategy.clone(),
        adversaries: adversaries.to_vec(),
        start: Start::Fixed(PathSpec::new(t0, x0.to_vec(), y0, mc.n_steps).with_stop(stop.clone())),
        property: Property::StayAbove { surface: surface.clone(), tol },
        mc,
        max_certificates: 16,
    }
    .run()
}

/// Per-strategy outcome of an adversary search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySearch {
    pub strategy: String,
    /// Adversary with the highest event frequency.
    pub best_adversary: Option<String>,
    pub frequency: Option<f64>,
    pub wilson: Option<(f64, f64)>,
    pub report: CertReport,
}

impl StrategySearch {
    /// The event occurred with positive frequency at 95% confidence.
    pub fn found(&self) -> bool {
        self.wilson.is_some_and(|(lo, _)| lo > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchReport {
    pub label: String,
    pub per_strategy: Vec<StrategySearch>,
}

impl SearchReport {
    /// Every strategy was beaten by some adversary with positive frequency.
    pub fn all_found(&self) -> bool {
        !self.per_strategy.is_empty() && self.per_strategy.iter().all(|s| s.found())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("[{}]\n", self.label);
        for e in &self.per_strategy {
            let _ = writeln!(
                s,
                "strategy {}: best adversary {}, frequency {}, Wilson {:?}, found={}",
                e.strategy,
                e.best_adversary.as_deref().unwrap_or("-"),
                e.frequency.map_or("undefined".into(), |f| format!("{f:.6}")),
                e.wilson,
                e.found()
            );
        }
        s
    }
}

fn search<S: Scalar>(label: &str, base: Experiment<S>, strategies: &[Strategy<S>]) -> Result<SearchReport> {
    let mut per_strategy = Vec::with_capacity(strategies.len());
    for s in strategies {
        let mut e = base.clone();
        e.strategy = s.clone();
        let report = e.run()?;
        let best = report
            .per_adversary
            .iter()
            .filter(|a| a.fraction.is_some())
            .max_by(|a, b| a.fraction.unwrap_or(0.0).total_cmp(&b.fraction.unwrap_or(0.0)));
        per_strategy.push(StrategySearch {
            strategy: s.to_string(),
            best_adversary: best.map(|b| b.adversary.clone()),
            frequency: best.and_then(|b| b.fraction),
            wilson: best.and_then(|b| b.wilson),
            report,
        });
    }
    Ok(SearchReport {
        label: label.into(),
        per_strategy,
    })
}

/// For each strategy, searches the adversaries for paths with
/// `Y(θ) < w(θ, X(θ))` starting below the surface by more than `margin`.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp2<S: Scalar>(
    model: &GameModel<S>,
    surface: &Arc<GridFn<S>>,
    strategies: &[Strategy<S>],
    adversaries: &[AdversaryPolicy<S>],
    stop: &StopFamily<S>,
    t0: S,
    x0: &[S],
    y0: S,
    margin: S,
    mc: McConfig,
) -> Result<SearchReport> {
    let (w0, _) = surface.value_at(t0, x0);
    if !(y0 < w0 - margin) {
        return Err(Error::Precondition(format!("start capital {y0} must lie below the surface value {w0} by more than {margin}")));
    }
    let base = Experiment {
        label: "dpp2".into(),
        model: model.clone(),
        strategy: Strategy::constant(vec![S::zero(); model.dim]),
        adversaries: adversaries.to_vec(),
        start: Start::Fixed(PathSpec::new(t0, x0.to_vec(), y0, mc.n_steps).with_stop(stop.clone())),
        property: Property::FallBelow { surface: surface.clone() },
        mc,
        max_certificates: 16,
    };
    search("dpp2", base, strategies)
}

/// Start-time and region sampling for the statistical solution checks.
#[derive(Clone)]
pub struct StatOptions<S: Scalar> {
    pub times: Vec<S>,
    pub region: BoxDomain<S>,
    /// Distance of the start capital from the surface (above in super mode, below in sub mode).
    pub margin: S,
    /// Tolerance of the super-mode comparison.
    pub tol: S,
}

/// Super mode: starting above `w` at random `(τ, x)` under the strategy
/// synthesized from `w`, counts `Y(ρ) ≥ w(ρ, X(ρ)) − tol` at a later `ρ`.
pub fn check_supersolution_statistically<S: Scalar>(
    model: &GameModel<S>,
    surface: &Arc<GridFn<S>>,
    adversaries: &[AdversaryPolicy<S>],
    opts: &StatOptions<S>,
    mc: McConfig,
) -> Result<CertReport> {
    let strategy = synthesize(surface.clone(), model)?;
    Experiment {
        label: "supersolution".into(),
        model: model.clone(),
        strategy,
        adversaries: adversaries.to_vec(),
        start: Start::Sampled(SampledStart {
            surface: surface.clone(),
            times: opts.times.clone(),
            region: opts.region.clone(),
            offset: opts.margin,
        }),
        property: Property::StayAbove {
            surface: surface.clone(),
            tol: opts.tol,
        },
        mc,
        max_certificates: 16,
    }
    .run()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsolutionReport {
    pub search: SearchReport,
    /// Whether the surface rises above the supplied upper reference somewhere
    /// (`None` when no reference was given).
    pub inconsistent_with_upper: Option<bool>,
}

impl SubsolutionReport {
    pub const CONDITIONING_NOTE: &'static str =
        "conditioning event tested: the full start event {Y(tau) < w(tau, X(tau))}; sub-events are not searched";

    pub fn to_text(&self) -> String {
        let mut s = self.search.to_text();
        let _ = writeln!(s, "{}", Self::CONDITIONING_NOTE);
        match self.inconsistent_with_upper {
            Some(true) if self.search.all_found() => {
                let _ = writeln!(s, "sub-solution property not falsified but the surface exceeds the upper reference: flagged inconsistent");
            }
            Some(true) => {
                let _ = writeln!(s, "surface exceeds the upper reference: flagged inconsistent");
            }
            Some(false) => {
                let _ = writeln!(s, "surface lies below the upper reference");
            }
            None => {}
        }
        s
    }
}

/// Sub mode: for each strategy, searches adversaries for positive-frequency
/// events `Y(ρ) < w(ρ, X(ρ))` from starts `Y(τ) = w(τ, X(τ)) − margin`.
/// With `upper` given, also reports whether `w` rises above it.
pub fn check_subsolution_statistically<S: Scalar>(
    model: &GameModel<S>,
    surface: &Arc<GridFn<S>>,
    strategies: &[Strategy<S>],
    adversaries: &[AdversaryPolicy<S>],
    opts: &StatOptions<S>,
    mc: McConfig,
    upper: Option<&GridFn<S>>,
) -> Result<SubsolutionReport> {
    let base = Experiment {
        label: "subsolution".into(),
        model: model.clone(),
        strategy: Strategy::constant(vec![S::zero(); model.dim]),
        adversaries: adversaries.to_vec(),
        start: Start::Sampled(SampledStart {
            surface: surface.clone(),
            times: opts.times.clone(),
            region: opts.region.clone(),
            offset: -opts.margin,
        }),
        property: Property::FallBelow { surface: surface.clone() },
        mc,
        max_certificates: 16,
    };
    let search = search("subsolution", base, strategies)?;
    let inconsistent_with_upper = match upper {
        None => None,
        Some(u) => Some(match comparison_check(surface, u, opts.tol) {
            Ok(r) => !r.ordered,
            Err(Error::Precondition(_)) => true,
            Err(e) => return Err(e),
        }),
    };
    Ok(SubsolutionReport {
        search,
        inconsistent_with_upper,
    })
}
